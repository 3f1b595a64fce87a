#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace e2r {

// Deterministic RNG with a serializable state. All randomness in the repo
// flows through this class; std::*_distribution is avoided because its
// output is implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, two uniforms consumed per call, no cached second value
    // (keeps the serialized state the complete picture of the sequence).
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // redraw until within 2 stddev
    double trunc_normal(double stddev) {
        double x = normal();
        while (x < -2.0 || x > 2.0) x = normal();
        return x * stddev;
    }

    // uniform integer in [0, n), rejection sampling (no modulo bias)
    int64_t uniform_int(int64_t n) {
        uint64_t un = static_cast<uint64_t>(n);
        uint64_t lim = UINT64_MAX - UINT64_MAX % un;
        uint64_t x = next_u64();
        while (x >= lim) x = next_u64();
        return static_cast<int64_t>(x % un);
    }

    // mt19937_64 state round-trips exactly through its stream operators
    std::string state() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
    }

private:
    std::mt19937_64 gen_;
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// per-record / per-run seed derivation: hash(master, index)
inline uint64_t derive_seed(uint64_t master, uint64_t index) {
    return splitmix64(splitmix64(master) ^ splitmix64(index * 0x9e3779b97f4a7c15ULL + 1));
}

// FNV-1a over raw bytes; used for parameter checksums in logs and tests
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace e2r

// Benchmark comparing the serial reference kernels against the OpenMP
// versions, asserting bit-identical outputs along the way.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "e2r/kernels.hpp"
#include "e2r/rng.hpp"

using e2r::Rng;
namespace kern = e2r::kern;

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

template <typename Fn>
double time_ms(Fn fn, int reps) {
    fn();  // warmup
    double t0 = now_ms();
    for (int i = 0; i < reps; ++i) fn();
    return (now_ms() - t0) / reps;
}

int g_mismatches = 0;

void report(const char* name, const char* size, double serial_ms, double parallel_ms,
            const std::vector<double>& a, const std::vector<double>& b) {
    bool identical = a.size() == b.size() &&
                     std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
    if (!identical) ++g_mismatches;
    std::printf("%-18s %-16s %10.3f %12.3f %8.2fx   %s\n", name, size, serial_ms, parallel_ms,
                serial_ms / parallel_ms, identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    int reps = argc > 1 ? std::atoi(argv[1]) : 20;
    std::printf("threads: %d (E2R_THREADS cap: %d)\n", omp_get_max_threads(),
                kern::max_threads());
    std::printf("%-18s %-16s %10s %12s %9s\n", "kernel", "size", "serial_ms", "parallel_ms",
                "speedup");

    Rng rng(42);
    struct Case {
        int m, k, n;
    };
    for (Case c : {Case{136, 64, 64}, Case{136, 64, 256}, Case{512, 256, 256}}) {
        std::vector<double> a(static_cast<size_t>(c.m) * c.k), b(static_cast<size_t>(c.k) * c.n);
        for (double& v : a) v = rng.normal();
        for (double& v : b) v = rng.normal();
        std::vector<double> cs(static_cast<size_t>(c.m) * c.n), cp(cs.size());
        char size[64];
        std::snprintf(size, sizeof(size), "%dx%dx%d", c.m, c.k, c.n);
        double ts = time_ms([&] { kern::matmul_nn_serial(a.data(), b.data(), cs.data(), c.m, c.k, c.n); }, reps);
        double tp = time_ms([&] { kern::matmul_nn(a.data(), b.data(), cp.data(), c.m, c.k, c.n); }, reps);
        report("matmul_nn", size, ts, tp, cs, cp);

        std::vector<double> bt(static_cast<size_t>(c.n) * c.k);
        for (double& v : bt) v = rng.normal();
        ts = time_ms([&] { kern::matmul_nt_serial(a.data(), bt.data(), cs.data(), c.m, c.k, c.n); }, reps);
        tp = time_ms([&] { kern::matmul_nt(a.data(), bt.data(), cp.data(), c.m, c.k, c.n); }, reps);
        report("matmul_nt", size, ts, tp, cs, cp);

        std::vector<double> dc(static_cast<size_t>(c.m) * c.n);
        for (double& v : dc) v = rng.normal();
        std::vector<double> gs(static_cast<size_t>(c.k) * c.n), gp(gs.size());
        ts = time_ms([&] { kern::matmul_tn_serial(a.data(), dc.data(), gs.data(), c.m, c.k, c.n); }, reps);
        tp = time_ms([&] { kern::matmul_tn(a.data(), dc.data(), gp.data(), c.m, c.k, c.n); }, reps);
        report("matmul_tn", size, ts, tp, gs, gp);
    }

    {
        int ih = 64, iw = 64, ic = 8, oc = 16;
        std::vector<double> in(static_cast<size_t>(ih) * iw * ic),
            w(static_cast<size_t>(oc) * ic * 9), bias(static_cast<size_t>(oc));
        for (double& v : in) v = rng.normal();
        for (double& v : w) v = rng.normal(0, 0.2);
        for (double& v : bias) v = rng.normal(0, 0.1);
        int oh = (ih + 1) / 2, ow = (iw + 1) / 2;
        std::vector<double> os(static_cast<size_t>(oh) * ow * oc), op(os.size());
        double ts = time_ms(
            [&] { kern::conv3x3_s2_tanh_serial(in.data(), w.data(), bias.data(), os.data(), ih, iw, ic, oc); },
            reps);
        double tp = time_ms(
            [&] { kern::conv3x3_s2_tanh(in.data(), w.data(), bias.data(), op.data(), ih, iw, ic, oc); },
            reps);
        report("conv3x3_s2_tanh", "64x64x8->16", ts, tp, os, op);
    }

    {
        int n = 256, m = 256, dim = 64;
        std::vector<double> xs(static_cast<size_t>(n) * dim), ys(static_cast<size_t>(m) * dim);
        for (double& v : xs) v = rng.normal();
        for (double& v : ys) v = rng.normal();
        std::vector<double> os(static_cast<size_t>(n) * m), op(os.size());
        double ts = time_ms(
            [&] { kern::pairwise_sqdist_serial(xs.data(), n, ys.data(), m, dim, os.data()); }, reps);
        double tp =
            time_ms([&] { kern::pairwise_sqdist(xs.data(), n, ys.data(), m, dim, op.data()); }, reps);
        report("pairwise_sqdist", "256x256x64", ts, tp, os, op);
    }

    if (g_mismatches > 0) {
        std::printf("\n%d kernel(s) diverged from the serial reference\n", g_mismatches);
        return 1;
    }
    return 0;
}

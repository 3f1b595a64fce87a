#pragma once

// shared helpers for the test and acceptance binaries

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace testutil {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// regularized incomplete gamma P(s, x), series for x < s+1, continued
// fraction otherwise
inline double gamma_p(double s, double x) {
    if (x < 0 || s <= 0) return 0.0;
    if (x == 0) return 0.0;
    double lg = std::lgamma(s);
    if (x < s + 1.0) {
        double sum = 1.0 / s, term = sum, ap = s;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if (std::abs(term) < std::abs(sum) * 1e-15) break;
        }
        return sum * std::exp(-x + s * std::log(x) - lg);
    }
    // Lentz continued fraction for Q
    double b = x + 1.0 - s, c = 1e300, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        double an = -i * (i - s);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::abs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    double q = std::exp(-x + s * std::log(x) - lg) * h;
    return 1.0 - q;
}

// upper tail of the chi-square distribution with dof degrees of freedom
inline double chi2_pvalue(double chi2, int dof) {
    return 1.0 - gamma_p(0.5 * dof, 0.5 * chi2);
}

// chi-square test of samples in (0,1) against the logit-normal(mu, sigma)
// law over `bins` equal-width bins
inline double logit_normal_chi2_pvalue(const std::vector<double>& samples, int bins,
                                       double mu = 0.0, double sigma = 1.0) {
    std::vector<int> observed(static_cast<size_t>(bins), 0);
    for (double t : samples) {
        int b = static_cast<int>(t * bins);
        if (b < 0) b = 0;
        if (b >= bins) b = bins - 1;
        observed[static_cast<size_t>(b)]++;
    }
    auto cdf = [&](double t) {
        if (t <= 0) return 0.0;
        if (t >= 1) return 1.0;
        double n = std::log(t / (1.0 - t));
        return normal_cdf((n - mu) / sigma);
    };
    double chi2 = 0.0;
    double total = static_cast<double>(samples.size());
    for (int b = 0; b < bins; ++b) {
        double p = cdf(static_cast<double>(b + 1) / bins) - cdf(static_cast<double>(b) / bins);
        double expected = total * p;
        double d = observed[static_cast<size_t>(b)] - expected;
        chi2 += d * d / expected;
    }
    return chi2_pvalue(chi2, bins - 1);
}

// unique scratch directory under the system temp dir, removed on destruction
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 gen{std::random_device{}()};
        path_ = (std::filesystem::temp_directory_path() /
                 (tag + "_" + std::to_string(gen())))
                    .string();
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::string& path() const { return path_; }
    std::string file(const std::string& name) const {
        return (std::filesystem::path(path_) / name).string();
    }

private:
    std::string path_;
};

inline std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace testutil

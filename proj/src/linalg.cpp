#include "e2r/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "e2r/kernels.hpp"

namespace e2r::linalg {

void sym_eig(const std::vector<double>& a, int n, std::vector<double>& eigvals,
             std::vector<double>& eigvecs) {
    std::vector<double> m = a;  // symmetrize against caller rounding
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double s = 0.5 * (m[static_cast<size_t>(i) * n + j] + m[static_cast<size_t>(j) * n + i]);
            m[static_cast<size_t>(i) * n + j] = s;
            m[static_cast<size_t>(j) * n + i] = s;
        }
    eigvecs.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) eigvecs[static_cast<size_t>(i) * n + i] = 1.0;

    auto off_norm = [&]() {
        double s = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) {
                double v = m[static_cast<size_t>(i) * n + j];
                s += v * v;
            }
        return std::sqrt(2.0 * s);
    };
    double scale = 0.0;
    for (double v : m) scale = std::max(scale, std::abs(v));
    const double tol = std::max(1e-300, 1e-14 * std::max(1.0, scale));

    for (int sweep = 0; sweep < 100 && off_norm() > tol; ++sweep) {
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double apq = m[static_cast<size_t>(p) * n + q];
                if (std::abs(apq) <= 1e-300) continue;
                double app = m[static_cast<size_t>(p) * n + p];
                double aqq = m[static_cast<size_t>(q) * n + q];
                double theta = (aqq - app) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < n; ++k) {
                    double mkp = m[static_cast<size_t>(k) * n + p];
                    double mkq = m[static_cast<size_t>(k) * n + q];
                    m[static_cast<size_t>(k) * n + p] = c * mkp - s * mkq;
                    m[static_cast<size_t>(k) * n + q] = s * mkp + c * mkq;
                }
                for (int k = 0; k < n; ++k) {
                    double mpk = m[static_cast<size_t>(p) * n + k];
                    double mqk = m[static_cast<size_t>(q) * n + k];
                    m[static_cast<size_t>(p) * n + k] = c * mpk - s * mqk;
                    m[static_cast<size_t>(q) * n + k] = s * mpk + c * mqk;
                }
                for (int k = 0; k < n; ++k) {
                    double vkp = eigvecs[static_cast<size_t>(k) * n + p];
                    double vkq = eigvecs[static_cast<size_t>(k) * n + q];
                    eigvecs[static_cast<size_t>(k) * n + p] = c * vkp - s * vkq;
                    eigvecs[static_cast<size_t>(k) * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    eigvals.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) eigvals[static_cast<size_t>(i)] = m[static_cast<size_t>(i) * n + i];
}

std::vector<double> sym_sqrt_psd(const std::vector<double>& a, int n) {
    std::vector<double> vals, vecs;
    sym_eig(a, n, vals, vecs);
    double mx = 0.0;
    for (double v : vals) mx = std::max(mx, std::abs(v));
    // negative eigenvalues are clipped; so is the rounding noise around zero
    // on rank-deficient inputs, whose square roots would otherwise inflate
    // the result
    double tol = mx * 1e-12;
    for (double& v : vals) v = v > tol ? std::sqrt(v) : 0.0;
    // V diag(sqrt) V^T
    std::vector<double> tmp(static_cast<size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            tmp[static_cast<size_t>(i) * n + j] =
                vecs[static_cast<size_t>(i) * n + j] * vals[static_cast<size_t>(j)];
    std::vector<double> out(static_cast<size_t>(n) * n);
    kern::matmul_nt(tmp.data(), vecs.data(), out.data(), n, n, n);
    return out;
}

std::vector<double> singular_values(const std::vector<double>& a, int rows, int cols) {
    // eigenvalues of the smaller gram matrix
    int n = std::min(rows, cols);
    std::vector<double> gram(static_cast<size_t>(n) * n);
    if (cols <= rows)
        kern::matmul_tn(a.data(), a.data(), gram.data(), rows, cols, cols);  // A^T A
    else
        kern::matmul_nt(a.data(), a.data(), gram.data(), rows, cols, rows);  // A A^T
    std::vector<double> vals, vecs;
    sym_eig(gram, n, vals, vecs);
    for (double& v : vals) v = v > 0 ? std::sqrt(v) : 0.0;
    std::sort(vals.begin(), vals.end(), std::greater<double>());
    return vals;
}

double trace(const std::vector<double>& a, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[static_cast<size_t>(i) * n + i];
    return s;
}

}  // namespace e2r::linalg

#include "e2r/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>

namespace e2r::kern {

namespace {

int g_max_threads = -1;  // -1 = uninitialized

int env_threads() {
    const char* s = std::getenv("E2R_THREADS");
    if (s == nullptr) return 0;
    int v = std::atoi(s);
    return v > 0 ? v : 0;
}

int threads_for(int64_t work_rows) {
    int cap = max_threads();
    int t = cap > 0 ? cap : omp_get_max_threads();
    return static_cast<int>(std::min<int64_t>(t, std::max<int64_t>(1, work_rows)));
}

// problems below this many multiply-adds are not worth a parallel region
constexpr int64_t kParallelMinFlops = 16 * 1024;

}  // namespace

int max_threads() {
    if (g_max_threads < 0) g_max_threads = env_threads();
    return g_max_threads;
}

void set_max_threads(int n) { g_max_threads = n < 0 ? 0 : n; }

void matmul_nn_rows(const double* a, const double* b, double* c,
                    int m, int k, int n, int r0, int r1, bool accumulate) {
    (void)m;
    for (int i = r0; i < r1; ++i) {
        double* ci = c + static_cast<int64_t>(i) * n;
        if (!accumulate) std::memset(ci, 0, sizeof(double) * n);
        const double* ai = a + static_cast<int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_nt_rows(const double* a, const double* b, double* c,
                    int m, int k, int n, int r0, int r1, bool accumulate) {
    (void)m;
    for (int i = r0; i < r1; ++i) {
        const double* ai = a + static_cast<int64_t>(i) * k;
        double* ci = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + static_cast<int64_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] = accumulate ? ci[j] + s : s;
        }
    }
}

void matmul_tn_rows(const double* a, const double* b, double* c,
                    int m, int k, int n, int r0, int r1, bool accumulate) {
    for (int p = r0; p < r1; ++p) {
        double* cp = c + static_cast<int64_t>(p) * n;
        if (!accumulate) std::memset(cp, 0, sizeof(double) * n);
        for (int i = 0; i < m; ++i) {
            const double av = a[static_cast<int64_t>(i) * k + p];
            const double* bi = b + static_cast<int64_t>(i) * n;
            for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
        }
    }
}

void matmul_nn_serial(const double* a, const double* b, double* c,
                      int m, int k, int n, bool accumulate) {
    matmul_nn_rows(a, b, c, m, k, n, 0, m, accumulate);
}

void matmul_nt_serial(const double* a, const double* b, double* c,
                      int m, int k, int n, bool accumulate) {
    matmul_nt_rows(a, b, c, m, k, n, 0, m, accumulate);
}

void matmul_tn_serial(const double* a, const double* b, double* c,
                      int m, int k, int n, bool accumulate) {
    matmul_tn_rows(a, b, c, m, k, n, 0, k, accumulate);
}

namespace {

template <typename RowFn>
void run_rows(int rows, int64_t flops, RowFn fn) {
    int nt = threads_for(rows);
    if (nt <= 1 || flops < kParallelMinFlops) {
        fn(0, rows);
        return;
    }
#pragma omp parallel num_threads(nt)
    {
        int tid = omp_get_thread_num();
        int nth = omp_get_num_threads();
        int chunk = (rows + nth - 1) / nth;
        int lo = std::min(rows, tid * chunk);
        int hi = std::min(rows, lo + chunk);
        if (lo < hi) fn(lo, hi);
    }
}

}  // namespace

void matmul_nn(const double* a, const double* b, double* c,
               int m, int k, int n, bool accumulate) {
    run_rows(m, static_cast<int64_t>(m) * k * n, [&](int lo, int hi) {
        matmul_nn_rows(a, b, c, m, k, n, lo, hi, accumulate);
    });
}

void matmul_nt(const double* a, const double* b, double* c,
               int m, int k, int n, bool accumulate) {
    run_rows(m, static_cast<int64_t>(m) * k * n, [&](int lo, int hi) {
        matmul_nt_rows(a, b, c, m, k, n, lo, hi, accumulate);
    });
}

void matmul_tn(const double* a, const double* b, double* c,
               int m, int k, int n, bool accumulate) {
    run_rows(k, static_cast<int64_t>(m) * k * n, [&](int lo, int hi) {
        matmul_tn_rows(a, b, c, m, k, n, lo, hi, accumulate);
    });
}

void conv3x3_s2_tanh_rows(const double* in, const double* w, const double* bias,
                          double* out, int ih, int iw, int ic, int oc,
                          int r0, int r1) {
    const int ow = (iw + 1) / 2;
    for (int oy = r0; oy < r1; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            double* o = out + (static_cast<int64_t>(oy) * ow + ox) * oc;
            for (int f = 0; f < oc; ++f) {
                double s = bias != nullptr ? bias[f] : 0.0;
                const double* wf = w + static_cast<int64_t>(f) * ic * 9;
                for (int c = 0; c < ic; ++c) {
                    for (int ky = 0; ky < 3; ++ky) {
                        int y = 2 * oy + ky - 1;
                        if (y < 0 || y >= ih) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            int x = 2 * ox + kx - 1;
                            if (x < 0 || x >= iw) continue;
                            s += wf[c * 9 + ky * 3 + kx] *
                                 in[(static_cast<int64_t>(y) * iw + x) * ic + c];
                        }
                    }
                }
                o[f] = std::tanh(s);
            }
        }
    }
}

void conv3x3_s2_tanh_serial(const double* in, const double* w, const double* bias,
                            double* out, int ih, int iw, int ic, int oc) {
    conv3x3_s2_tanh_rows(in, w, bias, out, ih, iw, ic, oc, 0, (ih + 1) / 2);
}

void conv3x3_s2_tanh(const double* in, const double* w, const double* bias,
                     double* out, int ih, int iw, int ic, int oc) {
    const int oh = (ih + 1) / 2;
    const int64_t flops = static_cast<int64_t>(oh) * ((iw + 1) / 2) * oc * ic * 9;
    run_rows(oh, flops, [&](int lo, int hi) {
        conv3x3_s2_tanh_rows(in, w, bias, out, ih, iw, ic, oc, lo, hi);
    });
}

void pairwise_sqdist_rows(const double* xs, int n, const double* ys, int m,
                          int dim, double* out, int r0, int r1) {
    (void)n;
    for (int i = r0; i < r1; ++i) {
        const double* xi = xs + static_cast<int64_t>(i) * dim;
        double* oi = out + static_cast<int64_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const double* yj = ys + static_cast<int64_t>(j) * dim;
            double s = 0.0;
            for (int d = 0; d < dim; ++d) {
                double t = xi[d] - yj[d];
                s += t * t;
            }
            oi[j] = s;
        }
    }
}

void pairwise_sqdist_serial(const double* xs, int n, const double* ys, int m,
                            int dim, double* out) {
    pairwise_sqdist_rows(xs, n, ys, m, dim, out, 0, n);
}

void pairwise_sqdist(const double* xs, int n, const double* ys, int m,
                     int dim, double* out) {
    run_rows(n, static_cast<int64_t>(n) * m * dim, [&](int lo, int hi) {
        pairwise_sqdist_rows(xs, n, ys, m, dim, out, lo, hi);
    });
}

}  // namespace e2r::kern

#pragma once

#include <cstdint>

namespace e2r::kern {

// Thread cap for all parallel kernels. 0 = OpenMP default. Initialized from
// the E2R_THREADS environment variable on first use.
int max_threads();
void set_max_threads(int n);

// Row-range bodies shared by the serial and parallel entry points. A given
// output row is always produced by exactly the same arithmetic sequence, so
// the parallel kernels are bit-identical to the serial references for any
// thread count.

// c[m x n] (+)= a[m x k] * b[k x n]
void matmul_nn_rows(const double* a, const double* b, double* c,
                    int m, int k, int n, int r0, int r1, bool accumulate);
// c[m x n] (+)= a[m x k] * b[n x k]^T
void matmul_nt_rows(const double* a, const double* b, double* c,
                    int m, int k, int n, int r0, int r1, bool accumulate);
// c[k x n] (+)= a[m x k]^T * b[m x n]   (rows of c indexed by k)
void matmul_tn_rows(const double* a, const double* b, double* c,
                    int m, int k, int n, int r0, int r1, bool accumulate);

// Serial references (kept for tests and the benchmark).
void matmul_nn_serial(const double* a, const double* b, double* c,
                      int m, int k, int n, bool accumulate = false);
void matmul_nt_serial(const double* a, const double* b, double* c,
                      int m, int k, int n, bool accumulate = false);
void matmul_tn_serial(const double* a, const double* b, double* c,
                      int m, int k, int n, bool accumulate = false);

// Parallel entry points; fall back to the serial path for small problems.
void matmul_nn(const double* a, const double* b, double* c,
               int m, int k, int n, bool accumulate = false);
void matmul_nt(const double* a, const double* b, double* c,
               int m, int k, int n, bool accumulate = false);
void matmul_tn(const double* a, const double* b, double* c,
               int m, int k, int n, bool accumulate = false);

// 3x3 convolution, stride 2, zero padding 1, tanh nonlinearity.
// in:  [ih x iw x ic], w: [oc x ic x 3 x 3], bias: [oc] or null,
// out: [oh x ow x oc] with oh = (ih+1)/2, ow = (iw+1)/2.
void conv3x3_s2_tanh_rows(const double* in, const double* w, const double* bias,
                          double* out, int ih, int iw, int ic, int oc,
                          int r0, int r1);
void conv3x3_s2_tanh_serial(const double* in, const double* w, const double* bias,
                            double* out, int ih, int iw, int ic, int oc);
void conv3x3_s2_tanh(const double* in, const double* w, const double* bias,
                     double* out, int ih, int iw, int ic, int oc);

// All pairwise squared euclidean distances: out[i*m + j] = ||x_i - y_j||^2
void pairwise_sqdist_rows(const double* xs, int n, const double* ys, int m,
                          int dim, double* out, int r0, int r1);
void pairwise_sqdist_serial(const double* xs, int n, const double* ys, int m,
                            int dim, double* out);
void pairwise_sqdist(const double* xs, int n, const double* ys, int m,
                     int dim, double* out);

}  // namespace e2r::kern

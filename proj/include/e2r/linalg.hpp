#pragma once

#include <vector>

namespace e2r::linalg {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n x n).
// On return: eigvals[j] with matching eigenvector in column j of eigvecs
// (row-major n x n), A v_j = lambda_j v_j. Deterministic sweep order.
void sym_eig(const std::vector<double>& a, int n, std::vector<double>& eigvals,
             std::vector<double>& eigvecs);

// PSD square root via eigendecomposition; negative eigenvalues clipped at 0
std::vector<double> sym_sqrt_psd(const std::vector<double>& a, int n);

// singular values of an arbitrary rows x cols matrix, descending
std::vector<double> singular_values(const std::vector<double>& a, int rows, int cols);

double trace(const std::vector<double>& a, int n);

}  // namespace e2r::linalg

#pragma once

#include "dcd/tensor.hpp"

namespace dcd {

// Standard product of a [m x k] and b [k x n]. Each entry is accumulated
// left-to-right over k starting from zero.
Tensor matmul(const Tensor& a, const Tensor& b);

// Tucker n-mode product t x_mode m, with `mode` 1-based. m has shape
// [p x t.dim(mode-1)]; the result replaces that extent by p. Works for any
// tensor rank (a leading batch axis is just another mode).
Tensor mode_n_product(const Tensor& t, const Tensor& m, std::size_t mode);

struct SvdResult {
  Tensor u;  // [r x p], orthonormal columns, p = min(r, c)
  Tensor s;  // [p], non-negative, descending
  Tensor v;  // [c x p], orthonormal columns
  int sweeps = 0;
};

struct SvdOptions {
  double tolerance = 1e-12;  // on the normalized off-diagonal mass of each column pair
  int max_sweeps = 60;
};

// One-sided Jacobi SVD. Throws NumericError if not converged within
// `max_sweeps`. Zero singular values get arbitrary orthonormal completions.
SvdResult svd(const Tensor& m, const SvdOptions& options = {});

// u * diag(s) * v^T
Tensor svd_reconstruct(const SvdResult& r);

// Number of singular values strictly greater than `tol`.
std::size_t numerical_rank(const Tensor& m, double tol);

}  // namespace dcd

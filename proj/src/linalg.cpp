#include "dcd/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dcd/kernels.hpp"

namespace dcd {

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner extents differ, " + to_string(a.shape()) + " * " +
                     to_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  kernels::omp::gemm(a.dim(0), a.dim(1), b.dim(1), a.values(), b.values(), c.values());
  check_finite(c, "matmul");
  return c;
}

Tensor mode_n_product(const Tensor& t, const Tensor& m, std::size_t mode) {
  require_rank(m, 2, "mode_n_product");
  if (mode < 1 || mode > t.rank()) {
    throw ShapeError("mode_n_product: mode " + std::to_string(mode) + " out of range for " +
                     to_string(t.shape()));
  }
  const std::size_t axis = mode - 1;
  const std::size_t d = t.dim(axis);
  if (m.dim(1) != d) {
    throw ShapeError("mode_n_product: matrix " + to_string(m.shape()) + " does not match extent " +
                     std::to_string(d) + " of mode " + std::to_string(mode));
  }
  const std::size_t p = m.dim(0);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= t.dim(i);
  for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.dim(i);

  Shape out_shape = t.shape();
  out_shape[axis] = p;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    const double* tb = t.data() + o * d * inner;
    double* ob = out.data() + o * p * inner;
    for (std::size_t a = 0; a < p; ++a) {
      double* orow = ob + a * inner;
      for (std::size_t j = 0; j < d; ++j) {
        const double mv = m(a, j);
        const double* trow = tb + j * inner;
        for (std::size_t i = 0; i < inner; ++i) orow[i] += mv * trow[i];
      }
    }
  }
  check_finite(out, "mode_n_product");
  return out;
}

namespace {

// Hestenes one-sided Jacobi on a tall (r >= c) matrix.
SvdResult svd_tall(const Tensor& a, const SvdOptions& opt) {
  const std::size_t r = a.dim(0), c = a.dim(1);
  // Work on columns stored contiguously: w[j] is column j of A.
  std::vector<std::vector<double>> w(c, std::vector<double>(r));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) w[j][i] = a(i, j);
  std::vector<std::vector<double>> v(c, std::vector<double>(c, 0.0));
  for (std::size_t j = 0; j < c; ++j) v[j][j] = 1.0;

  int sweep = 0;
  bool converged = c < 2;
  while (!converged) {
    if (sweep >= opt.max_sweeps) {
      throw NumericError("svd: no convergence after " + std::to_string(opt.max_sweeps) +
                         " sweeps");
    }
    ++sweep;
    converged = true;
    for (std::size_t p = 0; p + 1 < c; ++p) {
      for (std::size_t q = p + 1; q < c; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < r; ++i) {
          alpha += w[p][i] * w[p][i];
          beta += w[q][i] * w[q][i];
          gamma += w[p][i] * w[q][i];
        }
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= opt.tolerance * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double tn = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + tn * tn);
        const double sn = cs * tn;
        for (std::size_t i = 0; i < r; ++i) {
          const double wp = w[p][i], wq = w[q][i];
          w[p][i] = cs * wp - sn * wq;
          w[q][i] = sn * wp + cs * wq;
        }
        for (std::size_t i = 0; i < c; ++i) {
          const double vp = v[p][i], vq = v[q][i];
          v[p][i] = cs * vp - sn * vq;
          v[q][i] = sn * vp + cs * vq;
        }
      }
    }
  }

  std::vector<double> sigma(c);
  for (std::size_t j = 0; j < c; ++j) {
    double s = 0.0;
    for (double x : w[j]) s += x * x;
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SvdResult res;
  res.sweeps = sweep;
  res.u = Tensor({r, c});
  res.s = Tensor({c});
  res.v = Tensor({c, c});
  const double smax = c ? sigma[order[0]] : 0.0;
  const double zero_tol = std::max(smax, 1.0) * 1e-14 * static_cast<double>(std::max(r, c));
  std::vector<bool> filled(c, false);
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t j = order[k];
    for (std::size_t i = 0; i < c; ++i) res.v(i, k) = v[j][i];
    if (sigma[j] > zero_tol) {
      res.s[k] = sigma[j];
      for (std::size_t i = 0; i < r; ++i) res.u(i, k) = w[j][i] / sigma[j];
      filled[k] = true;
    }
  }
  // Complete the left basis for (numerically) zero singular values with
  // Gram-Schmidt over the standard basis.
  for (std::size_t k = 0; k < c; ++k) {
    if (filled[k]) continue;
    for (std::size_t e = 0; e < r; ++e) {
      std::vector<double> cand(r, 0.0);
      cand[e] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t o = 0; o < c; ++o) {
          if (!filled[o]) continue;
          double dot = 0.0;
          for (std::size_t i = 0; i < r; ++i) dot += res.u(i, o) * cand[i];
          for (std::size_t i = 0; i < r; ++i) cand[i] -= dot * res.u(i, o);
        }
      }
      double nrm = 0.0;
      for (double x : cand) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm > 1e-6) {
        for (std::size_t i = 0; i < r; ++i) res.u(i, k) = cand[i] / nrm;
        filled[k] = true;
        break;
      }
    }
  }
  return res;
}

}  // namespace

SvdResult svd(const Tensor& m, const SvdOptions& options) {
  require_rank(m, 2, "svd");
  check_finite(m, "svd");
  if (m.dim(0) >= m.dim(1)) return svd_tall(m, options);
  SvdResult t = svd_tall(transpose(m), options);
  std::swap(t.u, t.v);
  return t;
}

Tensor svd_reconstruct(const SvdResult& r) { return matmul(diag_right(r.u, r.s), transpose(r.v)); }

std::size_t numerical_rank(const Tensor& m, double tol) {
  const auto r = svd(m);
  std::size_t k = 0;
  for (double s : r.s.values())
    if (s > tol) ++k;
  return k;
}

}  // namespace dcd

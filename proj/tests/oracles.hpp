#pragma once

// Independent reference computations for tests. Deliberately naive: no shared
// code with the library beyond the Tensor container.

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstddef>
#include <utility>
#include <vector>

#include "dcd/rng.hpp"
#include "dcd/tensor.hpp"

namespace oracle {

using dcd::Tensor;

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  Tensor t({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < a.dim(1); ++j) t(j, i) = a(i, j);
  return t;
}

// Direct cross-correlation with zero padding and groups.
inline Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad,
                     std::size_t groups = 1) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), cig = w.dim(1), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  const std::size_t cog = co / groups;
  (void)ci;
  Tensor y({n, co, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double s = 0.0;
          const std::size_t g = o / cog;
          for (std::size_t c = 0; c < cig; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long q = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(wd)) continue;
                s += x.at({b, g * cig + c, static_cast<std::size_t>(r), static_cast<std::size_t>(q)}) *
                     w.at({o, c, u, v});
              }
          y.at({b, o, i, j}) = s;
        }
  return y;
}

// Per-sample convolution: sample b uses w[b].
inline Tensor conv2d_per_sample(const Tensor& x, const Tensor& w, std::size_t stride,
                                std::size_t pad, std::size_t groups = 1) {
  const std::size_t n = x.dim(0);
  Tensor out;
  std::vector<double> all;
  dcd::Shape shape;
  for (std::size_t b = 0; b < n; ++b) {
    Tensor xb({1, x.dim(1), x.dim(2), x.dim(3)});
    std::copy(x.data() + b * xb.size(), x.data() + (b + 1) * xb.size(), xb.data());
    dcd::Shape ws(w.shape().begin() + 1, w.shape().end());
    Tensor wb(ws);
    std::copy(w.data() + b * wb.size(), w.data() + (b + 1) * wb.size(), wb.data());
    Tensor yb = conv2d(xb, wb, stride, pad, groups);
    shape = yb.shape();
    all.insert(all.end(), yb.data(), yb.data() + yb.size());
  }
  shape[0] = n;
  return Tensor(shape, all);
}

// Mode-n product through explicit unfolding: move `mode` to the front,
// flatten the rest, left-multiply, fold back.
inline Tensor mode_product_unfold(const Tensor& t, const Tensor& m, std::size_t mode) {
  const std::size_t axis = mode - 1, r = t.rank();
  std::vector<std::size_t> perm{axis};
  for (std::size_t i = 0; i < r; ++i)
    if (i != axis) perm.push_back(i);
  Tensor moved = dcd::permute(t, perm);
  const std::size_t d = t.dim(axis), rest = t.size() / d;
  Tensor unfolded = moved.reshaped({d, rest});
  Tensor prod = oracle::matmul(m, unfolded);
  dcd::Shape folded{m.dim(0)};
  for (std::size_t i = 1; i < r; ++i) folded.push_back(moved.dim(i));
  Tensor back = prod.reshaped(folded);
  std::vector<std::size_t> inv(r);
  for (std::size_t i = 0; i < r; ++i) inv[perm[i]] = i;
  return dcd::permute(back, inv);
}

// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
inline std::vector<double> symmetric_eigenvalues(Tensor a) {
  const std::size_t n = a.dim(0);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) off += a(i, j) * a(i, j);
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Two-pass population variance.
inline double variance(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size());
}

inline Tensor random(dcd::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  dcd::Rng rng(seed);
  return rng.uniform_tensor(std::move(shape), lo, hi);
}

}  // namespace oracle

#include "dcd/decomposition.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dcd/linalg.hpp"
#include "dcd/ops.hpp"
#include "dcd/rng.hpp"

namespace dcd {

namespace {

Tensor slice_columns(const Tensor& m, std::size_t begin, std::size_t count) {
  const std::size_t rows = m.dim(0);
  Tensor out({rows, count});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = m(i, begin + j);
  return out;
}

Tensor slice_range(const Tensor& s, std::size_t begin, std::size_t count) {
  Tensor out({count});
  for (std::size_t j = 0; j < count; ++j) out[j] = s[begin + j];
  return out;
}

void check_decomposed(const DecomposedResidual& d) {
  if (d.k == 0) throw ShapeError("decomposed residual has no kernels");
  require_rank(d.w0, 2, "decomposed w0");
  const std::size_t terms = d.s.size();
  if (terms % d.k != 0) throw ShapeError("decomposed residual: singular values not a multiple of K");
  require_shape(d.u, {d.w0.dim(0), terms}, "decomposed u");
  require_shape(d.v, {d.w0.dim(1), terms}, "decomposed v");
}

}  // namespace

Tensor DecomposedResidual::residual(std::size_t i) const {
  const std::size_t p = rank_per_kernel();
  if (i >= k) throw ShapeError("kernel index out of range");
  const Tensor ui = diag_right(slice_columns(u, i * p, p), slice_range(s, i * p, p));
  return matmul(ui, transpose(slice_columns(v, i * p, p)));
}

Tensor DecomposedResidual::kernel(std::size_t i) const { return add(w0, residual(i)); }

DecomposedResidual residual_decompose(std::span<const Tensor> kernels) {
  if (kernels.empty()) throw ShapeError("residual_decompose: need at least one kernel");
  const Shape shape = kernels.front().shape();
  if (shape.size() != 2) throw ShapeError("residual_decompose: kernels must be matrices");
  for (const Tensor& w : kernels) {
    require_shape(w, shape, "residual_decompose kernel");
    check_finite(w, "residual_decompose");
  }
  const std::size_t k = kernels.size();
  const std::size_t co = shape[0], ci = shape[1], p = std::min(co, ci);

  DecomposedResidual d;
  d.k = k;
  d.w0 = Tensor(shape);
  for (const Tensor& w : kernels) d.w0 = add(d.w0, w);
  d.w0 = scale(d.w0, 1.0 / static_cast<double>(k));

  d.u = Tensor({co, k * p});
  d.s = Tensor({k * p});
  d.v = Tensor({ci, k * p});
  for (std::size_t i = 0; i < k; ++i) {
    const SvdResult r = svd(sub(kernels[i], d.w0));
    for (std::size_t j = 0; j < p; ++j) {
      d.s[i * p + j] = r.s[j];
      for (std::size_t a = 0; a < co; ++a) d.u(a, i * p + j) = r.u(a, j);
      for (std::size_t b = 0; b < ci; ++b) d.v(b, i * p + j) = r.v(b, j);
    }
  }
  return d;
}

DecomposedResidual residual_decompose(const Tensor& kernels) {
  Shape shape = kernels.shape();
  while (shape.size() > 3 && shape.back() == 1) shape.pop_back();
  if (shape.size() != 3) throw ShapeError("residual_decompose: expected [K, Co, Ci], got " + to_string(kernels.shape()));
  const Tensor bank = kernels.reshaped(shape);
  std::vector<Tensor> list;
  const std::size_t block = shape[1] * shape[2];
  for (std::size_t i = 0; i < shape[0]; ++i) {
    Tensor w({shape[1], shape[2]});
    std::copy_n(bank.data() + i * block, block, w.data());
    list.push_back(std::move(w));
  }
  return residual_decompose(std::span<const Tensor>(list));
}

void require_normalized_attention(const Tensor& attention, double tol) {
  require_rank(attention, 2, "attention");
  check_finite(attention, "attention");
  for (std::size_t n = 0; n < attention.dim(0); ++n) {
    double total = 0.0;
    for (std::size_t j = 0; j < attention.dim(1); ++j) total += attention(n, j);
    if (std::abs(total - 1.0) > tol) {
      std::ostringstream msg;
      msg << "attention row " << n << " sums to " << total << ", expected 1";
      throw Error(msg.str());
    }
  }
}

Tensor aggregate_decomposed(const Tensor& attention, const DecomposedResidual& d) {
  check_decomposed(d);
  require_rank(attention, 2, "attention");
  if (attention.dim(1) != d.k) throw ShapeError("attention width does not match kernel count");
  require_normalized_attention(attention);

  const std::size_t n = attention.dim(0), co = d.w0.dim(0), ci = d.w0.dim(1);
  const std::size_t p = d.rank_per_kernel();
  const Tensor vt = transpose(d.v);
  Tensor out({n, co, ci});
  Tensor weighted({d.s.size()});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < d.s.size(); ++i) weighted[i] = attention(b, i / p) * d.s[i];
    const Tensor w = add(d.w0, matmul(diag_right(d.u, weighted), vt));
    std::copy_n(w.data(), co * ci, out.data() + b * co * ci);
  }
  return out;
}

Tensor rank1_expand(std::span<const double> attention_row, const DecomposedResidual& d) {
  check_decomposed(d);
  if (attention_row.size() != d.k) throw ShapeError("attention row does not match kernel count");
  const std::size_t co = d.w0.dim(0), ci = d.w0.dim(1), p = d.rank_per_kernel();
  Tensor out({co, ci});
  for (std::size_t i = 0; i < d.s.size(); ++i) {
    const double c = attention_row[i / p] * d.s[i];
    for (std::size_t a = 0; a < co; ++a)
      for (std::size_t b = 0; b < ci; ++b) out(a, b) += c * d.u(a, i) * d.v(b, i);
  }
  return out;
}

Tensor fusion_rank1_expand(const Tensor& phi, const Tensor& p, const Tensor& q) {
  require_rank(p, 2, "fusion p");
  require_rank(q, 2, "fusion q");
  const std::size_t l = p.dim(1);
  require_shape(phi, {l, l}, "fusion phi");
  if (q.dim(1) != l) throw ShapeError("fusion q latent width mismatch");
  const std::size_t co = p.dim(0), ci = q.dim(0);
  Tensor out({co, ci});
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) {
      const double c = phi(i, j);
      for (std::size_t a = 0; a < co; ++a)
        for (std::size_t b = 0; b < ci; ++b) out(a, b) += c * p(a, i) * q(b, j);
    }
  return out;
}

std::vector<MechanismRow> compare_aggregation_mechanisms(std::size_t c, std::size_t k,
                                                         std::size_t l, std::size_t trials,
                                                         std::uint64_t seed) {
  if (c == 0 || k == 0 || l == 0 || l > c) throw ConfigError("compare_aggregation_mechanisms: need C >= L >= 1 and K >= 1");
  MechanismRow vanilla{"attention-over-kernels", 0, std::min(c, k * c), k * c, 2 * k * c * c};
  MechanismRow fusion{"dynamic-channel-fusion", 0, l, l * l, 2 * c * l};

  auto rank_of = [](const Tensor& m) {
    return numerical_rank(m, 1e-10 * std::max(1.0, frobenius_norm(m)));
  };
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    std::vector<Tensor> bank;
    for (std::size_t i = 0; i < k; ++i) bank.push_back(rng.uniform_tensor({c, c}, -1.0, 1.0));
    const DecomposedResidual d = residual_decompose(std::span<const Tensor>(bank));
    const Tensor pi = attention_activation(rng.normal_tensor({1, k}), AttentionMode::Softmax, 1.0);
    vanilla.rank = std::max(vanilla.rank, rank_of(rank1_expand(pi.values(), d)));

    const Tensor p = rng.uniform_tensor({c, l}, -1.0, 1.0);
    const Tensor q = rng.uniform_tensor({c, l}, -1.0, 1.0);
    const Tensor phi = rng.normal_tensor({l, l});
    fusion.rank = std::max(fusion.rank, rank_of(matmul(p, matmul(phi, transpose(q)))));
  }
  return {vanilla, fusion};
}

std::string mechanism_csv(const std::vector<MechanismRow>& rows) {
  std::ostringstream out;
  out << "mechanism,rank,term_count,static_params,rank_bound\n";
  for (const auto& r : rows)
    out << r.mechanism << ',' << r.rank << ',' << r.term_count << ',' << r.static_params << ','
        << r.rank_bound << '\n';
  return out.str();
}

}  // namespace dcd

#pragma once

// Static-plus-residual view of a bank of K kernels.
//
// W_k = W0 + U_k S_k V_k^T with W0 the mean kernel, so an attention-weighted
// sum of the bank becomes W0 + U Pi(x) S V^T whenever the attention weights
// sum to one.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dcd/tensor.hpp"

namespace dcd {

struct DecomposedResidual {
  Tensor w0;  // [Co, Ci] mean kernel
  Tensor u;   // [Co, K*p] = [U_1, ..., U_K], p = min(Co, Ci)
  Tensor s;   // [K*p] diagonal of diag(S_1, ..., S_K)
  Tensor v;   // [Ci, K*p] = [V_1, ..., V_K]
  std::size_t k = 0;

  std::size_t rank_per_kernel() const { return k == 0 ? 0 : s.size() / k; }
  // U_i S_i V_i^T
  Tensor residual(std::size_t i) const;
  // W0 + U_i S_i V_i^T
  Tensor kernel(std::size_t i) const;
};

// kernels: K matrices of identical shape [Co, Ci].
DecomposedResidual residual_decompose(std::span<const Tensor> kernels);
// kernels: [K, Co, Ci] (trailing 1x1 spatial axes are accepted and dropped).
DecomposedResidual residual_decompose(const Tensor& kernels);

// Throws unless every row of attention [N, K] sums to 1 within tol.
void require_normalized_attention(const Tensor& attention, double tol = 1e-9);

// Per-sample W0 + U Pi(x) S V^T for attention [N, K]; returns [N, Co, Ci].
Tensor aggregate_decomposed(const Tensor& attention, const DecomposedResidual& d);

// Residual U Pi(x) S V^T for one attention row, summed one rank-1 term
// pi_k u_i s_ii v_i^T at a time (K*p terms).
Tensor rank1_expand(std::span<const double> attention_row, const DecomposedResidual& d);

// P Phi Q^T summed as L*L rank-1 terms phi_ij p_i q_j^T. p [Co, L], q [Ci, L], phi [L, L].
Tensor fusion_rank1_expand(const Tensor& phi, const Tensor& p, const Tensor& q);

struct MechanismRow {
  std::string mechanism;
  std::size_t rank = 0;        // largest residual rank observed over the trials
  std::size_t rank_bound = 0;  // structural upper bound
  std::size_t term_count = 0;  // rank-1 terms in the residual
  std::size_t static_params = 0;  // static residual factors (U,V or P,Q)
};

// Side-by-side of shared attention over unshared bases (K kernels, C channels)
// and shared bases with dynamic channel fusion (latent dim L), measured on
// `trials` random instances each.
std::vector<MechanismRow> compare_aggregation_mechanisms(std::size_t c, std::size_t k,
                                                         std::size_t l, std::size_t trials,
                                                         std::uint64_t seed = 0);

// Columns: mechanism,rank,term_count,static_params,rank_bound
std::string mechanism_csv(const std::vector<MechanismRow>& rows);

}  // namespace dcd

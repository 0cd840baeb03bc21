#include "dcd/equivalence.hpp"

#include <algorithm>

#include "dcd/layers.hpp"
#include "dcd/linalg.hpp"
#include "dcd/ops.hpp"
#include "dcd/rng.hpp"
#include "dcd/train.hpp"

namespace dcd {

namespace {

Tensor slice0(const Tensor& t, std::size_t i) {
  Shape s(t.shape().begin() + 1, t.shape().end());
  Tensor out(s);
  std::copy(t.data() + i * out.size(), t.data() + (i + 1) * out.size(), out.data());
  return out;
}

}  // namespace

std::vector<SuiteResult> run_equivalence(const EquivalenceOptions& opts) {
  if (opts.channels.empty() || opts.kernels.empty()) throw ConfigError("equivalence: empty dimension grid");
  for (std::size_t c : opts.channels)
    if (c == 0) throw ConfigError("equivalence: channel counts must be >= 1");
  for (std::size_t k : opts.kernels)
    if (k == 0) throw ConfigError("equivalence: kernel counts must be >= 1");

  std::vector<SuiteResult> out;
  const std::size_t grid = opts.channels.size() * opts.kernels.size();
  Rng rng(derive_seed(opts.seed, "equivalence"));

  SuiteResult random{"aggregation", "random", 0, 0, 1e-8};
  SuiteResult uniform{"aggregation", "uniform", 0, 0, 1e-12};
  SuiteResult onehot{"aggregation", "one-hot", 0, 0, 1e-12};
  for (std::size_t t = 0; t < opts.trials; ++t) {
    const std::size_t c = opts.channels[t % grid / opts.kernels.size()];
    const std::size_t k = opts.kernels[t % opts.kernels.size()];
    const Tensor bank = rng.uniform_tensor({k, c, c}, -1.0, 1.0);
    const DecomposedResidual d = residual_decompose(bank);
    const Tensor pi = attention_activation(rng.normal_tensor({3, k}, 2.0), AttentionMode::Softmax, 1.0);
    random.max_deviation = std::max(random.max_deviation, max_abs_diff(vanilla_weight(pi, bank), aggregate_decomposed(pi, d)));
    ++random.instances;

    Tensor u({1, k});
    u.fill(1.0 / static_cast<double>(k));
    Tensor mean({c, c});
    for (std::size_t i = 0; i < k; ++i) mean = add(mean, slice0(bank, i));
    mean = scale(mean, 1.0 / static_cast<double>(k));
    uniform.max_deviation = std::max(uniform.max_deviation, max_abs_diff(slice0(aggregate_decomposed(u, d), 0), mean));
    ++uniform.instances;

    for (std::size_t i = 0; i < k; ++i) {
      Tensor e({1, k});
      e[i] = 1.0;
      onehot.max_deviation =
          std::max(onehot.max_deviation, max_abs_diff(slice0(aggregate_decomposed(e, d), 0), slice0(bank, i)));
    }
    ++onehot.instances;
  }
  // The reconstructions carry rounding from the mean subtraction.
  uniform.tolerance = onehot.tolerance = 1e-12 * std::max<double>(1, *std::max_element(opts.kernels.begin(), opts.kernels.end()));
  out.push_back(random);
  out.push_back(uniform);
  out.push_back(onehot);

  SuiteResult att{"rank1", "attention", 0, 0, 1e-9};
  SuiteResult fus{"rank1", "fusion", 0, 0, 1e-9};
  for (std::size_t t = 0; t < opts.rank1_instances; ++t) {
    const std::size_t c = opts.channels[t % opts.channels.size()];
    const std::size_t k = opts.kernels[t % opts.kernels.size()];
    const Tensor bank = rng.uniform_tensor({k, c, c}, -1.0, 1.0);
    const DecomposedResidual d = residual_decompose(bank);
    const Tensor pi = attention_activation(rng.normal_tensor({1, k}, 2.0), AttentionMode::Softmax, 1.0);
    const Tensor product = sub(slice0(aggregate_decomposed(pi, d), 0), d.w0);
    att.max_deviation = std::max(att.max_deviation, max_abs_diff(rank1_expand(pi.values(), d), product));
    ++att.instances;

    const std::size_t l = default_latent_dim(c);
    const Tensor p = rng.uniform_tensor({c, l}, -1.0, 1.0);
    const Tensor q = rng.uniform_tensor({c, l}, -1.0, 1.0);
    const Tensor phi = rng.uniform_tensor({l, l}, -1.0, 1.0);
    fus.max_deviation =
        std::max(fus.max_deviation, max_abs_diff(fusion_rank1_expand(phi, p, q), matmul(matmul(p, phi), transpose(q))));
    ++fus.instances;
  }
  out.push_back(att);
  out.push_back(fus);
  return out;
}

std::string equivalence_csv(const std::vector<SuiteResult>& results) {
  std::string csv = "suite,case,instances,max_deviation,tolerance,passed\n";
  for (const auto& r : results) {
    csv += r.suite + ',' + r.name + ',' + std::to_string(r.instances) + ',' + format_number(r.max_deviation) + ',' +
           format_number(r.tolerance) + ',' + (r.passed() ? "true" : "false") + '\n';
  }
  return csv;
}

}  // namespace dcd

#pragma once

// Randomized cross-checks between the kernel-aggregation forms.

#include <cstdint>
#include <string>
#include <vector>

#include "dcd/decomposition.hpp"

namespace dcd {

struct EquivalenceOptions {
  std::size_t trials = 100;  // random instances for the aggregation identity
  std::vector<std::size_t> channels{4, 8, 16};
  std::vector<std::size_t> kernels{2, 4};
  std::size_t rank1_instances = 50;
  std::uint64_t seed = 0;
};

struct SuiteResult {
  std::string suite;
  std::string name;
  std::size_t instances = 0;
  double max_deviation = 0;
  double tolerance = 0;

  bool passed() const { return max_deviation < tolerance; }
};

// Suites:
//   aggregation/random      attention-weighted kernel sum vs mean + residual form
//   aggregation/uniform     uniform attention gives the mean kernel
//   aggregation/one-hot     one-hot attention selects its kernel
//   rank1/attention         K*C rank-1 terms vs the residual product
//   rank1/fusion            L*L rank-1 terms vs P Phi Q^T
std::vector<SuiteResult> run_equivalence(const EquivalenceOptions& opts = {});

// suite,case,instances,max_deviation,tolerance,passed
std::string equivalence_csv(const std::vector<SuiteResult>& results);

}  // namespace dcd

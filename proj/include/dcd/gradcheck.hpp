#pragma once

// Central-difference gradient oracle, independent of the tape.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dcd/tensor.hpp"

namespace dcd {

// A tensor whose entries are perturbed in place, with the analytic gradient to
// compare against.
struct GradProbe {
  std::string name;
  Tensor* value = nullptr;
  Tensor analytic;
};

struct TensorCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::vector<std::size_t> indices;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double step = 0.0;
  double tolerance = 0.0;
  bool passed = true;

  double max_rel_error() const;
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

// Deterministic stride sample of at most max_count indices in [0, size).
std::vector<std::size_t> probe_indices(std::size_t size, std::size_t max_count = 256);

// f is re-evaluated with each probed coordinate moved by +/- step. Values are
// restored afterwards. Throws NumericError if f is non-finite at any probe.
GradCheckReport finite_diff_check(const std::function<double()>& f, std::vector<GradProbe>& probes,
                                  double step = 1e-5, double tolerance = 1e-6);

}  // namespace dcd

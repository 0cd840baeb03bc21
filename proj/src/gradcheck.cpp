#include "dcd/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dcd {

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& t : tensors) m = std::max(m, t.max_rel_error);
  return m;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

std::vector<std::size_t> probe_indices(std::size_t size, std::size_t max_count) {
  std::vector<std::size_t> out;
  if (size == 0 || max_count == 0) return out;
  const std::size_t stride = (size + max_count - 1) / max_count;
  for (std::size_t i = 0; i < size; i += stride) out.push_back(i);
  return out;
}

GradCheckReport finite_diff_check(const std::function<double()>& f, std::vector<GradProbe>& probes,
                                  double step, double tolerance) {
  if (!(step > 0.0)) throw Error("finite_diff_check: step must be positive");
  GradCheckReport report;
  report.step = step;
  report.tolerance = tolerance;
  auto eval = [&](const std::string& where) {
    const double v = f();
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite value probing " + where);
    return v;
  };
  for (auto& probe : probes) {
    if (!probe.value) throw Error("finite_diff_check: probe '" + probe.name + "' has no tensor");
    require_shape(probe.analytic, probe.value->shape(), "finite_diff_check");
    TensorCheck check;
    check.name = probe.name;
    check.indices = probe_indices(probe.value->size());
    for (std::size_t i : check.indices) {
      double& x = (*probe.value)[i];
      const double saved = x;
      x = saved + step;
      const double up = eval(probe.name);
      x = saved - step;
      const double down = eval(probe.name);
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = relative_error(probe.analytic[i], numeric);
      if (err > check.max_rel_error) {
        check.max_rel_error = err;
        check.worst_index = i;
        check.worst_analytic = probe.analytic[i];
        check.worst_numeric = numeric;
      }
    }
    if (check.max_rel_error > tolerance) report.passed = false;
    report.tensors.push_back(std::move(check));
  }
  return report;
}

}  // namespace dcd

#include "dcd/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dcd/network.hpp"
#include "dcd/rng.hpp"
#include "dcd/train.hpp"

namespace dcd {

LatencyRow summarize_latency(std::vector<double> samples) {
  if (samples.empty()) throw ConfigError("latency summary needs at least one sample");
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  LatencyRow r;
  r.repeats = n;
  r.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(n);
  r.median_ms = n % 2 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  r.p95_ms = samples[std::max<std::size_t>(rank, 1) - 1];
  return r;
}

namespace {

std::vector<double> time_model(const ModelSpec& spec, const Tensor& image, const BenchOptions& opts) {
  Network net(build_model(spec), opts.seed);
  std::vector<double> out;
  out.reserve(opts.repeats);
  for (std::size_t i = 0; i < opts.warmup + opts.repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor logits = net.predict(image);
    const auto t1 = std::chrono::steady_clock::now();
    if (logits.size() == 0) throw Error("bench: empty output");
    if (i >= opts.warmup) out.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return out;
}

}  // namespace

BenchReport bench_model(const ModelSpec& spec, const std::string& label, const BenchOptions& opts) {
  if (opts.repeats == 0) throw ConfigError("bench: repeats must be >= 1");
  ModelGraph probe = build_model(spec);
  Rng rng(derive_seed(opts.seed, "bench-input"));
  const Tensor image = rng.uniform_tensor({1, probe.in_channels, probe.resolution, probe.resolution}, -1.0, 1.0);

  BenchReport report;
  const ModelSpec base = static_counterpart(spec);
  LatencyRow stat = summarize_latency(time_model(base, image, opts));
  stat.model = label;
  stat.role = "static";
  if (!is_static(spec)) {
    LatencyRow dyn = summarize_latency(time_model(spec, image, opts));
    dyn.model = label;
    dyn.role = "dynamic";
    dyn.ratio_to_static = dyn.mean_ms / stat.mean_ms;
    report.rows.push_back(dyn);
  }
  report.rows.push_back(stat);
  return report;
}

std::string BenchReport::csv() const {
  std::string out = "model,role,repeats,mean_ms,median_ms,p95_ms,ratio_to_static\n";
  for (const auto& r : rows) {
    out += r.model + ',' + r.role + ',' + std::to_string(r.repeats) + ',' + format_number(r.mean_ms) + ',' +
           format_number(r.median_ms) + ',' + format_number(r.p95_ms) + ',' + format_number(r.ratio_to_static) + '\n';
  }
  return out;
}

BenchReport parse_bench_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "model,role,repeats,mean_ms,median_ms,p95_ms,ratio_to_static")
    throw Error("bench report: unexpected header");
  BenchReport r;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw Error("bench report: malformed row '" + line + "'");
    r.rows.push_back({f[0], f[1], std::stoul(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]), std::stod(f[6])});
  }
  return r;
}

}  // namespace dcd

#pragma once

// Batch-size-1 inference latency of a model and its static counterpart.

#include <string>
#include <vector>

#include "dcd/model.hpp"

namespace dcd {

struct LatencyRow {
  std::string model;
  std::string role;  // "dynamic" or "static"
  std::size_t repeats = 0;
  double mean_ms = 0, median_ms = 0, p95_ms = 0;
  double ratio_to_static = 1;  // mean_ms / static mean_ms
};

struct BenchReport {
  std::vector<LatencyRow> rows;

  // model,role,repeats,mean_ms,median_ms,p95_ms,ratio_to_static
  std::string csv() const;
};

BenchReport parse_bench_csv(const std::string& text);

// Mean, median and nearest-rank 95th percentile of the samples.
LatencyRow summarize_latency(std::vector<double> samples_ms);

struct BenchOptions {
  std::size_t repeats = 100;
  std::size_t warmup = 5;  // untimed passes before the first sample
  std::uint64_t seed = 0;
};

// Times `spec` and static_counterpart(spec) on the same random image, one image
// per forward pass, eval mode. A spec that is already static yields one row.
BenchReport bench_model(const ModelSpec& spec, const std::string& label, const BenchOptions& opts);

}  // namespace dcd

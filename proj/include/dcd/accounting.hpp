#pragma once

// Parameter and multiply-add accounting.
//
// MAdds conventions: one multiply-accumulate is one MAdd; batch norm,
// activations, residual adds and model-level pooling count zero. A dynamic
// layer additionally pays for its branch (input pooling at C*H*W plus the FC
// layers) and for its per-sample weight generation. Each dynamic term is
// charged the cheaper of assembling the kernel and applying the factors in
// feature space, whichever a sensible implementation would pick.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dcd/model.hpp"

namespace dcd {

enum class Category { StaticKernel, DynamicBranch, Projections, BatchNorm, Classifier };
inline constexpr std::size_t kCategoryCount = 5;
std::string_view to_string(Category c);

struct Tally {
  std::uint64_t params = 0;
  std::uint64_t madds = 0;
  Tally& operator+=(const Tally& o) {
    params += o.params;
    madds += o.madds;
    return *this;
  }
  bool operator==(const Tally&) const = default;
};

using CategoryTally = std::array<Tally, kCategoryCount>;

struct CountRow {
  std::string layer;
  std::string kind;
  std::uint64_t params = 0;
  std::uint64_t madds = 0;
  CategoryTally categories{};
};

struct CountReport {
  std::string model;
  std::size_t resolution = 0;
  std::vector<CountRow> rows;
  Tally total;
  CategoryTally categories{};

  // Totals with the classifier rows removed.
  Tally backbone() const;
  const Tally& category(Category c) const { return categories[static_cast<std::size_t>(c)]; }

  // Columns: layer,kind,params,madds (rows, then a "total" row).
  std::string csv() const;
  // Columns: category,params,madds
  std::string category_csv() const;
  // Human-readable table.
  std::string table() const;
};

// C^2 + 2CL + (2C + L^2) * floor(C / r): static kernel, projections and
// dynamic branch of a square 1x1 DCD layer, biases and batch norm excluded.
std::uint64_t dcd_complexity_formula(std::uint64_t c, std::uint64_t l, std::uint64_t r);

// Per-category counts of one convolution node at the given input/output shapes.
CategoryTally count_conv_node(const LayerDesc& node, const FeatureShape& in, const FeatureShape& out);

// Parameters and MAdds at the graph's own resolution.
CountReport count_params(const ModelGraph& g);
// Re-derives shapes at `resolution` (the graph itself is not modified).
CountReport count_madds(const ModelGraph& g, std::size_t resolution);

// ---- reference budgets ----------------------------------------------------

struct GoldenRow {
  std::string id;
  ModelSpec spec;
  bool backbone_only = false;  // compare without the classifier
  double params = 0;           // target parameter count
  double params_tol = 0;       // absolute
  double madds = 0;            // target MAdds, 0 if not compared
  double madds_rel_tol = 0;    // relative
};

struct GoldenResult {
  GoldenRow row;
  std::uint64_t params = 0;
  std::uint64_t madds = 0;
  bool params_ok = false;
  bool madds_ok = true;
  bool passed() const { return params_ok && madds_ok; }
};

const std::vector<GoldenRow>& golden_rows();
GoldenResult check_golden(const GoldenRow& row);
// Columns: id,params,target_params,params_tol,params_ok,madds,target_madds,madds_rel_tol,madds_ok
std::string golden_csv(const std::vector<GoldenResult>& results);

}  // namespace dcd

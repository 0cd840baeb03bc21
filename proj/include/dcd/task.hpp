#pragma once

// Synthetic classification tasks and a small image-directory loader.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dcd/config.hpp"
#include "dcd/tensor.hpp"

namespace dcd {

struct Dataset {
  Tensor x;                      // [N, C, H, W]
  std::vector<std::size_t> y;    // labels in [0, classes)
  std::size_t classes = 0;

  std::size_t size() const { return y.size(); }
  Tensor gather(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> labels(std::span<const std::size_t> indices) const;
};

// Context-gated task. Each sample carries a context c in [0, M) encoded as a
// constant offset along a per-context channel direction v_c, plus M hidden
// bits that scale the noise variance along M further directions u_1..u_M
// (low or high scale). The label is bit c. A fixed filter cannot tell which
// direction's energy matters; a filter conditioned on the channel means can.
// The directions are orthonormal columns of a fixed random rotation, so
// 2M <= channels is required.
Dataset make_context_gated(std::size_t n, std::uint64_t seed, const TaskConfig& cfg);

// Control task: the label shifts every pixel by +/- one unit along a fixed
// channel direction on top of unit noise. Linearly separable from the
// channel means.
Dataset make_separable(std::size_t n, std::uint64_t seed, const TaskConfig& cfg);

// Directory of class subdirectories holding binary or ASCII PGM/PPM files.
// Images are resized (nearest neighbour) to resolution x resolution, expanded
// to 3 channels and scaled to [0, 1]. Classes are the sorted subdirectory
// names; every fifth file of a class (sorted by name) goes to the test split.
struct ImageSplit {
  Dataset train;
  Dataset test;
  std::vector<std::string> class_names;
};
ImageSplit load_image_dir(const std::string& dir, std::size_t resolution = 32);

// Reads one PNM image as [C, H, W] with C = 1 (PGM) or 3 (PPM), values in [0, 1].
Tensor read_pnm(const std::string& path);

// Train and test splits for a run; data seeds are seed*10+1 and seed*10+2.
std::pair<Dataset, Dataset> make_task(const TaskConfig& cfg, std::uint64_t seed);

}  // namespace dcd

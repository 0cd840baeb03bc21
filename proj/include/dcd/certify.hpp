#pragma once

// Gradient certification of whole layers: analytic tape gradients of
// sum(layer(x) * G) against central differences, for every parameter and the
// input.

#include <cstdint>
#include <string>
#include <vector>

#include "dcd/gradcheck.hpp"
#include "dcd/layers.hpp"
#include "dcd/network.hpp"

namespace dcd {

struct LayerCheckOptions {
  bool train = true;
  double step = 1e-5;
  double tolerance = 1e-6;
  std::uint64_t seed = 7;
};

GradCheckReport gradcheck_layer(Layer& layer, Tensor x, const LayerCheckOptions& opts = {});
// Same check on a whole network's logits.
GradCheckReport gradcheck_network(Network& net, Tensor x, const LayerCheckOptions& opts = {});

struct VariantCheck {
  std::string variant;
  bool train = true;
  GradCheckReport report;
};

// Names accepted by certify_variants: static, vanilla-softmax,
// vanilla-sigmoid, dcd-1x1, dcd-sparse, dcd-depthwise, dcd-kxk-joint,
// dcd-kxk-channel-only.
const std::vector<std::string>& certified_variants();

// Builds a small instance of each selected variant with randomised parameters
// and certifies it in train and eval mode. An empty selection means all.
std::vector<VariantCheck> certify_variants(const std::vector<std::string>& selection = {},
                                           const LayerCheckOptions& opts = {});

// Overwrites every parameter with seeded uniform noise in [-scale, scale] so
// that zero-initialised branches exercise the dynamic path.
void randomize_parameters(Layer& layer, std::uint64_t seed, double scale = 0.5);
void randomize_parameters(const std::vector<ag::Parameter*>& params, std::uint64_t seed, double scale = 0.5);

}  // namespace dcd

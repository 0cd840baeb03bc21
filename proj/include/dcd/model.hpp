#pragma once

// Model graphs: an ordered list of nodes, each consuming earlier nodes'
// outputs. Graphs are pure descriptions; Network (network.hpp) instantiates
// them and the accounting module counts them.

#include <cstddef>
#include <string>
#include <vector>

#include "dcd/layers.hpp"

namespace dcd {

enum class NodeKind { Conv, MaxPool, GlobalPool, Add };
enum class ConvImpl { Static, Dcd, Vanilla };

std::string_view to_string(ConvImpl impl);

struct FeatureShape {
  std::size_t c = 0, h = 0, w = 0;
  bool operator==(const FeatureShape&) const = default;
};

struct LayerDesc {
  std::string name;
  NodeKind kind = NodeKind::Conv;
  // Producer node indices; kGraphInput refers to the model input.
  std::vector<std::size_t> inputs;

  // Conv
  ConvSpec conv;
  ConvImpl impl = ConvImpl::Static;
  DcdOptions dcd;
  VanillaOptions vanilla;
  bool classifier = false;

  // MaxPool
  std::size_t pool_kernel = 0, pool_stride = 1, pool_padding = 0;

  // Add
  Activation add_activation = Activation::None;

  // Filled in by ModelGraph::infer_shapes.
  FeatureShape in;
  FeatureShape out;

  // Short label: static-conv, pointwise, depthwise, dcd-<variant>,
  // vanilla-dyn, classifier, dcd-classifier, pool, add.
  std::string kind_label() const;
};

inline constexpr std::size_t kGraphInput = static_cast<std::size_t>(-1);

struct ModelGraph {
  std::string name;
  std::size_t in_channels = 3;
  std::size_t resolution = 224;
  std::size_t num_classes = 1000;
  double width = 1.0;
  std::vector<LayerDesc> nodes;

  // Appends a node; by default it consumes the previous node (or the input).
  std::size_t add(LayerDesc node);
  // Propagates shapes from an input of in_channels x res x res and checks that
  // every node composes. Throws ShapeError / ConfigError.
  void infer_shapes(std::size_t res);
  void infer_shapes() { infer_shapes(resolution); }
  const LayerDesc& output() const { return nodes.back(); }
};

// ---- builders -------------------------------------------------------------

struct Placement {
  bool dw = false;
  bool pw = false;
  bool cls = false;
  bool operator==(const Placement&) const = default;
};
// Accepts "" / "none" or '+'-joined tokens from {dw, pw, cls}.
Placement parse_placement(std::string_view s);
std::string to_string(const Placement& p);

struct DcdKnobs {
  std::size_t reduction = 0;  // 0: architecture default
  std::size_t cls_reduction = 16;
  double latent_multiplier = 1.0;
  std::size_t blocks = 1;
  bool use_lambda = true;
  bool use_phi = true;
};

// Default reduction ratio: 16 for width >= 1, 8 for narrower models.
std::size_t mobilenetv2_default_reduction(double width);
// Channel rounding to a multiple of 8, never dropping more than 10%.
std::size_t make_divisible(double v, std::size_t divisor = 8);

ModelGraph build_mobilenetv2(double width, Placement placement, const DcdKnobs& knobs = {},
                             std::size_t num_classes = 1000, std::size_t resolution = 224);

enum class ResnetDcd { Off, ChannelOnly, Joint };
ResnetDcd parse_resnet_dcd(std::string_view s);
std::string_view to_string(ResnetDcd m);

// Depth 10/18 use basic blocks, 50 bottlenecks. 1x1 downsample shortcuts and
// the stem stay static; the classifier is static unless cls is set.
ModelGraph build_resnet(std::size_t depth, ResnetDcd mode, const DcdKnobs& knobs = {},
                        bool dcd_classifier = false, std::size_t num_classes = 1000,
                        std::size_t resolution = 224);

enum class DeskKind { Static, Dcd, Vanilla };

// Small 1x1 network for the synthetic tasks:
// conv(c_in -> width) BN ReLU, conv(width -> width) BN ReLU, pool, linear.
struct DeskOptions {
  DeskKind kind = DeskKind::Static;
  std::size_t in_channels = 8;
  std::size_t width = 16;
  std::size_t kernel = 1;
  std::size_t resolution = 16;
  std::size_t num_classes = 2;
  DcdKnobs dcd;  // reduction 0 means 4
  VanillaOptions vanilla;
};
ModelGraph build_desk(const DeskOptions& opts);

// Declarative model selector; round-trips through the config format.
struct ModelSpec {
  std::string arch = "desk";  // mobilenetv2 | resnet | desk
  double width = 0.5;
  std::size_t depth = 18;
  Placement placement;
  ResnetDcd resnet_dcd = ResnetDcd::Off;
  DeskOptions desk;
  DcdKnobs knobs;
  std::size_t num_classes = 0;  // 0: architecture default
  std::size_t resolution = 0;   // 0: architecture default
};

ModelGraph build_model(const ModelSpec& spec);

// Same architecture with every dynamic layer replaced by its static kernel.
ModelSpec static_counterpart(ModelSpec spec);
bool is_static(const ModelSpec& spec);

}  // namespace dcd

#include "dcd/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dcd {

std::string_view to_string(ConvImpl impl) {
  switch (impl) {
    case ConvImpl::Static: return "static";
    case ConvImpl::Dcd: return "dcd";
    case ConvImpl::Vanilla: return "vanilla";
  }
  return "?";
}

std::string LayerDesc::kind_label() const {
  switch (kind) {
    case NodeKind::MaxPool:
    case NodeKind::GlobalPool: return "pool";
    case NodeKind::Add: return "add";
    case NodeKind::Conv: break;
  }
  if (classifier) {
    if (impl == ConvImpl::Static) return "classifier";
    return impl == ConvImpl::Dcd ? "dcd-classifier" : "vanilla-classifier";
  }
  switch (impl) {
    case ConvImpl::Static:
      if (conv.depthwise()) return "depthwise";
      return conv.kernel == 1 ? "pointwise" : "static-conv";
    case ConvImpl::Dcd: return "dcd-" + std::string(to_string(resolve_dcd_shape(conv, dcd).variant));
    case ConvImpl::Vanilla: return "vanilla-dyn";
  }
  return "?";
}

std::size_t ModelGraph::add(LayerDesc node) {
  if (node.inputs.empty()) node.inputs.push_back(nodes.empty() ? kGraphInput : nodes.size() - 1);
  nodes.push_back(std::move(node));
  return nodes.size() - 1;
}

namespace {

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad,
                       const std::string& where) {
  if (stride == 0) throw ConfigError(where + ": stride must be >= 1");
  if (in + 2 * pad < k) throw ShapeError(where + ": kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

void ModelGraph::infer_shapes(std::size_t res) {
  if (nodes.empty()) throw ConfigError("model '" + name + "' has no nodes");
  const FeatureShape input{in_channels, res, res};
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    LayerDesc& n = nodes[i];
    const std::string where = "node '" + n.name + "'";
    if (n.inputs.empty()) throw ConfigError(where + " has no inputs");
    auto shape_of = [&](std::size_t idx) {
      if (idx == kGraphInput) return input;
      if (idx >= i) throw ConfigError(where + " consumes a later node");
      return nodes[idx].out;
    };
    n.in = shape_of(n.inputs[0]);
    switch (n.kind) {
      case NodeKind::Conv: {
        if (n.inputs.size() != 1) throw ConfigError(where + ": conv takes one input");
        if (n.in.c != n.conv.c_in) {
          throw ShapeError(where + ": expects " + std::to_string(n.conv.c_in) + " channels, gets " +
                           std::to_string(n.in.c));
        }
        n.conv.validate();
        if (n.classifier && (n.in.h != 1 || n.in.w != 1)) throw ShapeError(where + ": classifier needs a pooled 1x1 input");
        if (n.impl == ConvImpl::Dcd) resolve_dcd_shape(n.conv, n.dcd);
        if (n.impl == ConvImpl::Vanilla) vanilla_hidden(n.conv, n.vanilla);
        n.out = {n.conv.c_out, out_extent(n.in.h, n.conv.kernel, n.conv.stride, n.conv.padding, where),
                 out_extent(n.in.w, n.conv.kernel, n.conv.stride, n.conv.padding, where)};
        break;
      }
      case NodeKind::MaxPool:
        if (n.pool_kernel == 0 || n.pool_padding >= n.pool_kernel) throw ConfigError(where + ": invalid pooling window");
        n.out = {n.in.c, out_extent(n.in.h, n.pool_kernel, n.pool_stride, n.pool_padding, where),
                 out_extent(n.in.w, n.pool_kernel, n.pool_stride, n.pool_padding, where)};
        break;
      case NodeKind::GlobalPool:
        n.out = {n.in.c, 1, 1};
        break;
      case NodeKind::Add:
        if (n.inputs.size() != 2) throw ConfigError(where + ": add takes two inputs");
        if (!(shape_of(n.inputs[1]) == n.in)) throw ShapeError(where + ": operand shapes differ");
        n.out = n.in;
        break;
    }
  }
  resolution = res;
}

// ---- builders -------------------------------------------------------------

Placement parse_placement(std::string_view s) {
  Placement p;
  if (s.empty() || s == "none") return p;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t end = std::min(s.find('+', start), s.size());
    const std::string_view tok = s.substr(start, end - start);
    bool* flag = tok == "dw" ? &p.dw : tok == "pw" ? &p.pw : tok == "cls" ? &p.cls : nullptr;
    if (!flag) throw ConfigError("unknown placement '" + std::string(tok) + "' (expected dw, pw, cls)");
    if (*flag) throw ConfigError("placement '" + std::string(tok) + "' given twice");
    *flag = true;
    start = end + 1;
  }
  return p;
}

std::string to_string(const Placement& p) {
  std::string out;
  for (auto [on, tok] : {std::pair{p.dw, "dw"}, {p.pw, "pw"}, {p.cls, "cls"}}) {
    if (!on) continue;
    if (!out.empty()) out += '+';
    out += tok;
  }
  return out.empty() ? "none" : out;
}

std::size_t mobilenetv2_default_reduction(double width) { return width >= 1.0 ? 16 : 8; }

std::size_t make_divisible(double v, std::size_t divisor) {
  const double d = static_cast<double>(divisor);
  std::size_t nv = std::max(divisor, static_cast<std::size_t>(v + d / 2) / divisor * divisor);
  if (static_cast<double>(nv) < 0.9 * v) nv += divisor;
  return nv;
}

namespace {

ConvSpec make_conv(std::size_t ci, std::size_t co, std::size_t k, std::size_t stride,
                   Activation act, std::size_t groups = 1) {
  ConvSpec s;
  s.c_in = ci;
  s.c_out = co;
  s.kernel = k;
  s.stride = stride;
  s.padding = k / 2;
  s.groups = groups;
  s.activation = act;
  return s;
}

DcdOptions dcd_options(const DcdKnobs& k, std::size_t reduction, std::size_t blocks = 1,
                       DcdVariant variant = DcdVariant::Auto) {
  DcdOptions o;
  o.variant = variant;
  o.blocks = blocks;
  o.reduction = reduction;
  o.latent_multiplier = k.latent_multiplier;
  o.use_lambda = k.use_lambda;
  o.use_phi = k.use_phi;
  return o;
}

LayerDesc conv_node(std::string name, ConvSpec spec) {
  LayerDesc n;
  n.name = std::move(name);
  n.conv = spec;
  return n;
}

LayerDesc dcd_node(std::string name, ConvSpec spec, DcdOptions opts) {
  LayerDesc n = conv_node(std::move(name), spec);
  n.impl = ConvImpl::Dcd;
  n.dcd = opts;
  return n;
}

void add_head(ModelGraph& g, std::size_t channels, bool dcd, const DcdKnobs& knobs) {
  LayerDesc pool;
  pool.name = "pool";
  pool.kind = NodeKind::GlobalPool;
  g.add(pool);
  ConvSpec fc = make_conv(channels, g.num_classes, 1, 1, Activation::None);
  fc.bias = true;
  fc.batch_norm = false;
  LayerDesc cls = dcd ? dcd_node("classifier", fc, dcd_options(knobs, knobs.cls_reduction))
                      : conv_node("classifier", fc);
  cls.classifier = true;
  g.add(cls);
}

LayerDesc add_node(std::string name, std::size_t a, std::size_t b, Activation act) {
  LayerDesc n;
  n.name = std::move(name);
  n.kind = NodeKind::Add;
  n.inputs = {a, b};
  n.add_activation = act;
  return n;
}

}  // namespace

ModelGraph build_mobilenetv2(double width, Placement placement, const DcdKnobs& knobs,
                             std::size_t num_classes, std::size_t resolution) {
  if (!(width > 0.0)) throw ConfigError("mobilenetv2: width multiplier must be positive");
  struct Stage {
    std::size_t t, c, n, s;
  };
  static constexpr Stage stages[] = {{1, 16, 1, 1},  {6, 24, 2, 2},  {6, 32, 3, 2}, {6, 64, 4, 2},
                                     {6, 96, 3, 1},  {6, 160, 3, 2}, {6, 320, 1, 1}};
  const std::size_t r = knobs.reduction ? knobs.reduction : mobilenetv2_default_reduction(width);

  ModelGraph g;
  std::ostringstream name;
  name << "mobilenetv2-x" << width << "-" << to_string(placement);
  g.name = name.str();
  g.width = width;
  g.num_classes = num_classes;
  g.resolution = resolution;

  auto pointwise = [&](std::string nm, std::size_t ci, std::size_t co, Activation act) {
    const ConvSpec s = make_conv(ci, co, 1, 1, act);
    return placement.pw ? dcd_node(std::move(nm), s, dcd_options(knobs, r, knobs.blocks)) : conv_node(std::move(nm), s);
  };

  std::size_t inp = make_divisible(32 * width);
  const std::size_t last = make_divisible(1280 * std::max(1.0, width));
  g.add(conv_node("stem", make_conv(3, inp, 3, 2, Activation::Relu6)));
  std::size_t block = 0;
  for (const Stage& st : stages) {
    const std::size_t out = make_divisible(static_cast<double>(st.c) * width);
    for (std::size_t i = 0; i < st.n; ++i, ++block) {
      const std::size_t stride = i == 0 ? st.s : 1;
      const std::size_t hidden = inp * st.t;
      const std::string prefix = "block" + std::to_string(block);
      const std::size_t entry = g.nodes.size() - 1;
      if (st.t != 1) g.add(pointwise(prefix + ".expand", inp, hidden, Activation::Relu6));
      const ConvSpec dw = make_conv(hidden, hidden, 3, stride, Activation::Relu6, hidden);
      g.add(placement.dw ? dcd_node(prefix + ".dw", dw, dcd_options(knobs, r)) : conv_node(prefix + ".dw", dw));
      g.add(pointwise(prefix + ".project", hidden, out, Activation::None));
      if (stride == 1 && inp == out) g.add(add_node(prefix + ".add", entry, g.nodes.size() - 1, Activation::None));
      inp = out;
    }
  }
  g.add(pointwise("head", inp, last, Activation::Relu6));
  add_head(g, last, placement.cls, knobs);
  g.infer_shapes();
  return g;
}

ResnetDcd parse_resnet_dcd(std::string_view s) {
  if (s == "off" || s == "none") return ResnetDcd::Off;
  if (s == "channel-only" || s == "on") return ResnetDcd::ChannelOnly;
  if (s == "joint") return ResnetDcd::Joint;
  throw ConfigError("unknown resnet dcd mode '" + std::string(s) + "' (expected off, channel-only, joint)");
}

std::string_view to_string(ResnetDcd m) {
  switch (m) {
    case ResnetDcd::Off: return "off";
    case ResnetDcd::ChannelOnly: return "channel-only";
    case ResnetDcd::Joint: return "joint";
  }
  return "?";
}

ModelGraph build_resnet(std::size_t depth, ResnetDcd mode, const DcdKnobs& knobs, bool dcd_classifier,
                        std::size_t num_classes, std::size_t resolution) {
  std::vector<std::size_t> blocks;
  bool bottleneck = false;
  switch (depth) {
    case 10: blocks = {1, 1, 1, 1}; break;
    case 18: blocks = {2, 2, 2, 2}; break;
    case 50: blocks = {3, 4, 6, 3}; bottleneck = true; break;
    default: throw ConfigError("resnet: depth must be 10, 18 or 50, got " + std::to_string(depth));
  }
  const std::size_t r = knobs.reduction ? knobs.reduction : 16;
  const bool on = mode != ResnetDcd::Off;
  const DcdVariant kxk = mode == ResnetDcd::Joint ? DcdVariant::KxkJoint : DcdVariant::KxkChannelOnly;

  ModelGraph g;
  g.name = "resnet" + std::to_string(depth) + "-" + std::string(to_string(mode));
  g.num_classes = num_classes;
  g.resolution = resolution;

  auto conv = [&](std::string nm, std::size_t ci, std::size_t co, std::size_t k, std::size_t stride,
                  Activation act) {
    const ConvSpec s = make_conv(ci, co, k, stride, act);
    if (!on) return conv_node(std::move(nm), s);
    return dcd_node(std::move(nm), s, dcd_options(knobs, r, 1, k == 1 ? DcdVariant::Pointwise : kxk));
  };

  g.add(conv_node("stem", make_conv(3, 64, 7, 2, Activation::Relu)));
  LayerDesc mp;
  mp.name = "maxpool";
  mp.kind = NodeKind::MaxPool;
  mp.pool_kernel = 3;
  mp.pool_stride = 2;
  mp.pool_padding = 1;
  g.add(mp);

  std::size_t inp = 64;
  const std::size_t widths[] = {64, 128, 256, 512};
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t w = widths[s];
    const std::size_t out = bottleneck ? 4 * w : w;
    for (std::size_t b = 0; b < blocks[s]; ++b) {
      const std::size_t stride = b == 0 && s > 0 ? 2 : 1;
      const std::string prefix = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
      const std::size_t entry = g.nodes.size() - 1;
      if (bottleneck) {
        g.add(conv(prefix + ".conv1", inp, w, 1, 1, Activation::Relu));
        g.add(conv(prefix + ".conv2", w, w, 3, stride, Activation::Relu));
        g.add(conv(prefix + ".conv3", w, out, 1, 1, Activation::None));
      } else {
        g.add(conv(prefix + ".conv1", inp, w, 3, stride, Activation::Relu));
        g.add(conv(prefix + ".conv2", w, w, 3, 1, Activation::None));
      }
      const std::size_t main = g.nodes.size() - 1;
      std::size_t shortcut = entry;
      if (stride != 1 || inp != out) {
        LayerDesc ds = conv_node(prefix + ".downsample", make_conv(inp, out, 1, stride, Activation::None));
        ds.inputs = {entry};
        shortcut = g.add(ds);
      }
      g.add(add_node(prefix + ".add", main, shortcut, Activation::Relu));
      inp = out;
    }
  }
  add_head(g, inp, dcd_classifier, knobs);
  g.infer_shapes();
  return g;
}

ModelGraph build_desk(const DeskOptions& o) {
  ModelGraph g;
  g.name = std::string("desk-") + (o.kind == DeskKind::Static ? "static" : o.kind == DeskKind::Dcd ? "dcd" : "vanilla");
  g.in_channels = o.in_channels;
  g.resolution = o.resolution;
  g.num_classes = o.num_classes;
  const std::size_t r = o.dcd.reduction ? o.dcd.reduction : 4;
  auto layer = [&](std::string nm, std::size_t ci, std::size_t co) {
    const ConvSpec s = make_conv(ci, co, o.kernel, 1, Activation::Relu);
    switch (o.kind) {
      case DeskKind::Static: return conv_node(std::move(nm), s);
      case DeskKind::Dcd: return dcd_node(std::move(nm), s, dcd_options(o.dcd, r, o.dcd.blocks));
      case DeskKind::Vanilla: {
        LayerDesc n = conv_node(std::move(nm), s);
        n.impl = ConvImpl::Vanilla;
        n.vanilla = o.vanilla;
        return n;
      }
    }
    return conv_node(std::move(nm), s);
  };
  g.add(layer("conv1", o.in_channels, o.width));
  g.add(layer("conv2", o.width, o.width));
  add_head(g, o.width, false, o.dcd);
  g.infer_shapes();
  return g;
}

ModelGraph build_model(const ModelSpec& spec) {
  if (spec.arch == "mobilenetv2") {
    return build_mobilenetv2(spec.width, spec.placement, spec.knobs, spec.num_classes ? spec.num_classes : 1000,
                             spec.resolution ? spec.resolution : 224);
  }
  if (spec.arch == "resnet") {
    if (spec.placement.dw || spec.placement.pw) throw ConfigError("resnet: placement accepts only cls");
    return build_resnet(spec.depth, spec.resnet_dcd, spec.knobs, spec.placement.cls,
                        spec.num_classes ? spec.num_classes : 1000, spec.resolution ? spec.resolution : 224);
  }
  if (spec.arch == "desk") {
    DeskOptions d = spec.desk;
    d.dcd = spec.knobs;
    if (spec.num_classes) d.num_classes = spec.num_classes;
    if (spec.resolution) d.resolution = spec.resolution;
    return build_desk(d);
  }
  throw ConfigError("unknown architecture '" + spec.arch + "' (expected mobilenetv2, resnet, desk)");
}

ModelSpec static_counterpart(ModelSpec spec) {
  spec.placement = {};
  spec.resnet_dcd = ResnetDcd::Off;
  spec.desk.kind = DeskKind::Static;
  return spec;
}

bool is_static(const ModelSpec& spec) {
  if (spec.arch == "desk") return spec.desk.kind == DeskKind::Static;
  return !spec.placement.dw && !spec.placement.pw && !spec.placement.cls && spec.resnet_dcd == ResnetDcd::Off;
}

}  // namespace dcd

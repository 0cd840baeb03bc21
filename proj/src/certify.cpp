#include "dcd/certify.hpp"

#include <functional>

#include "dcd/rng.hpp"

namespace dcd {

namespace {

using ForwardFn = std::function<ag::Var(ForwardContext&, ag::Var)>;

GradCheckReport gradcheck_forward(const ForwardFn& forward, const std::vector<ag::Parameter*>& params,
                                  Tensor x, const LayerCheckOptions& opts) {
  Tensor weights;
  ag::Tape tape;
  ForwardContext ctx{tape, opts.train, false, nullptr};
  const ag::Var xv = tape.input(x);
  const ag::Var y = forward(ctx, xv);
  Rng rng(derive_seed(opts.seed, "gradcheck-weights"));
  weights = rng.uniform_tensor(tape.value(y).shape(), -1.0, 1.0);
  tape.backward(ag::sum(tape, ag::mul(tape, y, tape.constant(weights))));

  std::vector<GradProbe> probes;
  for (ag::Parameter* p : params) probes.push_back({p->name, &p->value, tape.grad(tape.param(*p))});
  probes.push_back({"input", &x, tape.grad(xv)});

  return finite_diff_check(
      [&] {
        ag::Tape t;
        ForwardContext c{t, opts.train, false, nullptr};
        const Tensor& out = t.value(forward(c, t.input(x)));
        long double s = 0.0L;
        for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<long double>(out[i]) * weights[i];
        return static_cast<double>(s);
      },
      probes, opts.step, opts.tolerance);
}

}  // namespace

GradCheckReport gradcheck_layer(Layer& layer, Tensor x, const LayerCheckOptions& opts) {
  return gradcheck_forward([&](ForwardContext& c, ag::Var v) { return layer.forward(c, v); },
                           layer.parameters(), std::move(x), opts);
}

GradCheckReport gradcheck_network(Network& net, Tensor x, const LayerCheckOptions& opts) {
  return gradcheck_forward([&](ForwardContext& c, ag::Var v) { return net.forward(c, v); }, net.parameters(),
                           std::move(x), opts);
}

void randomize_parameters(Layer& layer, std::uint64_t seed, double scale) {
  randomize_parameters(layer.parameters(), seed, scale);
}

void randomize_parameters(const std::vector<ag::Parameter*>& params, std::uint64_t seed, double scale) {
  for (ag::Parameter* p : params) {
    Rng rng(derive_seed(seed, p->name));
    for (auto& v : p->value.values()) v = rng.uniform(-scale, scale);
  }
}

namespace {

ConvSpec small_conv(std::size_t ci, std::size_t co, std::size_t k, std::size_t groups = 1) {
  ConvSpec s;
  s.c_in = ci;
  s.c_out = co;
  s.kernel = k;
  s.padding = k / 2;
  s.groups = groups;
  return s;
}

struct Fixture {
  std::unique_ptr<Layer> layer;
  Shape input;
};

Fixture make_fixture(const std::string& variant, std::uint64_t seed) {
  DcdOptions dcd;
  dcd.reduction = 4;
  VanillaOptions van;
  if (variant == "static") return {std::make_unique<StaticConv>("static", small_conv(4, 6, 3), seed), {2, 4, 5, 5}};
  if (variant == "vanilla-softmax") {
    van.temperature = 2.0;
    return {std::make_unique<VanillaDynConv>("vanilla", small_conv(8, 8, 1), van, seed), {3, 8, 4, 4}};
  }
  if (variant == "vanilla-sigmoid") {
    van.mode = AttentionMode::Sigmoid;
    return {std::make_unique<VanillaDynConv>("vanilla", small_conv(8, 8, 1), van, seed), {3, 8, 4, 4}};
  }
  if (variant == "dcd-1x1") return {std::make_unique<DcdConv>("dcd", small_conv(8, 8, 1), dcd, seed), {3, 8, 4, 4}};
  if (variant == "dcd-sparse") {
    dcd.blocks = 2;
    return {std::make_unique<DcdConv>("dcd", small_conv(8, 8, 1), dcd, seed), {3, 8, 4, 4}};
  }
  if (variant == "dcd-depthwise") {
    return {std::make_unique<DcdConv>("dcd", small_conv(8, 8, 3, 8), dcd, seed), {3, 8, 6, 6}};
  }
  if (variant == "dcd-kxk-joint") {
    dcd.variant = DcdVariant::KxkJoint;
    return {std::make_unique<DcdConv>("dcd", small_conv(16, 16, 3), dcd, seed), {2, 16, 4, 4}};
  }
  if (variant == "dcd-kxk-channel-only") {
    dcd.variant = DcdVariant::KxkChannelOnly;
    return {std::make_unique<DcdConv>("dcd", small_conv(8, 8, 3), dcd, seed), {2, 8, 4, 4}};
  }
  throw ConfigError("unknown layer variant '" + variant + "'");
}

}  // namespace

const std::vector<std::string>& certified_variants() {
  static const std::vector<std::string> names{"static",        "vanilla-softmax", "vanilla-sigmoid",
                                              "dcd-1x1",       "dcd-sparse",      "dcd-depthwise",
                                              "dcd-kxk-joint", "dcd-kxk-channel-only"};
  return names;
}

std::vector<VariantCheck> certify_variants(const std::vector<std::string>& selection,
                                           const LayerCheckOptions& opts) {
  const auto& names = selection.empty() ? certified_variants() : selection;
  std::vector<VariantCheck> out;
  for (const auto& name : names) {
    const std::uint64_t seed = derive_seed(opts.seed, name);
    Fixture f = make_fixture(name, seed);
    randomize_parameters(*f.layer, derive_seed(seed, "params"), 0.5);
    for (bool train : {true, false}) {
      Rng rng(derive_seed(seed, train ? "input-train" : "input-eval"));
      LayerCheckOptions lo = opts;
      lo.train = train;
      out.push_back({name, train, gradcheck_layer(*f.layer, rng.uniform_tensor(f.input, -1.0, 1.0), lo)});
    }
  }
  return out;
}

}  // namespace dcd

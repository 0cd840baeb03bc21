#include <cmath>

#include "doctest.h"
#include "dcd/accounting.hpp"
#include "dcd/network.hpp"

using namespace dcd;

namespace {

ConvSpec conv(std::size_t ci, std::size_t co, std::size_t k = 1, std::size_t groups = 1) {
  ConvSpec s;
  s.c_in = ci;
  s.c_out = co;
  s.kernel = k;
  s.padding = k / 2;
  s.groups = groups;
  return s;
}

LayerDesc node(ConvSpec s, ConvImpl impl = ConvImpl::Static) {
  LayerDesc n;
  n.name = "layer";
  n.conv = s;
  n.impl = impl;
  return n;
}

Tally sum(const CategoryTally& t) {
  Tally out;
  for (const auto& x : t) out += x;
  return out;
}

std::unique_ptr<Layer> allocate(const LayerDesc& n) {
  switch (n.impl) {
    case ConvImpl::Static: return std::make_unique<StaticConv>(n.name, n.conv, 1);
    case ConvImpl::Dcd: return std::make_unique<DcdConv>(n.name, n.conv, n.dcd, 1);
    case ConvImpl::Vanilla: return std::make_unique<VanillaDynConv>(n.name, n.conv, n.vanilla, 1);
  }
  return nullptr;
}

}  // namespace

TEST_CASE("closed-form complexity") {
  CHECK(dcd_complexity_formula(64, 8, 16) == 5888);
  CHECK(dcd_complexity_formula(64, 8, 16) == 4096 + 1024 + 768);
  // At L = sqrt(C) and r = 16 the formula is (1 + 3/16) C^2 + 2 C sqrt(C).
  for (std::uint64_t c : {16, 64, 256, 1024}) {
    const auto l = static_cast<std::uint64_t>(std::llround(std::sqrt(static_cast<double>(c))));
    CHECK(dcd_complexity_formula(c, l, 16) * 16 == 19 * c * c + 32 * c * l);
  }
  // Without a residual and with a one-unit branch only 2C remains on top of C^2.
  for (std::uint64_t c : {8, 64, 512}) CHECK(dcd_complexity_formula(c, 0, c) == c * c + 2 * c);
  CHECK_THROWS_AS(dcd_complexity_formula(8, 2, 0), ConfigError);
}

TEST_CASE("closed form stays below four dense kernels") {
  for (std::uint64_t c = 8; c <= 1024; ++c) {
    CAPTURE(c);
    CHECK(dcd_complexity_formula(c, default_latent_dim(c), 16) < 4 * c * c);
  }
}

TEST_CASE("closed form matches an allocated square layer") {
  for (std::size_t c : {16, 64, 128}) {
    ConvSpec s = conv(c, c);
    s.batch_norm = false;
    DcdOptions o;
    DcdConv layer("dcd", s, o, 3);
    const std::size_t l = layer.shape().dims.l;
    // The formula leaves out the branch biases.
    const std::size_t biases = layer.shape().hidden + layer.shape().branch_out();
    CHECK(layer.parameter_count() - biases == dcd_complexity_formula(c, l, 16));
  }
}

TEST_CASE("single-layer definitions") {
  SUBCASE("static pointwise") {
    const auto t = count_conv_node(node(conv(64, 64)), {64, 8, 8}, {64, 8, 8});
    CHECK(t[0].params == 4096);
    CHECK(sum(t).params == 4096 + 128);
    CHECK(sum(t).madds == 64 * 64 * 64);
  }
  SUBCASE("static depthwise") {
    const auto t = count_conv_node(node(conv(64, 64, 3, 64)), {64, 8, 8}, {64, 8, 8});
    CHECK(sum(t).madds == 36864);
    CHECK(t[0].params == 64 * 9);
  }
  SUBCASE("vanilla kernels") {
    LayerDesc n = node(conv(64, 64), ConvImpl::Vanilla);
    const auto t = count_conv_node(n, {64, 8, 8}, {64, 8, 8});
    CHECK(t[static_cast<std::size_t>(Category::StaticKernel)].params == 4 * 4096);
    CHECK(t[static_cast<std::size_t>(Category::DynamicBranch)].params == 64 * 16 + 16 + 16 * 4 + 4);
  }
  SUBCASE("dcd pointwise madds") {
    LayerDesc n = node(conv(64, 64), ConvImpl::Dcd);
    const auto t = count_conv_node(n, {64, 8, 8}, {64, 8, 8});
    const std::uint64_t branch = 64 * 64 + 64 * 4 + 4 * (64 + 64) + std::min<std::uint64_t>(64 * 64, 64 * 64);
    const std::uint64_t fusion = std::min<std::uint64_t>(64 * 64 + 64 * 8 * 64, (64 * 8 + 64 + 8 * 64) * 64);
    CHECK(t[static_cast<std::size_t>(Category::DynamicBranch)].madds == branch);
    CHECK(t[static_cast<std::size_t>(Category::Projections)].madds == fusion);
    CHECK(t[static_cast<std::size_t>(Category::Projections)].params == 2 * 64 * 8);
  }
  SUBCASE("classifier takes everything") {
    LayerDesc n = node(conv(32, 10));
    n.classifier = true;
    n.conv.bias = true;
    n.conv.batch_norm = false;
    const auto t = count_conv_node(n, {32, 1, 1}, {10, 1, 1});
    CHECK(t[static_cast<std::size_t>(Category::Classifier)] == Tally{330, 320});
    CHECK(sum(t) == Tally{330, 320});
  }
}

TEST_CASE("counts equal allocated parameters") {
  std::vector<LayerDesc> cases;
  auto dcd = [&](ConvSpec s, DcdOptions o) {
    LayerDesc n = node(s, ConvImpl::Dcd);
    n.dcd = o;
    cases.push_back(n);
  };
  cases.push_back(node(conv(16, 24)));
  cases.push_back(node(conv(16, 16, 3, 16)));
  ConvSpec biased = conv(12, 20, 3);
  biased.bias = true;
  biased.batch_norm = false;
  cases.push_back(node(biased));
  dcd(conv(32, 64), {});
  dcd(biased, {});
  for (std::size_t b : {2, 4, 8}) {
    DcdOptions o;
    o.blocks = b;
    dcd(conv(32, 64), o);
  }
  for (double m : {0.25, 0.5, 0.75}) {
    DcdOptions o;
    o.latent_multiplier = m;
    dcd(conv(64, 64), o);
  }
  DcdOptions no_lambda;
  no_lambda.use_lambda = false;
  dcd(conv(32, 32), no_lambda);
  DcdOptions no_phi;
  no_phi.use_phi = false;
  dcd(conv(32, 32, 3), no_phi);
  dcd(conv(24, 24, 3, 24), {});
  DcdOptions joint;
  joint.variant = DcdVariant::KxkJoint;
  dcd(conv(64, 32, 3), joint);
  dcd(conv(64, 32, 3), {});
  for (std::size_t fc : {1, 2}) {
    LayerDesc n = node(conv(16, 8, 3), ConvImpl::Vanilla);
    n.vanilla.fc_layers = fc;
    n.vanilla.kernels = 3;
    cases.push_back(n);
  }
  for (const LayerDesc& n : cases) {
    CAPTURE(n.kind_label());
    const auto layer = allocate(n);
    const FeatureShape in{n.conv.c_in, 6, 6};
    CHECK(sum(count_conv_node(n, in, {n.conv.c_out, 6, 6})).params == layer->parameter_count());
  }
}

TEST_CASE("model counts equal allocated networks") {
  std::vector<ModelGraph> graphs{
      build_mobilenetv2(0.35, parse_placement("dw+pw+cls")),
      build_mobilenetv2(0.5, parse_placement("pw"), {0, 16, 0.5, 2, true, true}),
      build_resnet(10, ResnetDcd::ChannelOnly),
      build_resnet(18, ResnetDcd::Joint, {}, true),
      build_resnet(50, ResnetDcd::Off),
      build_desk({}),
  };
  DeskOptions vd;
  vd.kind = DeskKind::Vanilla;
  graphs.push_back(build_desk(vd));
  for (const ModelGraph& g : graphs) {
    CAPTURE(g.name);
    Network net(g, 1);
    const CountReport rep = count_params(g);
    CHECK(rep.total.params == net.parameter_count());
  }
}

TEST_CASE("report totals are the sum of rows") {
  const CountReport rep = count_params(build_mobilenetv2(0.5, parse_placement("pw+cls")));
  Tally rows, cats;
  for (const auto& r : rep.rows) rows += {r.params, r.madds};
  for (const auto& c : rep.categories) cats += c;
  CHECK(rows == rep.total);
  CHECK(cats == rep.total);
  CHECK(rep.category(Category::Projections).params > 0);
  CHECK(rep.category(Category::Classifier).params > 1280 * 1000);
  const std::string csv = rep.csv();
  CHECK(csv.rfind("layer,kind,params,madds\n", 0) == 0);
  CHECK(csv.find("classifier,dcd-classifier,") != std::string::npos);
  CHECK(csv.find("\ntotal,," + std::to_string(rep.total.params)) != std::string::npos);
  CHECK(rep.category_csv().find("batch-norm,") != std::string::npos);
}

TEST_CASE("static baselines") {
  const double x05 = static_cast<double>(count_params(build_mobilenetv2(0.5, {})).total.params);
  const double x10 = static_cast<double>(count_params(build_mobilenetv2(1.0, {})).total.params);
  const double r18 = static_cast<double>(count_params(build_resnet(18, ResnetDcd::Off)).backbone().params);
  CHECK(std::abs(x05 - 2.0e6) <= 0.05e6);
  CHECK(std::abs(x10 - 3.5e6) <= 0.05e6);
  CHECK(std::abs(r18 - 11.1e6) <= 0.1e6);
  // ResNet-50 without its classifier.
  CHECK(count_params(build_resnet(50, ResnetDcd::Off)).backbone().params == 23508032);
}

TEST_CASE("mobilenetv2 reference budgets") {
  for (const auto& row : golden_rows()) {
    if (row.spec.arch != "mobilenetv2") continue;
    const GoldenResult r = check_golden(row);
    CAPTURE(row.id);
    CAPTURE(r.params);
    CAPTURE(r.madds);
    CHECK(r.passed());
  }
}

TEST_CASE("madds follow the resolution") {
  const ModelGraph g = build_mobilenetv2(0.5, {});
  const CountReport full = count_madds(g, 224);
  const CountReport small = count_madds(g, 32);
  CHECK(full.total.params == small.total.params);
  CHECK(small.total.madds < full.total.madds);
  CHECK(full.total == count_params(g).total);
  // Stem at 32x32 input: 16x16 output, 3x3 kernel, 3 -> 16 channels.
  CHECK(small.rows[0].madds == 16 * 3 * 9 * 16 * 16);
  CHECK(g.resolution == 224);
}

TEST_CASE("golden table csv") {
  std::vector<GoldenResult> results;
  results.push_back(check_golden(golden_rows()[0]));
  const std::string csv = golden_csv(results);
  CHECK(csv.rfind("id,params,target_params,params_tol,params_ok,madds,target_madds,madds_rel_tol,madds_ok\n", 0) == 0);
  CHECK(csv.find("mobilenetv2-x0.5-static,1968680,2000000,50000,yes,97131840,97000000,0.02,yes\n") != std::string::npos);
}

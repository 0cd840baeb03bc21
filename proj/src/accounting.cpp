#include "dcd/accounting.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace dcd {

std::string_view to_string(Category c) {
  switch (c) {
    case Category::StaticKernel: return "static-kernel";
    case Category::DynamicBranch: return "dynamic-branch";
    case Category::Projections: return "projections";
    case Category::BatchNorm: return "batch-norm";
    case Category::Classifier: return "classifier";
  }
  return "?";
}

std::uint64_t dcd_complexity_formula(std::uint64_t c, std::uint64_t l, std::uint64_t r) {
  if (r == 0) throw ConfigError("complexity formula: r must be >= 1");
  return c * c + 2 * c * l + (2 * c + l * l) * (c / r);
}

namespace {

using u64 = std::uint64_t;

Tally& at(CategoryTally& t, Category c) { return t[static_cast<std::size_t>(c)]; }

// Cheaper of assembling P Phi Q^T (Phi Q^T first, then P) and applying
// Q^T, Phi, P to the feature map.
u64 fusion_madds(u64 ci, u64 co, u64 l, u64 hw) {
  return std::min(l * l * ci + co * l * ci, (ci * l + l * l + l * co) * hw);
}

CategoryTally count_dcd(const ConvSpec& s, const DcdOptions& o, u64 in_hw, u64 out_hw) {
  CategoryTally t{};
  const DcdShape sh = resolve_dcd_shape(s, o);
  const u64 ci = s.c_in, co = s.c_out, g = s.groups, k2 = s.kernel * s.kernel;
  const u64 l = sh.dims.l, lk = sh.dims.l_k, h = sh.hidden;

  at(t, Category::StaticKernel) = {co * (ci / g) * k2, co * (ci / g) * k2 * out_hw};

  Tally& proj = at(t, Category::Projections);
  if (o.use_phi) {
    switch (sh.variant) {
      case DcdVariant::Pointwise: {
        const u64 b = sh.blocks, cib = ci / b, cob = co / b;
        proj.params = b * (cob * l + cib * l);
        proj.madds = b * fusion_madds(cib, cob, l, out_hw);
        break;
      }
      case DcdVariant::KxkChannelOnly:
        proj.params = co * l + ci * l;
        proj.madds = fusion_madds(ci, co, l, out_hw);
        break;
      case DcdVariant::Depthwise:
        proj.params = co * lk + k2 * lk;
        proj.madds = lk * lk * k2 + co * lk * k2;
        break;
      case DcdVariant::KxkJoint:
        proj.params = co * l + ci * l + k2 * lk;
        // Phi x3 R, then x1 Q, then x2 P.
        proj.madds = l * l * lk * k2 + ci * l * l * k2 + co * ci * l * k2;
        break;
      case DcdVariant::Auto: break;
    }
  }

  Tally& branch = at(t, Category::DynamicBranch);
  const u64 out = sh.branch_out();
  branch.params = ci * h + h + h * out + out;
  branch.madds = ci * in_hw + ci * h + h * out;
  if (o.use_lambda) branch.madds += std::min(co * (ci / g) * k2, co * out_hw);
  return t;
}

CategoryTally count_vanilla(const ConvSpec& s, const VanillaOptions& o, u64 in_hw, u64 out_hw) {
  CategoryTally t{};
  const u64 ci = s.c_in, co = s.c_out, g = s.groups, k2 = s.kernel * s.kernel, k = o.kernels;
  const u64 kernel = co * (ci / g) * k2;
  at(t, Category::StaticKernel) = {k * kernel, kernel * out_hw};
  Tally& branch = at(t, Category::DynamicBranch);
  if (o.fc_layers == 1) {
    branch.params = ci * k + k;
    branch.madds = ci * k;
  } else {
    const u64 h = vanilla_hidden(s, o);
    branch.params = ci * h + h + h * k + k;
    branch.madds = ci * h + h * k;
  }
  branch.madds += ci * in_hw + k * kernel;
  return t;
}

}  // namespace

CategoryTally count_conv_node(const LayerDesc& node, const FeatureShape& in, const FeatureShape& out) {
  const ConvSpec& s = node.conv;
  const u64 in_hw = in.h * in.w, out_hw = out.h * out.w;
  CategoryTally t{};
  switch (node.impl) {
    case ConvImpl::Static: {
      const u64 kernel = s.c_out * (s.c_in / s.groups) * s.kernel * s.kernel;
      at(t, Category::StaticKernel) = {kernel, kernel * out_hw};
      break;
    }
    case ConvImpl::Dcd: t = count_dcd(s, node.dcd, in_hw, out_hw); break;
    case ConvImpl::Vanilla: t = count_vanilla(s, node.vanilla, in_hw, out_hw); break;
  }
  if (s.bias) at(t, Category::StaticKernel).params += s.c_out;
  if (s.batch_norm) at(t, Category::BatchNorm).params += 2 * s.c_out;
  if (node.classifier) {
    Tally all;
    for (const Tally& x : t) all += x;
    t = {};
    at(t, Category::Classifier) = all;
  }
  return t;
}

namespace {

CountReport count_graph(const ModelGraph& g) {
  CountReport rep;
  rep.model = g.name;
  rep.resolution = g.resolution;
  for (const LayerDesc& n : g.nodes) {
    CountRow row;
    row.layer = n.name;
    row.kind = n.kind_label();
    if (n.kind == NodeKind::Conv) row.categories = count_conv_node(n, n.in, n.out);
    for (std::size_t c = 0; c < kCategoryCount; ++c) {
      row.params += row.categories[c].params;
      row.madds += row.categories[c].madds;
      rep.categories[c] += row.categories[c];
    }
    rep.total += {row.params, row.madds};
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

}  // namespace

CountReport count_params(const ModelGraph& g) {
  if (g.nodes.empty() || g.output().out.c == 0) throw ConfigError("count: graph '" + g.name + "' is not shaped");
  return count_graph(g);
}

CountReport count_madds(const ModelGraph& g, std::size_t resolution) {
  ModelGraph copy = g;
  copy.infer_shapes(resolution);
  return count_graph(copy);
}

Tally CountReport::backbone() const {
  Tally t = total;
  t.params -= category(Category::Classifier).params;
  t.madds -= category(Category::Classifier).madds;
  return t;
}

std::string CountReport::csv() const {
  std::ostringstream out;
  out << "layer,kind,params,madds\n";
  for (const auto& r : rows) out << r.layer << ',' << r.kind << ',' << r.params << ',' << r.madds << '\n';
  out << "total,," << total.params << ',' << total.madds << '\n';
  return out.str();
}

std::string CountReport::category_csv() const {
  std::ostringstream out;
  out << "category,params,madds\n";
  for (std::size_t c = 0; c < kCategoryCount; ++c)
    out << to_string(static_cast<Category>(c)) << ',' << categories[c].params << ',' << categories[c].madds << '\n';
  return out.str();
}

std::string CountReport::table() const {
  std::ostringstream out;
  out << model << " @ " << resolution << "x" << resolution << '\n';
  out << std::left << std::setw(28) << "layer" << std::setw(26) << "kind" << std::right << std::setw(12)
      << "params" << std::setw(16) << "madds" << '\n';
  for (const auto& r : rows)
    out << std::left << std::setw(28) << r.layer << std::setw(26) << r.kind << std::right << std::setw(12)
        << r.params << std::setw(16) << r.madds << '\n';
  out << std::fixed << std::setprecision(3);
  out << "total: " << total.params / 1e6 << "M params, " << total.madds / 1e6 << "M MAdds\n";
  const Tally bb = backbone();
  out << "without classifier: " << bb.params / 1e6 << "M params, " << bb.madds / 1e6 << "M MAdds\n";
  for (std::size_t c = 0; c < kCategoryCount; ++c)
    out << "  " << std::left << std::setw(16) << to_string(static_cast<Category>(c)) << std::right
        << std::setw(12) << categories[c].params << std::setw(16) << categories[c].madds << '\n';
  return out.str();
}

// ---- reference budgets ----------------------------------------------------

const std::vector<GoldenRow>& golden_rows() {
  static const std::vector<GoldenRow> rows = [] {
    auto mbv2 = [](double width, const char* placement, std::size_t r) {
      ModelSpec s;
      s.arch = "mobilenetv2";
      s.width = width;
      s.placement = parse_placement(placement);
      s.knobs.reduction = r;
      return s;
    };
    auto resnet = [](std::size_t depth, ResnetDcd mode) {
      ModelSpec s;
      s.arch = "resnet";
      s.depth = depth;
      s.resnet_dcd = mode;
      return s;
    };
    return std::vector<GoldenRow>{
        {"mobilenetv2-x0.5-static", mbv2(0.5, "", 8), false, 2.0e6, 0.05e6, 97.0e6, 0.02},
        {"mobilenetv2-x0.5-dcd-pw+cls", mbv2(0.5, "pw+cls", 8), false, 3.1e6, 0.1e6, 104.8e6, 0.02},
        {"mobilenetv2-x1.0-dcd-pw+cls", mbv2(1.0, "pw+cls", 16), false, 5.5e6, 0.15e6, 0, 0},
        {"resnet18-static", resnet(18, ResnetDcd::Off), true, 11.1e6, 0.1e6, 1.81e9, 0.02},
        {"resnet18-dcd", resnet(18, ResnetDcd::ChannelOnly), true, 14.0e6, 0.2e6, 1.83e9, 0.02},
        {"resnet10-dcd", resnet(10, ResnetDcd::ChannelOnly), true, 6.5e6, 0.15e6, 0, 0},
    };
  }();
  return rows;
}

GoldenResult check_golden(const GoldenRow& row) {
  const CountReport rep = count_params(build_model(row.spec));
  const Tally t = row.backbone_only ? rep.backbone() : rep.total;
  GoldenResult r;
  r.row = row;
  r.params = t.params;
  r.madds = t.madds;
  r.params_ok = std::abs(static_cast<double>(t.params) - row.params) <= row.params_tol;
  if (row.madds > 0) r.madds_ok = std::abs(static_cast<double>(t.madds) - row.madds) <= row.madds_rel_tol * row.madds;
  return r;
}

std::string golden_csv(const std::vector<GoldenResult>& results) {
  std::ostringstream out;
  out << "id,params,target_params,params_tol,params_ok,madds,target_madds,madds_rel_tol,madds_ok\n";
  for (const auto& r : results) {
    out << r.row.id << ',' << r.params << ',' << static_cast<u64>(r.row.params) << ','
        << static_cast<u64>(r.row.params_tol) << ',' << (r.params_ok ? "yes" : "no") << ',' << r.madds << ',';
    if (r.row.madds > 0) out << static_cast<u64>(r.row.madds);
    out << ',' << r.row.madds_rel_tol << ',' << (r.madds_ok ? "yes" : "no") << '\n';
  }
  return out.str();
}

}  // namespace dcd

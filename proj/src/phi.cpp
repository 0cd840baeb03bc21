#include "dcd/phi.hpp"

#include <map>
#include <numeric>
#include <sstream>

#include "dcd/train.hpp"

namespace dcd {

namespace {

struct Welford {
  std::size_t n = 0;
  double mean = 0, m2 = 0;
  void add(double v) {
    ++n;
    const double d = v - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (v - mean);
  }
  double variance() const { return n == 0 ? 0.0 : m2 / static_cast<double>(n); }
};

struct LayerAccumulator {
  std::string name;
  std::vector<Welford> entries;
  Welford input;
  std::size_t samples = 0;
};

}  // namespace

PhiVarianceReport analyze_phi(Network& net, const Dataset& data, std::size_t batch_size) {
  if (net.dcd_layers().empty()) throw ConfigError("analyze-phi: the network has no DCD layers");
  if (data.size() == 0) throw ConfigError("analyze-phi: dataset is empty");
  std::vector<LayerAccumulator> acc;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.resize(std::min(batch_size, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    std::vector<PhiObservation> seen;
    ag::Tape t;
    ForwardContext ctx{t, false, false, &seen};
    net.forward(ctx, t.constant(data.gather(idx)));
    if (acc.empty()) {
      for (const auto& o : seen) acc.push_back({o.layer, std::vector<Welford>(o.phi.dim(1)), {}, 0});
    }
    if (seen.size() != acc.size()) throw Error("analyze-phi: observation count changed between batches");
    for (std::size_t l = 0; l < seen.size(); ++l) {
      const Tensor& phi = seen[l].phi;
      LayerAccumulator& a = acc[l];
      const std::size_t n = phi.dim(0), e = phi.dim(1);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < e; ++j) a.entries[j].add(phi(s, j));
      for (double v : seen[l].input.values()) a.input.add(v);
      a.samples += n;
    }
  }
  if (acc.empty()) throw ConfigError("analyze-phi: no DCD layer has fusion coefficients enabled");

  PhiVarianceReport report;
  for (std::size_t l = 0; l < acc.size(); ++l) {
    PhiLayerStats s;
    s.depth = l;
    s.layer = acc[l].name;
    s.entries = acc[l].entries.size();
    s.samples = acc[l].samples;
    double total = 0;
    for (const Welford& w : acc[l].entries) total += w.variance();
    s.raw_variance = total / static_cast<double>(s.entries);
    s.input_variance = acc[l].input.variance();
    s.sigma_phi = s.input_variance > 0 ? s.raw_variance / s.input_variance : 0.0;
    report.layers.push_back(std::move(s));
  }
  return report;
}

std::string PhiVarianceReport::csv() const {
  std::string out = "depth,layer,entries,samples,raw_variance,input_variance,sigma_phi,normalizer\n";
  for (const auto& s : layers) {
    out += std::to_string(s.depth) + ',' + s.layer + ',' + std::to_string(s.entries) + ',' + std::to_string(s.samples) +
           ',' + format_number(s.raw_variance) + ',' + format_number(s.input_variance) + ',' +
           format_number(s.sigma_phi) + ',' + kNormalizer + '\n';
  }
  return out;
}

PhiVarianceReport parse_phi_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "depth,layer,entries,samples,raw_variance,input_variance,sigma_phi,normalizer")
    throw Error("phi report: unexpected header");
  PhiVarianceReport r;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 8) throw Error("phi report: malformed row '" + line + "'");
    PhiLayerStats s;
    s.depth = std::stoul(f[0]);
    s.layer = f[1];
    s.entries = std::stoul(f[2]);
    s.samples = std::stoul(f[3]);
    s.raw_variance = std::stod(f[4]);
    s.input_variance = std::stod(f[5]);
    s.sigma_phi = std::stod(f[6]);
    r.layers.push_back(std::move(s));
  }
  return r;
}

}  // namespace dcd

#pragma once

// Spread of the dynamic fusion coefficients over a dataset.

#include <string>
#include <vector>

#include "dcd/network.hpp"
#include "dcd/task.hpp"

namespace dcd {

struct PhiLayerStats {
  std::size_t depth = 0;  // position among DCD layers with fusion enabled
  std::string layer;
  std::size_t entries = 0;  // L*L (times blocks, or L*L*Lk for the joint form)
  std::size_t samples = 0;
  double raw_variance = 0;    // mean over entries of the per-entry variance across samples
  double input_variance = 0;  // variance of every input feature-map value, pooled
  double sigma_phi = 0;       // raw_variance / input_variance
};

struct PhiVarianceReport {
  // How input_variance is formed; written into every CSV row.
  static constexpr const char* kNormalizer = "pooled";
  std::vector<PhiLayerStats> layers;

  // depth,layer,entries,samples,raw_variance,input_variance,sigma_phi,normalizer
  std::string csv() const;
};

// Population variances (divide by the sample count), so a single sample gives
// zero. Runs in eval mode. Throws ConfigError when the network has no DCD layer
// with fusion coefficients.
PhiVarianceReport analyze_phi(Network& net, const Dataset& data, std::size_t batch_size = 128);

PhiVarianceReport parse_phi_csv(const std::string& text);

}  // namespace dcd

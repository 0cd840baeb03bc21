#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "dcd/layers.hpp"
#include "dcd/model.hpp"

namespace dcd {

// A ModelGraph with allocated layers. Every layer draws its parameters from
// (seed, parameter name), so graphs that differ only in layer implementation
// share their static kernels.
class Network {
 public:
  Network(ModelGraph graph, std::uint64_t seed);

  const ModelGraph& graph() const { return graph_; }
  std::uint64_t seed() const { return seed_; }

  // x [N, C, H, W] -> logits [N, num_classes]. Any spatial size that survives
  // the strides is accepted.
  ag::Var forward(ForwardContext& ctx, ag::Var x);
  // Eval-mode logits.
  Tensor predict(const Tensor& x);

  std::vector<ag::Parameter*> parameters();
  std::vector<NamedTensor> buffers();
  // Parameters followed by buffers, in graph order.
  std::vector<NamedTensor> state();
  std::size_t parameter_count();

  // Allocated layer of a conv node, nullptr for other nodes.
  Layer* layer(std::size_t node) { return layers_.at(node).get(); }
  std::vector<DcdConv*> dcd_layers();

 private:
  ModelGraph graph_;
  std::uint64_t seed_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace dcd

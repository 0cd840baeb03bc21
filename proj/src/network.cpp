#include "dcd/network.hpp"

namespace dcd {

Network::Network(ModelGraph graph, std::uint64_t seed) : graph_(std::move(graph)), seed_(seed) {
  graph_.infer_shapes();
  for (const LayerDesc& n : graph_.nodes) {
    std::unique_ptr<Layer> l;
    if (n.kind == NodeKind::Conv) {
      switch (n.impl) {
        case ConvImpl::Static: l = std::make_unique<StaticConv>(n.name, n.conv, seed); break;
        case ConvImpl::Dcd: l = std::make_unique<DcdConv>(n.name, n.conv, n.dcd, seed); break;
        case ConvImpl::Vanilla: l = std::make_unique<VanillaDynConv>(n.name, n.conv, n.vanilla, seed); break;
      }
    }
    layers_.push_back(std::move(l));
  }
}

ag::Var Network::forward(ForwardContext& ctx, ag::Var x) {
  ag::Tape& t = ctx.tape;
  const Tensor& xv = t.value(x);
  if (xv.rank() != 4 || xv.dim(1) != graph_.in_channels) {
    throw ShapeError("network '" + graph_.name + "' expects [N, " + std::to_string(graph_.in_channels) +
                     ", H, W] input, got " + to_string(xv.shape()));
  }
  std::vector<ag::Var> outs(graph_.nodes.size());
  auto input_of = [&](std::size_t idx) { return idx == kGraphInput ? x : outs[idx]; };
  for (std::size_t i = 0; i < graph_.nodes.size(); ++i) {
    const LayerDesc& n = graph_.nodes[i];
    const ag::Var in = input_of(n.inputs[0]);
    switch (n.kind) {
      case NodeKind::Conv: outs[i] = layers_[i]->forward(ctx, in); break;
      case NodeKind::MaxPool: outs[i] = ag::max_pool2d(t, in, n.pool_kernel, n.pool_stride, n.pool_padding); break;
      case NodeKind::GlobalPool: {
        const std::size_t batch = t.value(in).dim(0);
        outs[i] = ag::reshape(t, ag::global_avg_pool(t, in), {batch, n.in.c, 1, 1});
        break;
      }
      case NodeKind::Add: {
        ag::Var y = ag::add(t, in, input_of(n.inputs[1]));
        if (n.add_activation == Activation::Relu) y = ag::relu(t, y);
        if (n.add_activation == Activation::Relu6) y = ag::relu6(t, y);
        outs[i] = y;
        break;
      }
    }
  }
  const Tensor& out = t.value(outs.back());
  if (out.rank() != 4 || out.dim(2) != 1 || out.dim(3) != 1) {
    throw ShapeError("network output is not [N, K, 1, 1]: " + to_string(out.shape()));
  }
  return ag::reshape(t, outs.back(), {out.dim(0), out.dim(1)});
}

Tensor Network::predict(const Tensor& x) {
  ag::Tape t;
  ForwardContext ctx{t, false, false, nullptr};
  return t.value(forward(ctx, t.constant(x)));
}

std::vector<ag::Parameter*> Network::parameters() {
  std::vector<ag::Parameter*> out;
  for (auto& l : layers_)
    if (l)
      for (ag::Parameter* p : l->parameters()) out.push_back(p);
  return out;
}

std::vector<NamedTensor> Network::buffers() {
  std::vector<NamedTensor> out;
  for (auto& l : layers_)
    if (l)
      for (const NamedTensor& b : l->buffers()) out.push_back(b);
  return out;
}

std::vector<NamedTensor> Network::state() {
  std::vector<NamedTensor> out;
  for (ag::Parameter* p : parameters()) out.push_back({p->name, &p->value});
  for (const NamedTensor& b : buffers()) out.push_back(b);
  return out;
}

std::size_t Network::parameter_count() {
  std::size_t n = 0;
  for (ag::Parameter* p : parameters()) n += p->value.size();
  return n;
}

std::vector<DcdConv*> Network::dcd_layers() {
  std::vector<DcdConv*> out;
  for (auto& l : layers_)
    if (auto* d = dynamic_cast<DcdConv*>(l.get())) out.push_back(d);
  return out;
}

}  // namespace dcd

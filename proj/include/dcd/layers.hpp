#pragma once

// Static, vanilla dynamic, and decomposed dynamic convolution layers.
//
// Every layer computes conv -> [bias] -> [batch norm] -> [activation]. The
// dynamic layers first pool the input, run a small branch that produces
// per-sample coefficients, assemble one kernel per sample and convolve each
// sample with its own kernel.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dcd/autograd.hpp"
#include "dcd/ops.hpp"
#include "dcd/tensor.hpp"

namespace dcd {

enum class Activation { None, Relu, Relu6 };
Activation parse_activation(std::string_view s);
std::string_view to_string(Activation a);

// Largest member of the halving chain C, C/2, C/4, ... with L*L <= C.
std::size_t default_latent_dim(std::size_t c);

struct LatentDims {
  std::size_t l = 0;    // latent channels
  std::size_t l_k = 1;  // latent kernel elements
};

// L_k = floor(k*k/2), L = default_latent_dim(C / L_k). Rejects k = 1 and
// channel counts too small to satisfy L*L*L_k <= C.
LatentDims default_latent_dims_kxk(std::size_t c, std::size_t k);

struct ConvSpec {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
  bool bias = false;
  bool batch_norm = true;
  Activation activation = Activation::Relu;

  ConvParams conv_params() const { return {stride, padding, groups}; }
  bool depthwise() const { return groups > 1 && groups == c_in && c_in == c_out; }
  void validate() const;
};

enum class DcdVariant { Auto, Pointwise, Depthwise, KxkJoint, KxkChannelOnly };
DcdVariant parse_dcd_variant(std::string_view s);
std::string_view to_string(DcdVariant v);

struct DcdOptions {
  DcdVariant variant = DcdVariant::Auto;
  std::size_t blocks = 1;      // block-diagonal residual, pointwise only
  std::size_t reduction = 16;  // branch hidden width = max(C_in, C_out) / reduction
  double latent_multiplier = 1.0;
  std::size_t latent = 0;    // explicit L (0: default rule)
  std::size_t latent_k = 0;  // explicit L_k (0: default rule)
  bool use_lambda = true;
  bool use_phi = true;
};

// Fully resolved structure of a DCD layer; shared by the layer and by the
// parameter/MAdds accounting.
struct DcdShape {
  DcdVariant variant = DcdVariant::Pointwise;
  LatentDims dims;
  std::size_t blocks = 1;
  std::size_t hidden = 1;
  std::size_t lambda_count = 0;
  std::size_t phi_count = 0;
  std::size_t branch_out() const { return lambda_count + phi_count; }
};
DcdShape resolve_dcd_shape(const ConvSpec& spec, const DcdOptions& opts);

struct VanillaOptions {
  std::size_t kernels = 4;
  AttentionMode mode = AttentionMode::Softmax;
  double temperature = 1.0;
  std::size_t reduction = 4;
  std::size_t fc_layers = 2;  // 1: pool -> FC; 2: pool -> FC -> ReLU -> FC
};
std::size_t vanilla_hidden(const ConvSpec& spec, const VanillaOptions& opts);

// One DCD layer's observed dynamic coefficients during a forward pass.
struct PhiObservation {
  std::string layer;
  Tensor input;  // layer input [N, C, H, W]
  Tensor phi;    // raw fusion coefficients [N, phi_count]
};

struct ForwardContext {
  ag::Tape& tape;
  bool train = false;
  // Update batch-norm running statistics (train mode only).
  bool update_stats = false;
  std::vector<PhiObservation>* observer = nullptr;
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

class BatchNorm {
 public:
  BatchNorm(const std::string& prefix, std::size_t channels, BatchNormConfig cfg = {});
  ag::Var forward(ForwardContext& ctx, ag::Var x);

  std::string prefix;
  ag::Parameter gamma;
  ag::Parameter beta;
  Tensor running_mean;
  Tensor running_var;
  BatchNormConfig config;
};

class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const std::string& name() const { return name_; }
  virtual ag::Var forward(ForwardContext& ctx, ag::Var x) = 0;
  virtual std::vector<ag::Parameter*> parameters() = 0;
  // Non-learnable persistent tensors.
  virtual std::vector<NamedTensor> buffers() { return {}; }

  std::size_t parameter_count();

 private:
  std::string name_;
};

// Parameter init is keyed by (seed, parameter name), so two layers with the
// same name and seed draw identical static kernels.
Tensor init_uniform(std::uint64_t seed, const std::string& name, Shape shape, std::size_t fan_in);

// conv output -> bias -> batch norm -> activation
class OutputStage {
 public:
  OutputStage(const std::string& prefix, const ConvSpec& spec, std::uint64_t seed);
  ag::Var apply(ForwardContext& ctx, ag::Var y);
  void collect(std::vector<ag::Parameter*>& out);
  void collect_buffers(std::vector<NamedTensor>& out);

 private:
  std::unique_ptr<ag::Parameter> bias_;
  std::unique_ptr<BatchNorm> bn_;
  Activation act_;
};

class StaticConv : public Layer {
 public:
  StaticConv(std::string name, const ConvSpec& spec, std::uint64_t seed);
  ag::Var forward(ForwardContext& ctx, ag::Var x) override;
  std::vector<ag::Parameter*> parameters() override;
  std::vector<NamedTensor> buffers() override;

  const ConvSpec& spec() const { return spec_; }
  ag::Parameter w0;  // [C_out, C_in/groups, k, k]

 private:
  ConvSpec spec_;
  OutputStage out_;
};

class DcdConv : public Layer {
 public:
  DcdConv(std::string name, const ConvSpec& spec, const DcdOptions& opts, std::uint64_t seed);
  ag::Var forward(ForwardContext& ctx, ag::Var x) override;
  std::vector<ag::Parameter*> parameters() override;
  std::vector<NamedTensor> buffers() override;

  // Per-sample kernels [N, C_out, C_in/groups, k, k] for pooled input [N, C_in].
  Tensor weight(const Tensor& x_pooled);
  // Raw branch output [N, lambda_count + phi_count].
  Tensor branch_output(const Tensor& x_pooled);

  const ConvSpec& spec() const { return spec_; }
  const DcdShape& shape() const { return shape_; }

  ag::Parameter w0;  // [C_out, C_in/groups, k, k]
  // Pointwise / k x k: p [C_out, L], q [C_in, L]; one pair per block.
  // Depthwise: p [C, L_k] and q unused.
  std::vector<ag::Parameter> p;
  std::vector<ag::Parameter> q;
  ag::Parameter r;  // [k*k, L_k]; depthwise and joint only
  ag::Parameter w1, b1, w2, b2;

 private:
  struct Branch {
    ag::Var lambda;  // [N, C_out], invalid when disabled
    ag::Var phi;     // [N, phi_count], invalid when disabled
  };
  Branch run_branch(ag::Tape& t, ag::Var pooled);
  ag::Var assemble(ag::Tape& t, const Branch& b, std::size_t batch);

  ConvSpec spec_;
  DcdShape shape_;
  OutputStage out_;
};

class VanillaDynConv : public Layer {
 public:
  VanillaDynConv(std::string name, const ConvSpec& spec, const VanillaOptions& opts,
                 std::uint64_t seed);
  ag::Var forward(ForwardContext& ctx, ag::Var x) override;
  std::vector<ag::Parameter*> parameters() override;
  std::vector<NamedTensor> buffers() override;

  // Attention scores [N, K] for pooled input [N, C_in].
  Tensor attention(const Tensor& x_pooled);
  Tensor weight(const Tensor& x_pooled);

  const ConvSpec& spec() const { return spec_; }
  const VanillaOptions& options() const { return opts_; }

  ag::Parameter kernels;  // [K, C_out, C_in/groups, k, k]
  ag::Parameter w1, b1;   // first FC
  ag::Parameter w2, b2;   // second FC (two-layer branch only)

 private:
  ag::Var run_attention(ag::Tape& t, ag::Var pooled);
  ag::Var assemble(ag::Tape& t, ag::Var pi);

  ConvSpec spec_;
  VanillaOptions opts_;
  OutputStage out_;
};

// ---- kernel assembly ------------------------------------------------------
//
// Tape-level assembly used by the layers. lambda may be invalid (identity);
// phi may be invalid (no residual). All return per-sample kernels.

// diag(lambda) W0 + P Phi Q^T. w0 [Co, Ci], p [Co, L], q [Ci, L], phi [N, L, L] -> [N, Co, Ci].
ag::Var assemble_1x1(ag::Tape& t, ag::Var lambda, ag::Var phi, ag::Var w0, ag::Var p, ag::Var q,
                     std::size_t batch);
// Block-diagonal residual. phis[b] [N, L_b, L_b].
ag::Var assemble_sparse(ag::Tape& t, ag::Var lambda, const std::vector<ag::Var>& phis, ag::Var w0,
                        const std::vector<ag::Var>& p, const std::vector<ag::Var>& q,
                        std::size_t batch);
// diag(lambda) W0 + P Phi R^T. w0 [C, k2], p [C, Lk], r [k2, Lk], phi [N, Lk, Lk] -> [N, C, k2].
ag::Var assemble_depthwise(ag::Tape& t, ag::Var lambda, ag::Var phi, ag::Var w0, ag::Var p, ag::Var r,
                           std::size_t batch);
// W0 scaled along output channels plus Phi x1 Q x2 P x3 R. w0 [Co, Ci, k2],
// q [Ci, L], p [Co, L], r [k2, Lk], phi [N, L, L, Lk] -> [N, Co, Ci, k2].
ag::Var assemble_kxk_joint(ag::Tape& t, ag::Var lambda, ag::Var phi, ag::Var w0, ag::Var q,
                           ag::Var p, ag::Var r, std::size_t batch);
// Residual P Phi Q^T placed on the centre kernel element only.
// w0 [Co, Ci, k2], phi [N, L, L] -> [N, Co, Ci, k2].
ag::Var assemble_kxk_channel_only(ag::Tape& t, ag::Var lambda, ag::Var phi, ag::Var w0, ag::Var p,
                                  ag::Var q, std::size_t kernel, std::size_t batch);

// Tensor-level wrappers. An empty lambda tensor means identity.
Tensor vanilla_weight(const Tensor& attention, const Tensor& kernels);
Tensor dcd_weight_1x1(const Tensor& lambda, const Tensor& phi, const Tensor& w0, const Tensor& p,
                      const Tensor& q);
Tensor dcd_weight_sparse(const Tensor& lambda, const std::vector<Tensor>& phis, const Tensor& w0,
                         const std::vector<Tensor>& p, const std::vector<Tensor>& q);
Tensor dcd_weight_depthwise(const Tensor& lambda, const Tensor& phi, const Tensor& w0,
                            const Tensor& p, const Tensor& r);
Tensor dcd_weight_kxk_joint(const Tensor& lambda, const Tensor& phi, const Tensor& w0,
                            const Tensor& q, const Tensor& p, const Tensor& r);
Tensor dcd_weight_kxk_channel_only(const Tensor& lambda, const Tensor& phi, const Tensor& w0,
                                   const Tensor& p, const Tensor& q, std::size_t kernel);

// One-hot column selecting the centre of a k x k kernel, shape [k*k, 1].
Tensor center_one_hot(std::size_t kernel);

}  // namespace dcd

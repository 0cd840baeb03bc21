#pragma once

// Reverse-mode differentiation over a recorded tape of tensor primitives.
//
// A Tape records every primitive in execution order (inputs always precede
// their consumers). Each node keeps a forward closure, so the whole tape can be
// replayed from its leaves, and an adjoint closure implementing that
// primitive's vector-Jacobian product. Parameters are bound to leaves by
// identity; after backward() their gradients are read back keyed by the
// Parameter object.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dcd/ops.hpp"
#include "dcd/tensor.hpp"

namespace dcd::ag {

struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

// A named learnable tensor owned by a layer.
struct Parameter {
  std::string name;
  Tensor value;
};

struct AdjointArgs {
  std::span<const Tensor* const> inputs;
  const Tensor& output;
  const Tensor& grad_output;
  // nullptr for inputs that do not require a gradient. Adjoints accumulate.
  std::span<Tensor* const> grad_inputs;
};

class Tape {
 public:
  using ForwardFn = std::function<Tensor(std::span<const Tensor* const>)>;
  using AdjointFn = std::function<void(const AdjointArgs&)>;

  Var constant(Tensor value);
  // Differentiable leaf that is not a parameter (e.g. the layer input).
  Var input(Tensor value);
  // Leaf bound to a parameter. Binding the same parameter twice returns the same leaf.
  Var param(Parameter& p);

  Var record(std::string_view op, std::vector<Var> inputs, ForwardFn forward, AdjointFn adjoint);

  const Tensor& value(Var v) const;
  // Gradient after backward(); exact zeros for nodes the loss does not reach.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const;

  // Seeds d(loss)/d(loss) = seed and propagates. Throws if loss is not a
  // scalar or a non-finite gradient appears.
  void backward(Var loss, double seed = 1.0);

  const std::vector<std::pair<Parameter*, Var>>& bound_parameters() const { return params_; }
  std::vector<std::pair<Parameter*, Tensor>> parameter_gradients() const;

  // Re-executes every non-leaf node from the recorded leaves and reports
  // whether all outputs reproduce bit-exactly.
  bool replay_matches() const;

  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(Var v) const { return nodes_.at(v.id).op; }
  const std::vector<std::size_t>& inputs_of(Var v) const { return nodes_.at(v.id).inputs; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    ForwardFn forward;
    AdjointFn adjoint;
  };

  Var leaf(std::string_view op, Tensor value, bool requires_grad);
  Tensor& grad_slot(std::size_t id);

  std::vector<Node> nodes_;
  std::vector<std::pair<Parameter*, Var>> params_;
};

// ---- primitives -----------------------------------------------------------

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var add_scalar(Tape& t, Var a, double s);
// x [N, D] + b [D] broadcast over rows.
Var add_row_bias(Tape& t, Var x, Var b);
// x [N, C, H, W] + b [C] broadcast over samples and positions.
Var add_channel_bias(Tape& t, Var x, Var b);

// Rank 2 or 3 operands; a rank-3 operand is a batch of matrices and a rank-2
// operand is shared across the batch.
Var matmul(Tape& t, Var a, Var b);
// Swaps the last two axes.
Var transpose(Tape& t, Var a);
Var reshape(Tape& t, Var a, Shape shape);
Var permute(Tape& t, Var a, std::vector<std::size_t> perm);
// Columns [begin, end) of x [N, D].
Var slice_cols(Tape& t, Var x, std::size_t begin, std::size_t end);
// out[n, r, ...] = lambda[n, r] * w[r, ...] for lambda [N, R] and w [R, ...].
Var scale_rows(Tape& t, Var lambda, Var w);
// Per-sample block-diagonal assembly of blocks [N, r_b, c_b].
Var block_diag(Tape& t, std::vector<Var> blocks);
// n-mode product (1-based mode) of a tensor of any rank with m [p x d].
Var mode_product(Tape& t, Var x, Var m, std::size_t mode);

Var conv2d(Tape& t, Var x, Var w, const ConvParams& p);
Var conv2d_per_sample(Tape& t, Var x, Var w, const ConvParams& p);
Var global_avg_pool(Tape& t, Var x);
Var max_pool2d(Tape& t, Var x, std::size_t kernel, std::size_t stride, std::size_t padding);

Var relu(Tape& t, Var x);
Var relu6(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
// Row-wise softmax of x / temperature for x [N, K].
Var softmax(Tape& t, Var x, double temperature);
Var attention(Tape& t, Var logits, AttentionMode mode, double temperature);

// Training-mode batch norm over (N, H, W) using batch statistics.
Var batch_norm_train(Tape& t, Var x, Var gamma, Var beta, double epsilon);
// Inference-mode batch norm with fixed statistics.
Var batch_norm_eval(Tape& t, Var x, Var gamma, Var beta, const Tensor& mean,
                    const Tensor& variance, double epsilon);

Var sum(Tape& t, Var x);
// Mean softmax cross-entropy of logits [N, K] against integer labels.
Var cross_entropy(Tape& t, Var logits, std::vector<std::size_t> labels);

}  // namespace dcd::ag

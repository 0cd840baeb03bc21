#pragma once

#include <string_view>

#include "dcd/kernels.hpp"
#include "dcd/tensor.hpp"

namespace dcd {

struct ConvParams {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

// Geometry for x [N, C_in, H, W] and a kernel of shape [C_out, C_in/groups, k, k]
// (or [N, C_out, C_in/groups, k, k] when per_sample is set). Validates shapes.
kernels::ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, const ConvParams& p,
                                    bool per_sample);

// Cross-correlation with zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const ConvParams& p = {});
// Sample n is convolved with w[n].
Tensor conv2d_per_sample(const Tensor& x, const Tensor& w, const ConvParams& p = {});

// [N, C, H, W] -> [N, C]
Tensor global_avg_pool(const Tensor& x);

// Max pooling with implicit -inf padding. argmax (optional) receives, per
// output element, the flat input index of the selected value.
Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding,
                  std::vector<std::size_t>* argmax = nullptr);

enum class AttentionMode { Softmax, Sigmoid };

AttentionMode parse_attention_mode(std::string_view s);
std::string_view to_string(AttentionMode m);

// Softmax of logits / temperature per row (max-subtracted), or the logistic
// function entrywise. Temperature only affects softmax but must be positive
// in both modes.
Tensor attention_activation(const Tensor& logits, AttentionMode mode, double temperature);

struct BatchNormConfig {
  double epsilon = 1e-5;
  // running = momentum * running + (1 - momentum) * batch
  double momentum = 0.9;
};

struct BatchStats {
  Tensor mean;      // [C]
  Tensor variance;  // [C], biased (population) variance
};

// Per-channel statistics over (N, H, W) of x [N, C, H, W].
BatchStats batch_statistics(const Tensor& x);

// gamma * (x - mean) / sqrt(var + eps) + beta, applied per channel.
Tensor batch_norm_apply(const Tensor& x, const Tensor& mean, const Tensor& variance,
                        const Tensor& gamma, const Tensor& beta, double epsilon);

}  // namespace dcd

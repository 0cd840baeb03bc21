#include "dcd/ops.hpp"

#include <algorithm>
#include <cmath>

namespace dcd {

kernels::ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, const ConvParams& p,
                                    bool per_sample) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, per_sample ? 5 : 4, "conv2d weight");
  const std::size_t off = per_sample ? 1 : 0;
  kernels::ConvGeometry g;
  g.batch = x.dim(0);
  g.c_in = x.dim(1);
  g.height = x.dim(2);
  g.width = x.dim(3);
  g.c_out = w.dim(off);
  g.kernel = w.dim(off + 2);
  g.stride = p.stride;
  g.padding = p.padding;
  g.groups = p.groups;
  if (p.groups == 0 || p.stride == 0) throw ShapeError("conv2d: groups and stride must be >= 1");
  if (per_sample && w.dim(0) != g.batch) throw ShapeError("conv2d: per-sample weight batch mismatch");
  if (w.dim(off + 3) != g.kernel) throw ShapeError("conv2d: kernel must be square");
  if (g.c_in % g.groups || g.c_out % g.groups) throw ShapeError("conv2d: channels not divisible by groups");
  if (w.dim(off + 1) != g.c_in / g.groups) {
    throw ShapeError("conv2d: weight " + to_string(w.shape()) + " incompatible with input " +
                     to_string(x.shape()));
  }
  if (g.height + 2 * g.padding < g.kernel || g.width + 2 * g.padding < g.kernel) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  return g;
}

namespace {

Tensor conv_impl(const Tensor& x, const Tensor& w, const ConvParams& p, bool per_sample) {
  const auto g = conv_geometry(x, w, p, per_sample);
  Tensor y({g.batch, g.c_out, g.out_height(), g.out_width()});
  kernels::omp::conv2d_forward(g, x.values(), w.values(), per_sample, y.values());
  check_finite(y, "conv2d");
  return y;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const ConvParams& p) {
  return conv_impl(x, w, p, false);
}

Tensor conv2d_per_sample(const Tensor& x, const Tensor& w, const ConvParams& p) {
  return conv_impl(x, w, p, true);
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  Tensor out({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    const double* p = x.data() + i * hw;
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += p[j];
    out[i] = s / static_cast<double>(hw);
  }
  return out;
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t padding,
                  std::vector<std::size_t>* argmax) {
  require_rank(x, 4, "max_pool2d");
  if (kernel == 0 || stride == 0) throw ShapeError("max_pool2d: kernel and stride must be >= 1");
  if (padding >= kernel) throw ShapeError("max_pool2d: padding must be smaller than the kernel");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h + 2 * padding < kernel || w + 2 * padding < kernel) throw ShapeError("max_pool2d: input too small");
  const std::size_t oh = (h + 2 * padding - kernel) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kernel) / stride + 1;
  Tensor out({n, c, oh, ow});
  if (argmax) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j, ++o) {
        double best = 0.0;
        std::size_t best_idx = 0;
        bool found = false;
        for (std::size_t a = 0; a < kernel; ++a) {
          const std::size_t r = i * stride + a;
          if (r < padding || r - padding >= h) continue;
          for (std::size_t b = 0; b < kernel; ++b) {
            const std::size_t s = j * stride + b;
            if (s < padding || s - padding >= w) continue;
            const std::size_t idx = base + (r - padding) * w + (s - padding);
            if (!found || x[idx] > best) {
              best = x[idx];
              best_idx = idx;
              found = true;
            }
          }
        }
        out[o] = best;
        if (argmax) (*argmax)[o] = best_idx;
      }
    }
  }
  return out;
}

AttentionMode parse_attention_mode(std::string_view s) {
  if (s == "softmax") return AttentionMode::Softmax;
  if (s == "sigmoid") return AttentionMode::Sigmoid;
  throw ConfigError("unknown attention mode '" + std::string(s) + "'");
}

std::string_view to_string(AttentionMode m) {
  return m == AttentionMode::Softmax ? "softmax" : "sigmoid";
}

Tensor attention_activation(const Tensor& logits, AttentionMode mode, double temperature) {
  require_rank(logits, 2, "attention_activation");
  if (!(temperature > 0.0)) throw Error("attention_activation: temperature must be positive");
  check_finite(logits, "attention_activation");
  if (mode == AttentionMode::Sigmoid) return sigmoid(logits);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = logits(i, 0) / temperature;
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits(i, j) / temperature);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out(i, j) = std::exp(logits(i, j) / temperature - mx);
      z += out(i, j);
    }
    for (std::size_t j = 0; j < k; ++j) out(i, j) /= z;
  }
  return out;
}

BatchStats batch_statistics(const Tensor& x) {
  require_rank(x, 4, "batch_statistics");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const double count = static_cast<double>(n * hw);
  BatchStats st{Tensor({c}), Tensor({c})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = x.data() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) s += p[j];
    }
    const double mean = s / count;
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* p = x.data() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) v += (p[j] - mean) * (p[j] - mean);
    }
    st.mean[ch] = mean;
    st.variance[ch] = v / count;
  }
  return st;
}

Tensor batch_norm_apply(const Tensor& x, const Tensor& mean, const Tensor& variance,
                        const Tensor& gamma, const Tensor& beta, double epsilon) {
  require_rank(x, 4, "batch_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (const Tensor* t : {&mean, &variance, &gamma, &beta}) require_shape(*t, {c}, "batch_norm");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double inv = 1.0 / std::sqrt(variance[ch] + epsilon);
      const double* p = x.data() + (i * c + ch) * hw;
      double* q = y.data() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) q[j] = gamma[ch] * ((p[j] - mean[ch]) * inv) + beta[ch];
    }
  }
  check_finite(y, "batch_norm");
  return y;
}

}  // namespace dcd

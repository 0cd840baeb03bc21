#include "dcd/layers.hpp"

#include <algorithm>
#include <cmath>

#include "dcd/rng.hpp"

namespace dcd {

Activation parse_activation(std::string_view s) {
  if (s == "none") return Activation::None;
  if (s == "relu") return Activation::Relu;
  if (s == "relu6") return Activation::Relu6;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::None: return "none";
    case Activation::Relu: return "relu";
    case Activation::Relu6: return "relu6";
  }
  return "?";
}

DcdVariant parse_dcd_variant(std::string_view s) {
  if (s == "auto") return DcdVariant::Auto;
  if (s == "pointwise") return DcdVariant::Pointwise;
  if (s == "depthwise") return DcdVariant::Depthwise;
  if (s == "kxk-joint") return DcdVariant::KxkJoint;
  if (s == "kxk-channel-only") return DcdVariant::KxkChannelOnly;
  throw ConfigError("unknown DCD variant '" + std::string(s) + "'");
}

std::string_view to_string(DcdVariant v) {
  switch (v) {
    case DcdVariant::Auto: return "auto";
    case DcdVariant::Pointwise: return "pointwise";
    case DcdVariant::Depthwise: return "depthwise";
    case DcdVariant::KxkJoint: return "kxk-joint";
    case DcdVariant::KxkChannelOnly: return "kxk-channel-only";
  }
  return "?";
}

std::size_t default_latent_dim(std::size_t c) {
  if (c == 0) throw ConfigError("default_latent_dim: channel count must be >= 1");
  std::size_t l = c;
  while (l * l > c) l /= 2;
  return l;
}

LatentDims default_latent_dims_kxk(std::size_t c, std::size_t k) {
  if (k < 2) throw ConfigError("default_latent_dims_kxk: k = 1 has no kernel elements to fuse; use the 1x1 form");
  LatentDims d;
  d.l_k = k * k / 2;
  const std::size_t base = c / d.l_k;
  if (base == 0) {
    throw ConfigError("default_latent_dims_kxk: C = " + std::to_string(c) + " too small for k = " +
                      std::to_string(k));
  }
  d.l = default_latent_dim(base);
  if (d.l * d.l * d.l_k > c || d.l_k >= k * k) {
    throw ConfigError("default_latent_dims_kxk: latent constraint violated");
  }
  return d;
}

void ConvSpec::validate() const {
  if (c_in == 0 || c_out == 0 || kernel == 0 || stride == 0 || groups == 0) {
    throw ConfigError("conv spec: channels, kernel, stride and groups must be >= 1");
  }
  if (c_in % groups || c_out % groups) throw ConfigError("conv spec: channels not divisible by groups");
}

namespace {

std::size_t scaled(std::size_t base, double mult) {
  const auto v = static_cast<long long>(std::llround(static_cast<double>(base) * mult));
  return static_cast<std::size_t>(std::max<long long>(1, v));
}

}  // namespace

DcdShape resolve_dcd_shape(const ConvSpec& spec, const DcdOptions& opts) {
  spec.validate();
  if (opts.reduction == 0) throw ConfigError("dcd: reduction ratio must be >= 1");
  if (opts.blocks == 0) throw ConfigError("dcd: blocks must be >= 1");
  if (!(opts.latent_multiplier > 0.0)) throw ConfigError("dcd: latent multiplier must be positive");
  if (!opts.use_lambda && !opts.use_phi) throw ConfigError("dcd: at least one of lambda and phi must be enabled");

  DcdShape s;
  s.variant = opts.variant;
  if (s.variant == DcdVariant::Auto) {
    if (spec.kernel == 1 && spec.groups == 1) {
      s.variant = DcdVariant::Pointwise;
    } else if (spec.depthwise()) {
      s.variant = DcdVariant::Depthwise;
    } else if (spec.groups == 1) {
      s.variant = DcdVariant::KxkChannelOnly;
    } else {
      throw ConfigError("dcd: grouped convolution is only supported in depthwise form");
    }
  }
  const std::size_t c = std::max(spec.c_in, spec.c_out);
  const std::size_t k2 = spec.kernel * spec.kernel;
  s.hidden = std::max<std::size_t>(1, c / opts.reduction);

  auto latent = [&](std::size_t base) {
    return opts.latent ? opts.latent : scaled(default_latent_dim(base), opts.latent_multiplier);
  };
  switch (s.variant) {
    case DcdVariant::Pointwise:
      if (spec.kernel != 1 || spec.groups != 1) throw ConfigError("dcd pointwise: needs a 1x1 ungrouped conv");
      if (spec.c_in % opts.blocks || spec.c_out % opts.blocks) {
        throw ConfigError("dcd: " + std::to_string(opts.blocks) + " blocks do not divide the channels");
      }
      s.blocks = opts.blocks;
      s.dims = {latent(c / opts.blocks), 1};
      s.phi_count = s.blocks * s.dims.l * s.dims.l;
      break;
    case DcdVariant::Depthwise:
      if (!spec.depthwise()) throw ConfigError("dcd depthwise: needs a depthwise conv");
      if (spec.kernel < 2) throw ConfigError("dcd depthwise: kernel must be >= 2");
      s.dims = {0, opts.latent_k ? opts.latent_k : k2 / 2};
      if (s.dims.l_k > k2) throw ConfigError("dcd depthwise: L_k exceeds k*k");
      s.phi_count = s.dims.l_k * s.dims.l_k;
      break;
    case DcdVariant::KxkJoint: {
      if (spec.groups != 1) throw ConfigError("dcd kxk: needs an ungrouped conv");
      LatentDims d = default_latent_dims_kxk(c, spec.kernel);
      if (opts.latent_k) d.l_k = opts.latent_k;
      d.l = opts.latent ? opts.latent : scaled(d.l, opts.latent_multiplier);
      if (d.l_k > k2) throw ConfigError("dcd kxk: L_k exceeds k*k");
      s.dims = d;
      s.phi_count = d.l * d.l * d.l_k;
      break;
    }
    case DcdVariant::KxkChannelOnly:
      if (spec.groups != 1) throw ConfigError("dcd kxk: needs an ungrouped conv");
      if (spec.kernel % 2 == 0) throw ConfigError("dcd channel-only: kernel must be odd to have a centre");
      s.dims = {latent(c), 1};
      s.phi_count = s.dims.l * s.dims.l;
      break;
    case DcdVariant::Auto:
      break;
  }
  if (opts.blocks > 1 && s.variant != DcdVariant::Pointwise) {
    throw ConfigError("dcd: block-diagonal residual is only defined for pointwise layers");
  }
  s.lambda_count = opts.use_lambda ? spec.c_out : 0;
  if (!opts.use_phi) s.phi_count = 0;
  return s;
}

std::size_t vanilla_hidden(const ConvSpec& spec, const VanillaOptions& opts) {
  if (opts.reduction == 0) throw ConfigError("vanilla: reduction ratio must be >= 1");
  return std::max<std::size_t>(1, spec.c_in / opts.reduction);
}

Tensor init_uniform(std::uint64_t seed, const std::string& name, Shape shape, std::size_t fan_in) {
  Rng rng(derive_seed(seed, name));
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, fan_in)));
  return rng.uniform_tensor(std::move(shape), -bound, bound);
}

std::size_t Layer::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

// ---- batch norm -----------------------------------------------------------

BatchNorm::BatchNorm(const std::string& prefix, std::size_t channels, BatchNormConfig cfg)
    : prefix(prefix),
      gamma{prefix + ".gamma", Tensor({channels}, 1.0)},
      beta{prefix + ".beta", Tensor({channels}, 0.0)},
      running_mean({channels}, 0.0),
      running_var({channels}, 1.0),
      config(cfg) {}

ag::Var BatchNorm::forward(ForwardContext& ctx, ag::Var x) {
  ag::Tape& t = ctx.tape;
  if (!ctx.train) {
    return ag::batch_norm_eval(t, x, t.param(gamma), t.param(beta), running_mean, running_var,
                               config.epsilon);
  }
  if (ctx.update_stats) {
    const auto st = batch_statistics(t.value(x));
    const double m = config.momentum;
    for (std::size_t c = 0; c < running_mean.size(); ++c) {
      running_mean[c] = m * running_mean[c] + (1.0 - m) * st.mean[c];
      running_var[c] = m * running_var[c] + (1.0 - m) * st.variance[c];
    }
  }
  return ag::batch_norm_train(t, x, t.param(gamma), t.param(beta), config.epsilon);
}

// ---- output stage ---------------------------------------------------------

OutputStage::OutputStage(const std::string& prefix, const ConvSpec& spec, std::uint64_t seed)
    : act_(spec.activation) {
  if (spec.bias) {
    const std::size_t fan_in = spec.c_in / spec.groups * spec.kernel * spec.kernel;
    bias_ = std::make_unique<ag::Parameter>(ag::Parameter{
        prefix + ".bias", init_uniform(seed, prefix + ".bias", {spec.c_out}, fan_in)});
  }
  if (spec.batch_norm) bn_ = std::make_unique<BatchNorm>(prefix + ".bn", spec.c_out);
}

ag::Var OutputStage::apply(ForwardContext& ctx, ag::Var y) {
  ag::Tape& t = ctx.tape;
  if (bias_) y = ag::add_channel_bias(t, y, t.param(*bias_));
  if (bn_) y = bn_->forward(ctx, y);
  switch (act_) {
    case Activation::None: break;
    case Activation::Relu: y = ag::relu(t, y); break;
    case Activation::Relu6: y = ag::relu6(t, y); break;
  }
  return y;
}

void OutputStage::collect(std::vector<ag::Parameter*>& out) {
  if (bias_) out.push_back(bias_.get());
  if (bn_) {
    out.push_back(&bn_->gamma);
    out.push_back(&bn_->beta);
  }
}

void OutputStage::collect_buffers(std::vector<NamedTensor>& out) {
  if (!bn_) return;
  out.push_back({bn_->prefix + ".running_mean", &bn_->running_mean});
  out.push_back({bn_->prefix + ".running_var", &bn_->running_var});
}

// ---- static conv ----------------------------------------------------------

namespace {

Shape kernel_shape(const ConvSpec& s) { return {s.c_out, s.c_in / s.groups, s.kernel, s.kernel}; }
std::size_t kernel_fan_in(const ConvSpec& s) { return s.c_in / s.groups * s.kernel * s.kernel; }

}  // namespace

StaticConv::StaticConv(std::string name, const ConvSpec& spec, std::uint64_t seed)
    : Layer(std::move(name)),
      w0{this->name() + ".w0", Tensor()},
      spec_(spec),
      out_(this->name(), spec, seed) {
  spec_.validate();
  w0.value = init_uniform(seed, w0.name, kernel_shape(spec_), kernel_fan_in(spec_));
}

ag::Var StaticConv::forward(ForwardContext& ctx, ag::Var x) {
  ag::Tape& t = ctx.tape;
  return out_.apply(ctx, ag::conv2d(t, x, t.param(w0), spec_.conv_params()));
}

std::vector<ag::Parameter*> StaticConv::parameters() {
  std::vector<ag::Parameter*> out{&w0};
  out_.collect(out);
  return out;
}

std::vector<NamedTensor> StaticConv::buffers() {
  std::vector<NamedTensor> out;
  out_.collect_buffers(out);
  return out;
}

// ---- kernel assembly ------------------------------------------------------

namespace {

ag::Var lambda_or_ones(ag::Tape& t, ag::Var lambda, std::size_t batch, std::size_t rows) {
  if (lambda.valid()) return lambda;
  return t.constant(Tensor({batch, rows}, 1.0));
}

ag::Var residual_pq(ag::Tape& t, ag::Var phi, ag::Var p, ag::Var q) {
  // (Phi Q^T) first, then P (.)
  return ag::matmul(t, p, ag::matmul(t, phi, ag::transpose(t, q)));
}

}  // namespace

ag::Var assemble_1x1(ag::Tape& t, ag::Var lambda, ag::Var phi, ag::Var w0, ag::Var p, ag::Var q,
                     std::size_t batch) {
  ag::Var w = ag::scale_rows(t, lambda_or_ones(t, lambda, batch, t.value(w0).dim(0)), w0);
  if (!phi.valid()) return w;
  return ag::add(t, w, residual_pq(t, phi, p, q));
}

ag::Var assemble_sparse(ag::Tape& t, ag::Var lambda, const std::vector<ag::Var>& phis, ag::Var w0,
                        const std::vector<ag::Var>& p, const std::vector<ag::Var>& q,
                        std::size_t batch) {
  ag::Var w = ag::scale_rows(t, lambda_or_ones(t, lambda, batch, t.value(w0).dim(0)), w0);
  if (phis.empty()) return w;
  if (phis.size() != p.size() || p.size() != q.size()) throw ShapeError("assemble_sparse: block count mismatch");
  if (phis.size() == 1) return ag::add(t, w, residual_pq(t, phis[0], p[0], q[0]));
  std::vector<ag::Var> blocks;
  for (std::size_t b = 0; b < phis.size(); ++b) blocks.push_back(residual_pq(t, phis[b], p[b], q[b]));
  return ag::add(t, w, ag::block_diag(t, blocks));
}

ag::Var assemble_depthwise(ag::Tape& t, ag::Var lambda, ag::Var phi, ag::Var w0, ag::Var p, ag::Var r,
                           std::size_t batch) {
  ag::Var w = ag::scale_rows(t, lambda_or_ones(t, lambda, batch, t.value(w0).dim(0)), w0);
  if (!phi.valid()) return w;
  return ag::add(t, w, residual_pq(t, phi, p, r));
}

ag::Var assemble_kxk_joint(ag::Tape& t, ag::Var lambda, ag::Var phi, ag::Var w0, ag::Var q,
                           ag::Var p, ag::Var r, std::size_t batch) {
  ag::Var w = ag::scale_rows(t, lambda_or_ones(t, lambda, batch, t.value(w0).dim(0)), w0);
  if (!phi.valid()) return w;
  // phi [N, L, L, Lk]: mode 2 -> input channels, mode 3 -> output channels,
  // mode 4 -> kernel elements (modes 1..3 of the per-sample tensor).
  ag::Var res = ag::mode_product(t, phi, q, 2);
  res = ag::mode_product(t, res, p, 3);
  res = ag::mode_product(t, res, r, 4);
  res = ag::permute(t, res, {0, 2, 1, 3});
  return ag::add(t, w, res);
}

Tensor center_one_hot(std::size_t kernel) {
  if (kernel % 2 == 0) throw ConfigError("center_one_hot: kernel must be odd");
  Tensor r({kernel * kernel, 1});
  r[(kernel * kernel) / 2] = 1.0;
  return r;
}

ag::Var assemble_kxk_channel_only(ag::Tape& t, ag::Var lambda, ag::Var phi, ag::Var w0, ag::Var p,
                                  ag::Var q, std::size_t kernel, std::size_t batch) {
  ag::Var w = ag::scale_rows(t, lambda_or_ones(t, lambda, batch, t.value(w0).dim(0)), w0);
  if (!phi.valid()) return w;
  ag::Var res = residual_pq(t, phi, p, q);
  const Shape& rs = t.value(res).shape();
  res = ag::reshape(t, res, {rs[0], rs[1], rs[2], 1});
  res = ag::mode_product(t, res, t.constant(center_one_hot(kernel)), 4);
  return ag::add(t, w, res);
}

namespace {

ag::Var lambda_var(ag::Tape& t, const Tensor& lambda) {
  return lambda.empty() ? ag::Var{} : t.constant(lambda);
}

std::size_t batch_of(const Tensor& phi, const Tensor& lambda) {
  if (!phi.empty()) return phi.dim(0);
  if (!lambda.empty()) return lambda.dim(0);
  throw ShapeError("dcd weight: need lambda or phi to determine the batch");
}

ag::Var phi_var(ag::Tape& t, const Tensor& phi) { return phi.empty() ? ag::Var{} : t.constant(phi); }

}  // namespace

Tensor vanilla_weight(const Tensor& attention, const Tensor& kernels) {
  require_rank(attention, 2, "vanilla_weight");
  if (kernels.rank() < 2 || kernels.dim(0) != attention.dim(1)) {
    throw ShapeError("vanilla_weight: attention has " + std::to_string(attention.dim(1)) +
                     " entries but kernels are " + to_string(kernels.shape()));
  }
  ag::Tape t;
  const std::size_t k = kernels.dim(0), d = kernels.size() / k;
  ag::Var flat = ag::reshape(t, t.constant(kernels), {k, d});
  Shape out{attention.dim(0)};
  out.insert(out.end(), kernels.shape().begin() + 1, kernels.shape().end());
  return t.value(ag::reshape(t, ag::matmul(t, t.constant(attention), flat), out));
}

Tensor dcd_weight_1x1(const Tensor& lambda, const Tensor& phi, const Tensor& w0, const Tensor& p,
                      const Tensor& q) {
  ag::Tape t;
  return t.value(assemble_1x1(t, lambda_var(t, lambda), phi_var(t, phi), t.constant(w0), t.constant(p),
                              t.constant(q), batch_of(phi, lambda)));
}

Tensor dcd_weight_sparse(const Tensor& lambda, const std::vector<Tensor>& phis, const Tensor& w0,
                         const std::vector<Tensor>& p, const std::vector<Tensor>& q) {
  ag::Tape t;
  std::vector<ag::Var> pv, qv, phiv;
  for (const auto& x : phis) phiv.push_back(t.constant(x));
  for (const auto& x : p) pv.push_back(t.constant(x));
  for (const auto& x : q) qv.push_back(t.constant(x));
  if (phis.empty() && lambda.empty()) throw ShapeError("dcd_weight_sparse: empty input");
  const std::size_t batch = phis.empty() ? lambda.dim(0) : phis[0].dim(0);
  const std::size_t c = w0.dim(0);
  if (!phis.empty() && (c % phis.size() || w0.dim(1) % phis.size())) {
    throw ShapeError("dcd_weight_sparse: " + std::to_string(phis.size()) + " blocks do not divide " +
                     to_string(w0.shape()));
  }
  return t.value(assemble_sparse(t, lambda_var(t, lambda), phiv, t.constant(w0), pv, qv, batch));
}

Tensor dcd_weight_depthwise(const Tensor& lambda, const Tensor& phi, const Tensor& w0,
                            const Tensor& p, const Tensor& r) {
  ag::Tape t;
  return t.value(assemble_depthwise(t, lambda_var(t, lambda), phi_var(t, phi), t.constant(w0),
                                    t.constant(p), t.constant(r), batch_of(phi, lambda)));
}

Tensor dcd_weight_kxk_joint(const Tensor& lambda, const Tensor& phi, const Tensor& w0,
                            const Tensor& q, const Tensor& p, const Tensor& r) {
  ag::Tape t;
  return t.value(assemble_kxk_joint(t, lambda_var(t, lambda), phi_var(t, phi), t.constant(w0),
                                    t.constant(q), t.constant(p), t.constant(r),
                                    batch_of(phi, lambda)));
}

Tensor dcd_weight_kxk_channel_only(const Tensor& lambda, const Tensor& phi, const Tensor& w0,
                                   const Tensor& p, const Tensor& q, std::size_t kernel) {
  ag::Tape t;
  return t.value(assemble_kxk_channel_only(t, lambda_var(t, lambda), phi_var(t, phi), t.constant(w0),
                                           t.constant(p), t.constant(q), kernel,
                                           batch_of(phi, lambda)));
}

// ---- DCD layer ------------------------------------------------------------

DcdConv::DcdConv(std::string name, const ConvSpec& spec, const DcdOptions& opts, std::uint64_t seed)
    : Layer(std::move(name)), spec_(spec), shape_(resolve_dcd_shape(spec, opts)), out_(this->name(), spec, seed) {
  const std::string& n = this->name();
  const std::size_t k2 = spec_.kernel * spec_.kernel;
  auto make = [&](const std::string& suffix, Shape shape, std::size_t fan_in) {
    return ag::Parameter{n + "." + suffix, init_uniform(seed, n + "." + suffix, std::move(shape), fan_in)};
  };
  w0 = make("w0", kernel_shape(spec_), kernel_fan_in(spec_));
  const std::size_t l = shape_.dims.l, lk = shape_.dims.l_k;
  if (opts.use_phi) {
    switch (shape_.variant) {
      case DcdVariant::Pointwise: {
        const std::size_t b = shape_.blocks;
        for (std::size_t i = 0; i < b; ++i) {
          const std::string tag = b == 1 ? "" : "." + std::to_string(i);
          p.push_back(make("p" + tag, {spec_.c_out / b, l}, l));
          q.push_back(make("q" + tag, {spec_.c_in / b, l}, spec_.c_in / b));
        }
        break;
      }
      case DcdVariant::Depthwise:
        p.push_back(make("p", {spec_.c_out, lk}, lk));
        r = make("r", {k2, lk}, lk);
        break;
      case DcdVariant::KxkJoint:
        p.push_back(make("p", {spec_.c_out, l}, l));
        q.push_back(make("q", {spec_.c_in, l}, spec_.c_in));
        r = make("r", {k2, lk}, lk);
        break;
      case DcdVariant::KxkChannelOnly:
        p.push_back(make("p", {spec_.c_out, l}, l));
        q.push_back(make("q", {spec_.c_in, l}, spec_.c_in));
        break;
      case DcdVariant::Auto: break;
    }
  }
  w1 = make("w1", {spec_.c_in, shape_.hidden}, spec_.c_in);
  b1 = make("b1", {shape_.hidden}, spec_.c_in);
  // Zero second layer: Lambda = 1 and Phi = 0, so W(x) = W0 at initialisation.
  w2 = ag::Parameter{n + ".w2", Tensor({shape_.hidden, shape_.branch_out()})};
  b2 = ag::Parameter{n + ".b2", Tensor({shape_.branch_out()})};
}

std::vector<ag::Parameter*> DcdConv::parameters() {
  std::vector<ag::Parameter*> out{&w0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    out.push_back(&p[i]);
    if (i < q.size()) out.push_back(&q[i]);
  }
  if (!r.value.empty()) out.push_back(&r);
  for (auto* x : {&w1, &b1, &w2, &b2}) out.push_back(x);
  out_.collect(out);
  return out;
}

std::vector<NamedTensor> DcdConv::buffers() {
  std::vector<NamedTensor> out;
  out_.collect_buffers(out);
  return out;
}

DcdConv::Branch DcdConv::run_branch(ag::Tape& t, ag::Var pooled) {
  ag::Var h = ag::relu(t, ag::add_row_bias(t, ag::matmul(t, pooled, t.param(w1)), t.param(b1)));
  ag::Var o = ag::add_row_bias(t, ag::matmul(t, h, t.param(w2)), t.param(b2));
  Branch b;
  const std::size_t nl = shape_.lambda_count;
  if (nl) b.lambda = ag::add_scalar(t, ag::slice_cols(t, o, 0, nl), 1.0);
  if (shape_.phi_count) b.phi = ag::slice_cols(t, o, nl, nl + shape_.phi_count);
  return b;
}

ag::Var DcdConv::assemble(ag::Tape& t, const Branch& b, std::size_t batch) {
  const std::size_t co = spec_.c_out, ci = spec_.c_in, k = spec_.kernel, k2 = k * k;
  const std::size_t l = shape_.dims.l, lk = shape_.dims.l_k;
  ag::Var wv = t.param(w0);
  ag::Var out;
  switch (shape_.variant) {
    case DcdVariant::Pointwise: {
      std::vector<ag::Var> phis, pv, qv;
      if (b.phi.valid()) {
        const std::size_t nb = shape_.blocks, per = l * l;
        for (std::size_t i = 0; i < nb; ++i) {
          ag::Var ph = nb == 1 ? b.phi : ag::slice_cols(t, b.phi, i * per, (i + 1) * per);
          phis.push_back(ag::reshape(t, ph, {batch, l, l}));
          pv.push_back(t.param(p[i]));
          qv.push_back(t.param(q[i]));
        }
      }
      out = assemble_sparse(t, b.lambda, phis, ag::reshape(t, wv, {co, ci}), pv, qv, batch);
      break;
    }
    case DcdVariant::Depthwise: {
      ag::Var phi = b.phi.valid() ? ag::reshape(t, b.phi, {batch, lk, lk}) : ag::Var{};
      out = assemble_depthwise(t, b.lambda, phi, ag::reshape(t, wv, {co, k2}),
                               phi.valid() ? t.param(p[0]) : ag::Var{},
                               phi.valid() ? t.param(r) : ag::Var{}, batch);
      break;
    }
    case DcdVariant::KxkJoint: {
      ag::Var phi = b.phi.valid() ? ag::reshape(t, b.phi, {batch, l, l, lk}) : ag::Var{};
      out = assemble_kxk_joint(t, b.lambda, phi, ag::reshape(t, wv, {co, ci, k2}),
                               phi.valid() ? t.param(q[0]) : ag::Var{},
                               phi.valid() ? t.param(p[0]) : ag::Var{},
                               phi.valid() ? t.param(r) : ag::Var{}, batch);
      break;
    }
    case DcdVariant::KxkChannelOnly: {
      ag::Var phi = b.phi.valid() ? ag::reshape(t, b.phi, {batch, l, l}) : ag::Var{};
      out = assemble_kxk_channel_only(t, b.lambda, phi, ag::reshape(t, wv, {co, ci, k2}),
                                      phi.valid() ? t.param(p[0]) : ag::Var{},
                                      phi.valid() ? t.param(q[0]) : ag::Var{}, k, batch);
      break;
    }
    case DcdVariant::Auto:
      throw Error("dcd: unresolved variant");
  }
  return ag::reshape(t, out, {batch, co, ci / spec_.groups, k, k});
}

ag::Var DcdConv::forward(ForwardContext& ctx, ag::Var x) {
  ag::Tape& t = ctx.tape;
  const std::size_t batch = t.value(x).dim(0);
  Branch b = run_branch(t, ag::global_avg_pool(t, x));
  if (ctx.observer && b.phi.valid()) ctx.observer->push_back({name(), t.value(x), t.value(b.phi)});
  ag::Var w = assemble(t, b, batch);
  return out_.apply(ctx, ag::conv2d_per_sample(t, x, w, spec_.conv_params()));
}

Tensor DcdConv::branch_output(const Tensor& x_pooled) {
  ag::Tape t;
  ag::Var pooled = t.constant(x_pooled);
  ag::Var h = ag::relu(t, ag::add_row_bias(t, ag::matmul(t, pooled, t.param(w1)), t.param(b1)));
  return t.value(ag::add_row_bias(t, ag::matmul(t, h, t.param(w2)), t.param(b2)));
}

Tensor DcdConv::weight(const Tensor& x_pooled) {
  ag::Tape t;
  require_rank(x_pooled, 2, "DcdConv::weight");
  Branch b = run_branch(t, t.constant(x_pooled));
  return t.value(assemble(t, b, x_pooled.dim(0)));
}

// ---- vanilla dynamic conv -------------------------------------------------

VanillaDynConv::VanillaDynConv(std::string name, const ConvSpec& spec, const VanillaOptions& opts,
                               std::uint64_t seed)
    : Layer(std::move(name)), spec_(spec), opts_(opts), out_(this->name(), spec, seed) {
  spec_.validate();
  if (opts_.kernels == 0) throw ConfigError("vanilla: kernel count must be >= 1");
  if (opts_.fc_layers != 1 && opts_.fc_layers != 2) throw ConfigError("vanilla: fc_layers must be 1 or 2");
  if (!(opts_.temperature > 0.0)) throw ConfigError("vanilla: temperature must be positive");
  const std::string& n = this->name();
  auto make = [&](const std::string& suffix, Shape shape, std::size_t fan_in) {
    return ag::Parameter{n + "." + suffix, init_uniform(seed, n + "." + suffix, std::move(shape), fan_in)};
  };
  Shape ks = kernel_shape(spec_);
  ks.insert(ks.begin(), opts_.kernels);
  kernels = make("kernels", ks, kernel_fan_in(spec_));
  const std::size_t k = opts_.kernels;
  if (opts_.fc_layers == 1) {
    w1 = make("w1", {spec_.c_in, k}, spec_.c_in);
    b1 = make("b1", {k}, spec_.c_in);
  } else {
    const std::size_t h = vanilla_hidden(spec_, opts_);
    w1 = make("w1", {spec_.c_in, h}, spec_.c_in);
    b1 = make("b1", {h}, spec_.c_in);
    w2 = make("w2", {h, k}, h);
    b2 = make("b2", {k}, h);
  }
}

std::vector<ag::Parameter*> VanillaDynConv::parameters() {
  std::vector<ag::Parameter*> out{&kernels, &w1, &b1};
  if (opts_.fc_layers == 2) {
    out.push_back(&w2);
    out.push_back(&b2);
  }
  out_.collect(out);
  return out;
}

std::vector<NamedTensor> VanillaDynConv::buffers() {
  std::vector<NamedTensor> out;
  out_.collect_buffers(out);
  return out;
}

ag::Var VanillaDynConv::run_attention(ag::Tape& t, ag::Var pooled) {
  ag::Var z = ag::add_row_bias(t, ag::matmul(t, pooled, t.param(w1)), t.param(b1));
  if (opts_.fc_layers == 2) {
    z = ag::add_row_bias(t, ag::matmul(t, ag::relu(t, z), t.param(w2)), t.param(b2));
  }
  return ag::attention(t, z, opts_.mode, opts_.temperature);
}

ag::Var VanillaDynConv::assemble(ag::Tape& t, ag::Var pi) {
  const std::size_t k = opts_.kernels, batch = t.value(pi).dim(0);
  const std::size_t d = kernels.value.size() / k;
  ag::Var flat = ag::reshape(t, t.param(kernels), {k, d});
  return ag::reshape(t, ag::matmul(t, pi, flat),
                     {batch, spec_.c_out, spec_.c_in / spec_.groups, spec_.kernel, spec_.kernel});
}

ag::Var VanillaDynConv::forward(ForwardContext& ctx, ag::Var x) {
  ag::Tape& t = ctx.tape;
  ag::Var w = assemble(t, run_attention(t, ag::global_avg_pool(t, x)));
  return out_.apply(ctx, ag::conv2d_per_sample(t, x, w, spec_.conv_params()));
}

Tensor VanillaDynConv::attention(const Tensor& x_pooled) {
  ag::Tape t;
  return t.value(run_attention(t, t.constant(x_pooled)));
}

Tensor VanillaDynConv::weight(const Tensor& x_pooled) {
  ag::Tape t;
  return t.value(assemble(t, run_attention(t, t.constant(x_pooled))));
}

}  // namespace dcd

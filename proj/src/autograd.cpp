#include "dcd/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "dcd/kernels.hpp"
#include "dcd/linalg.hpp"

namespace dcd::ag {

// ---- tape -----------------------------------------------------------------

Var Tape::leaf(std::string_view op, Tensor value, bool requires_grad) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) { return leaf("constant", std::move(value), false); }

Var Tape::input(Tensor value) { return leaf("input", std::move(value), true); }

Var Tape::param(Parameter& p) {
  for (const auto& [ptr, v] : params_)
    if (ptr == &p) return v;
  Var v = leaf("param:" + p.name, p.value, true);
  params_.emplace_back(&p, v);
  return v;
}

Var Tape::record(std::string_view op, std::vector<Var> inputs, ForwardFn forward,
                 AdjointFn adjoint) {
  std::vector<const Tensor*> in;
  in.reserve(inputs.size());
  Node n;
  n.op = op;
  for (Var v : inputs) {
    if (v.id >= nodes_.size()) throw Error("tape: input of '" + n.op + "' is not on this tape");
    in.push_back(&nodes_[v.id].value);
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  n.value = forward(in);
  check_finite(n.value, n.op.c_str());
  n.forward = std::move(forward);
  if (n.requires_grad) n.adjoint = std::move(adjoint);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id).value; }

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape());
}

bool Tape::requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

Tensor& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss, double seed) {
  if (loss.id >= nodes_.size()) throw Error("backward: loss is not on this tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw Error("backward: loss must be a scalar, got " + to_string(nodes_[loss.id].value.shape()));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_slot(loss.id)[0] = seed;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.adjoint) continue;
    std::vector<const Tensor*> in;
    std::vector<Tensor*> gin;
    for (std::size_t i : n.inputs) {
      in.push_back(&nodes_[i].value);
      gin.push_back(nodes_[i].requires_grad ? &grad_slot(i) : nullptr);
    }
    n.adjoint(AdjointArgs{in, n.value, n.grad, gin});
    for (Tensor* g : gin) {
      if (!g) continue;
      for (double x : g->values()) {
        if (!std::isfinite(x)) {
          throw NumericError("backward: non-finite gradient propagated through '" + n.op + "'");
        }
      }
    }
  }
}

std::vector<std::pair<Parameter*, Tensor>> Tape::parameter_gradients() const {
  std::vector<std::pair<Parameter*, Tensor>> out;
  out.reserve(params_.size());
  for (const auto& [p, v] : params_) out.emplace_back(p, grad(v));
  return out;
}

bool Tape::replay_matches() const {
  std::vector<Tensor> replayed(nodes_.size());
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (!n.forward) {
      replayed[id] = n.value;
      continue;
    }
    std::vector<const Tensor*> in;
    for (std::size_t i : n.inputs) in.push_back(&replayed[i]);
    replayed[id] = n.forward(in);
    if (!(replayed[id] == n.value)) return false;
  }
  return true;
}

// ---- helpers --------------------------------------------------------------

namespace {

void accumulate(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  double* d = dst->data();
  const double* s = src.data();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += s[i];
}

// c (+)= op(a) * op(b) for row-major matrices.
void gemm_acc(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
              const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = ta ? a[kk * m + i] : a[i * k + kk];
      double* crow = c + i * n;
      if (tb) {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + kk];
      } else {
        const double* brow = b + kk * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename F>
Var unary(Tape& t, std::string_view op, Var x, F f, std::function<double(double, double)> dfdx) {
  return t.record(
      op, {x},
      [f](auto in) {
        Tensor out(in[0]->shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f((*in[0])[i]);
        return out;
      },
      [dfdx](const AdjointArgs& a) {
        Tensor* g = a.grad_inputs[0];
        if (!g) return;
        for (std::size_t i = 0; i < g->size(); ++i)
          (*g)[i] += a.grad_output[i] * dfdx((*a.inputs[0])[i], a.output[i]);
      });
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

Var add(Tape& t, Var a, Var b) {
  return t.record(
      "add", {a, b}, [](auto in) { return dcd::add(*in[0], *in[1]); },
      [](const AdjointArgs& g) {
        accumulate(g.grad_inputs[0], g.grad_output);
        accumulate(g.grad_inputs[1], g.grad_output);
      });
}

Var sub(Tape& t, Var a, Var b) {
  return t.record(
      "sub", {a, b}, [](auto in) { return dcd::sub(*in[0], *in[1]); },
      [](const AdjointArgs& g) {
        accumulate(g.grad_inputs[0], g.grad_output);
        if (g.grad_inputs[1]) accumulate(g.grad_inputs[1], dcd::scale(g.grad_output, -1.0));
      });
}

Var mul(Tape& t, Var a, Var b) {
  return t.record(
      "mul", {a, b}, [](auto in) { return dcd::hadamard(*in[0], *in[1]); },
      [](const AdjointArgs& g) {
        if (g.grad_inputs[0]) accumulate(g.grad_inputs[0], dcd::hadamard(g.grad_output, *g.inputs[1]));
        if (g.grad_inputs[1]) accumulate(g.grad_inputs[1], dcd::hadamard(g.grad_output, *g.inputs[0]));
      });
}

Var scale(Tape& t, Var a, double s) {
  return t.record(
      "scale", {a}, [s](auto in) { return dcd::scale(*in[0], s); },
      [s](const AdjointArgs& g) {
        if (g.grad_inputs[0]) accumulate(g.grad_inputs[0], dcd::scale(g.grad_output, s));
      });
}

Var add_scalar(Tape& t, Var a, double s) {
  return t.record(
      "add_scalar", {a}, [s](auto in) { return dcd::add_scalar(*in[0], s); },
      [](const AdjointArgs& g) { accumulate(g.grad_inputs[0], g.grad_output); });
}

Var add_row_bias(Tape& t, Var x, Var b) {
  return t.record(
      "add_row_bias", {x, b},
      [](auto in) {
        const Tensor& xv = *in[0];
        require_rank(xv, 2, "add_row_bias");
        require_shape(*in[1], {xv.dim(1)}, "add_row_bias");
        Tensor out = xv;
        for (std::size_t i = 0; i < xv.dim(0); ++i)
          for (std::size_t j = 0; j < xv.dim(1); ++j) out(i, j) += (*in[1])[j];
        return out;
      },
      [](const AdjointArgs& g) {
        accumulate(g.grad_inputs[0], g.grad_output);
        if (Tensor* gb = g.grad_inputs[1]) {
          for (std::size_t i = 0; i < g.grad_output.dim(0); ++i)
            for (std::size_t j = 0; j < g.grad_output.dim(1); ++j) (*gb)[j] += g.grad_output(i, j);
        }
      });
}

Var add_channel_bias(Tape& t, Var x, Var b) {
  return t.record(
      "add_channel_bias", {x, b},
      [](auto in) {
        const Tensor& xv = *in[0];
        require_rank(xv, 4, "add_channel_bias");
        require_shape(*in[1], {xv.dim(1)}, "add_channel_bias");
        Tensor out = xv;
        const std::size_t c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
        for (std::size_t i = 0; i < xv.dim(0) * c; ++i)
          for (std::size_t j = 0; j < hw; ++j) out[i * hw + j] += (*in[1])[i % c];
        return out;
      },
      [](const AdjointArgs& g) {
        accumulate(g.grad_inputs[0], g.grad_output);
        if (Tensor* gb = g.grad_inputs[1]) {
          const Tensor& go = g.grad_output;
          const std::size_t c = go.dim(1), hw = go.dim(2) * go.dim(3);
          for (std::size_t i = 0; i < go.dim(0) * c; ++i)
            for (std::size_t j = 0; j < hw; ++j) (*gb)[i % c] += go[i * hw + j];
        }
      });
}

// ---- matrix products and reshapes ----------------------------------------

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  const std::size_t ra = av.rank(), rb = bv.rank();
  if (ra < 2 || ra > 3 || rb < 2 || rb > 3) throw ShapeError("matmul: operands must be rank 2 or 3");
  const std::size_t m = av.dim(ra - 2), k = av.dim(ra - 1), n = bv.dim(rb - 1);
  if (bv.dim(rb - 2) != k) {
    throw ShapeError("matmul: inner extents differ, " + to_string(av.shape()) + " * " +
                     to_string(bv.shape()));
  }
  std::size_t batch = 1;
  if (ra == 3) batch = av.dim(0);
  if (rb == 3) {
    if (ra == 3 && bv.dim(0) != batch) throw ShapeError("matmul: batch extents differ");
    batch = bv.dim(0);
  }
  const bool a_batched = ra == 3, b_batched = rb == 3;
  const bool batched = a_batched || b_batched;

  return t.record(
      "matmul", {a, b},
      [=](auto in) {
        Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
        Tensor out(shape);
        if (!b_batched) {
          // All rows of a (across the batch) share b: one product.
          kernels::omp::gemm(batch * m, k, n, in[0]->values(), in[1]->values(), out.values());
        } else {
          for (std::size_t s = 0; s < batch; ++s) {
            const double* ap = in[0]->data() + (a_batched ? s * m * k : 0);
            const double* bp = in[1]->data() + s * k * n;
            kernels::serial::gemm(m, k, n, std::span<const double>(ap, m * k),
                                  std::span<const double>(bp, k * n),
                                  std::span<double>(out.data() + s * m * n, m * n));
          }
        }
        return out;
      },
      [=](const AdjointArgs& g) {
        const double* go = g.grad_output.data();
        const double* ap = g.inputs[0]->data();
        const double* bp = g.inputs[1]->data();
        if (Tensor* ga = g.grad_inputs[0]) {
          for (std::size_t s = 0; s < batch; ++s) {
            // dA = dC * B^T
            gemm_acc(false, true, m, k, n, go + s * m * n, bp + (b_batched ? s * k * n : 0),
                     ga->data() + (a_batched ? s * m * k : 0));
          }
        }
        if (Tensor* gb = g.grad_inputs[1]) {
          for (std::size_t s = 0; s < batch; ++s) {
            // dB = A^T * dC
            gemm_acc(true, false, k, n, m, ap + (a_batched ? s * m * k : 0), go + s * m * n,
                     gb->data() + (b_batched ? s * k * n : 0));
          }
        }
      });
}

Var transpose(Tape& t, Var a) {
  const std::size_t r = t.value(a).rank();
  if (r < 2) throw ShapeError("transpose: rank must be >= 2");
  std::vector<std::size_t> perm(r);
  for (std::size_t i = 0; i < r; ++i) perm[i] = i;
  std::swap(perm[r - 1], perm[r - 2]);
  return permute(t, a, perm);
}

Var reshape(Tape& t, Var a, Shape shape) {
  return t.record(
      "reshape", {a}, [shape](auto in) { return in[0]->reshaped(shape); },
      [](const AdjointArgs& g) {
        if (Tensor* ga = g.grad_inputs[0]) accumulate(ga, g.grad_output);
      });
}

Var permute(Tape& t, Var a, std::vector<std::size_t> perm) {
  std::vector<std::size_t> inverse(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= perm.size()) throw ShapeError("permute: invalid permutation");
    inverse[perm[i]] = i;
  }
  return t.record(
      "permute", {a}, [perm](auto in) { return dcd::permute(*in[0], perm); },
      [inverse](const AdjointArgs& g) {
        if (Tensor* ga = g.grad_inputs[0]) accumulate(ga, dcd::permute(g.grad_output, inverse));
      });
}

Var slice_cols(Tape& t, Var x, std::size_t begin, std::size_t end) {
  return t.record(
      "slice_cols", {x},
      [begin, end](auto in) {
        const Tensor& xv = *in[0];
        require_rank(xv, 2, "slice_cols");
        if (begin > end || end > xv.dim(1)) throw ShapeError("slice_cols: range out of bounds");
        Tensor out({xv.dim(0), end - begin});
        for (std::size_t i = 0; i < xv.dim(0); ++i)
          for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = xv(i, j);
        return out;
      },
      [begin, end](const AdjointArgs& g) {
        Tensor* gx = g.grad_inputs[0];
        if (!gx) return;
        for (std::size_t i = 0; i < gx->dim(0); ++i)
          for (std::size_t j = begin; j < end; ++j) (*gx)(i, j) += g.grad_output(i, j - begin);
      });
}

Var scale_rows(Tape& t, Var lambda, Var w) {
  return t.record(
      "scale_rows", {lambda, w},
      [](auto in) {
        const Tensor& l = *in[0];
        const Tensor& wv = *in[1];
        require_rank(l, 2, "scale_rows");
        if (wv.rank() < 1 || wv.dim(0) != l.dim(1)) throw ShapeError("scale_rows: row count mismatch");
        const std::size_t n = l.dim(0), r = l.dim(1), inner = wv.size() / r;
        Shape shape{n};
        shape.insert(shape.end(), wv.shape().begin(), wv.shape().end());
        Tensor out(shape);
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t i = 0; i < r; ++i) {
            const double f = l(s, i);
            const double* src = wv.data() + i * inner;
            double* dst = out.data() + (s * r + i) * inner;
            for (std::size_t j = 0; j < inner; ++j) dst[j] = f * src[j];
          }
        return out;
      },
      [](const AdjointArgs& g) {
        const Tensor& l = *g.inputs[0];
        const Tensor& wv = *g.inputs[1];
        const std::size_t n = l.dim(0), r = l.dim(1), inner = wv.size() / r;
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t i = 0; i < r; ++i) {
            const double* go = g.grad_output.data() + (s * r + i) * inner;
            const double* src = wv.data() + i * inner;
            if (Tensor* gl = g.grad_inputs[0]) {
              double acc = 0.0;
              for (std::size_t j = 0; j < inner; ++j) acc += go[j] * src[j];
              (*gl)(s, i) += acc;
            }
            if (Tensor* gw = g.grad_inputs[1]) {
              double* dst = gw->data() + i * inner;
              const double f = l(s, i);
              for (std::size_t j = 0; j < inner; ++j) dst[j] += f * go[j];
            }
          }
      });
}

Var block_diag(Tape& t, std::vector<Var> blocks) {
  if (blocks.empty()) throw ShapeError("block_diag: no blocks");
  return t.record(
      "block_diag", blocks,
      [](auto in) {
        const std::size_t n = in[0]->dim(0);
        std::size_t rows = 0, cols = 0;
        for (const Tensor* b : in) {
          require_rank(*b, 3, "block_diag");
          if (b->dim(0) != n) throw ShapeError("block_diag: batch mismatch");
          rows += b->dim(1);
          cols += b->dim(2);
        }
        Tensor out({n, rows, cols});
        for (std::size_t s = 0; s < n; ++s) {
          std::size_t r0 = 0, c0 = 0;
          for (const Tensor* b : in) {
            const std::size_t br = b->dim(1), bc = b->dim(2);
            for (std::size_t i = 0; i < br; ++i)
              for (std::size_t j = 0; j < bc; ++j)
                out[(s * rows + r0 + i) * cols + c0 + j] = (*b)[(s * br + i) * bc + j];
            r0 += br;
            c0 += bc;
          }
        }
        return out;
      },
      [](const AdjointArgs& g) {
        const std::size_t n = g.output.dim(0), rows = g.output.dim(1), cols = g.output.dim(2);
        std::size_t r0 = 0, c0 = 0;
        for (std::size_t bi = 0; bi < g.inputs.size(); ++bi) {
          const std::size_t br = g.inputs[bi]->dim(1), bc = g.inputs[bi]->dim(2);
          if (Tensor* gb = g.grad_inputs[bi]) {
            for (std::size_t s = 0; s < n; ++s)
              for (std::size_t i = 0; i < br; ++i)
                for (std::size_t j = 0; j < bc; ++j)
                  (*gb)[(s * br + i) * bc + j] += g.grad_output[(s * rows + r0 + i) * cols + c0 + j];
          }
          r0 += br;
          c0 += bc;
        }
      });
}

Var mode_product(Tape& t, Var x, Var m, std::size_t mode) {
  return t.record(
      "mode_product", {x, m}, [mode](auto in) { return mode_n_product(*in[0], *in[1], mode); },
      [mode](const AdjointArgs& g) {
        const Tensor& xv = *g.inputs[0];
        const Tensor& mv = *g.inputs[1];
        const std::size_t axis = mode - 1;
        const std::size_t d = xv.dim(axis), p = mv.dim(0);
        std::size_t outer = 1, inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
        for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
        const Tensor& go = g.grad_output;
        if (Tensor* gx = g.grad_inputs[0]) {
          // gx[o, j, i] += sum_a m[a, j] * go[o, a, i]
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t a = 0; a < p; ++a)
              for (std::size_t j = 0; j < d; ++j) {
                const double mv_aj = mv(a, j);
                const double* src = go.data() + (o * p + a) * inner;
                double* dst = gx->data() + (o * d + j) * inner;
                for (std::size_t i = 0; i < inner; ++i) dst[i] += mv_aj * src[i];
              }
        }
        if (Tensor* gm = g.grad_inputs[1]) {
          // gm[a, j] += sum_{o, i} go[o, a, i] * x[o, j, i]
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t a = 0; a < p; ++a)
              for (std::size_t j = 0; j < d; ++j) {
                const double* gsrc = go.data() + (o * p + a) * inner;
                const double* xsrc = xv.data() + (o * d + j) * inner;
                double acc = 0.0;
                for (std::size_t i = 0; i < inner; ++i) acc += gsrc[i] * xsrc[i];
                (*gm)(a, j) += acc;
              }
        }
      });
}

// ---- convolution and pooling ---------------------------------------------

namespace {

Var conv_impl(Tape& t, Var x, Var w, const ConvParams& p, bool per_sample) {
  return t.record(
      per_sample ? "conv2d_per_sample" : "conv2d", {x, w},
      [p, per_sample](auto in) {
        return per_sample ? dcd::conv2d_per_sample(*in[0], *in[1], p) : dcd::conv2d(*in[0], *in[1], p);
      },
      [p, per_sample](const AdjointArgs& g) {
        const auto geo = conv_geometry(*g.inputs[0], *g.inputs[1], p, per_sample);
        if (Tensor* gx = g.grad_inputs[0]) {
          Tensor dx(gx->shape());
          kernels::omp::conv2d_backward_input(geo, g.grad_output.values(), g.inputs[1]->values(),
                                              per_sample, dx.values());
          accumulate(gx, dx);
        }
        if (Tensor* gw = g.grad_inputs[1]) {
          kernels::omp::conv2d_backward_weight(geo, g.inputs[0]->values(), g.grad_output.values(),
                                               per_sample, gw->values());
        }
      });
}

}  // namespace

Var conv2d(Tape& t, Var x, Var w, const ConvParams& p) { return conv_impl(t, x, w, p, false); }

Var conv2d_per_sample(Tape& t, Var x, Var w, const ConvParams& p) {
  return conv_impl(t, x, w, p, true);
}

Var global_avg_pool(Tape& t, Var x) {
  return t.record(
      "global_avg_pool", {x}, [](auto in) { return dcd::global_avg_pool(*in[0]); },
      [](const AdjointArgs& g) {
        Tensor* gx = g.grad_inputs[0];
        if (!gx) return;
        const std::size_t hw = gx->dim(2) * gx->dim(3);
        const double inv = 1.0 / static_cast<double>(hw);
        for (std::size_t i = 0; i < g.grad_output.size(); ++i) {
          const double v = g.grad_output[i] * inv;
          double* dst = gx->data() + i * hw;
          for (std::size_t j = 0; j < hw; ++j) dst[j] += v;
        }
      });
}

Var max_pool2d(Tape& t, Var x, std::size_t kernel, std::size_t stride, std::size_t padding) {
  return t.record(
      "max_pool2d", {x},
      [=](auto in) { return dcd::max_pool2d(*in[0], kernel, stride, padding); },
      [=](const AdjointArgs& g) {
        Tensor* gx = g.grad_inputs[0];
        if (!gx) return;
        std::vector<std::size_t> argmax;
        dcd::max_pool2d(*g.inputs[0], kernel, stride, padding, &argmax);
        for (std::size_t o = 0; o < argmax.size(); ++o) (*gx)[argmax[o]] += g.grad_output[o];
      });
}

// ---- activations ----------------------------------------------------------

Var relu(Tape& t, Var x) {
  return unary(
      t, "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var relu6(Tape& t, Var x) {
  return unary(
      t, "relu6", x, [](double v) { return std::clamp(v, 0.0, 6.0); },
      [](double in, double) { return (in > 0.0 && in < 6.0) ? 1.0 : 0.0; });
}

Var sigmoid(Tape& t, Var x) {
  return unary(
      t, "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double out) { return out * (1.0 - out); });
}

Var softmax(Tape& t, Var x, double temperature) {
  return t.record(
      "softmax", {x},
      [temperature](auto in) {
        return attention_activation(*in[0], AttentionMode::Softmax, temperature);
      },
      [temperature](const AdjointArgs& g) {
        Tensor* gx = g.grad_inputs[0];
        if (!gx) return;
        const Tensor& p = g.output;
        for (std::size_t i = 0; i < p.dim(0); ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < p.dim(1); ++j) dot += g.grad_output(i, j) * p(i, j);
          for (std::size_t j = 0; j < p.dim(1); ++j)
            (*gx)(i, j) += p(i, j) * (g.grad_output(i, j) - dot) / temperature;
        }
      });
}

Var attention(Tape& t, Var logits, AttentionMode mode, double temperature) {
  if (!(temperature > 0.0)) throw Error("attention: temperature must be positive");
  return mode == AttentionMode::Softmax ? softmax(t, logits, temperature) : sigmoid(t, logits);
}

// ---- batch norm -----------------------------------------------------------

Var batch_norm_train(Tape& t, Var x, Var gamma, Var beta, double epsilon) {
  return t.record(
      "batch_norm_train", {x, gamma, beta},
      [epsilon](auto in) {
        const auto st = batch_statistics(*in[0]);
        return batch_norm_apply(*in[0], st.mean, st.variance, *in[1], *in[2], epsilon);
      },
      [epsilon](const AdjointArgs& g) {
        const Tensor& xv = *g.inputs[0];
        const Tensor& gm = *g.inputs[1];
        const auto st = batch_statistics(xv);
        const std::size_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
        const double count = static_cast<double>(n * hw);
        const Tensor& dy = g.grad_output;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double inv = 1.0 / std::sqrt(st.variance[ch] + epsilon);
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = (s * c + ch) * hw;
            for (std::size_t j = 0; j < hw; ++j) {
              const double xhat = (xv[base + j] - st.mean[ch]) * inv;
              sum_dy += dy[base + j];
              sum_dy_xhat += dy[base + j] * xhat;
            }
          }
          if (Tensor* gg = g.grad_inputs[1]) (*gg)[ch] += sum_dy_xhat;
          if (Tensor* gb = g.grad_inputs[2]) (*gb)[ch] += sum_dy;
          if (Tensor* gx = g.grad_inputs[0]) {
            const double mdy = sum_dy / count, mdyx = sum_dy_xhat / count;
            for (std::size_t s = 0; s < n; ++s) {
              const std::size_t base = (s * c + ch) * hw;
              for (std::size_t j = 0; j < hw; ++j) {
                const double xhat = (xv[base + j] - st.mean[ch]) * inv;
                (*gx)[base + j] += gm[ch] * inv * (dy[base + j] - mdy - xhat * mdyx);
              }
            }
          }
        }
      });
}

Var batch_norm_eval(Tape& t, Var x, Var gamma, Var beta, const Tensor& mean,
                    const Tensor& variance, double epsilon) {
  return t.record(
      "batch_norm_eval", {x, gamma, beta},
      [mean, variance, epsilon](auto in) {
        return batch_norm_apply(*in[0], mean, variance, *in[1], *in[2], epsilon);
      },
      [mean, variance, epsilon](const AdjointArgs& g) {
        const Tensor& xv = *g.inputs[0];
        const Tensor& gm = *g.inputs[1];
        const std::size_t n = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
        const Tensor& dy = g.grad_output;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double inv = 1.0 / std::sqrt(variance[ch] + epsilon);
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = (s * c + ch) * hw;
            for (std::size_t j = 0; j < hw; ++j) {
              if (Tensor* gx = g.grad_inputs[0]) (*gx)[base + j] += gm[ch] * inv * dy[base + j];
              if (Tensor* gg = g.grad_inputs[1]) (*gg)[ch] += dy[base + j] * (xv[base + j] - mean[ch]) * inv;
              if (Tensor* gb = g.grad_inputs[2]) (*gb)[ch] += dy[base + j];
            }
          }
        }
      });
}

// ---- reductions and losses ------------------------------------------------

Var sum(Tape& t, Var x) {
  return t.record(
      "sum", {x}, [](auto in) { return Tensor({1}, {dcd::sum(*in[0])}); },
      [](const AdjointArgs& g) {
        if (Tensor* gx = g.grad_inputs[0])
          for (auto& v : gx->values()) v += g.grad_output[0];
      });
}

Var cross_entropy(Tape& t, Var logits, std::vector<std::size_t> labels) {
  return t.record(
      "cross_entropy", {logits},
      [labels](auto in) {
        const Tensor& z = *in[0];
        require_rank(z, 2, "cross_entropy");
        if (labels.size() != z.dim(0)) throw ShapeError("cross_entropy: label count mismatch");
        double loss = 0.0;
        for (std::size_t i = 0; i < z.dim(0); ++i) {
          if (labels[i] >= z.dim(1)) throw ShapeError("cross_entropy: label out of range");
          // log-sum-exp form for accuracy on confident predictions
          double mx = z(i, 0);
          for (std::size_t j = 1; j < z.dim(1); ++j) mx = std::max(mx, z(i, j));
          double s = 0.0;
          for (std::size_t j = 0; j < z.dim(1); ++j) s += std::exp(z(i, j) - mx);
          loss += mx + std::log(s) - z(i, labels[i]);
        }
        return Tensor({1}, {loss / static_cast<double>(z.dim(0))});
      },
      [labels](const AdjointArgs& g) {
        Tensor* gz = g.grad_inputs[0];
        if (!gz) return;
        const Tensor& z = *g.inputs[0];
        const auto p = attention_activation(z, AttentionMode::Softmax, 1.0);
        const double f = g.grad_output[0] / static_cast<double>(z.dim(0));
        for (std::size_t i = 0; i < z.dim(0); ++i)
          for (std::size_t j = 0; j < z.dim(1); ++j)
            (*gz)(i, j) += f * (p(i, j) - (j == labels[i] ? 1.0 : 0.0));
      });
}

}  // namespace dcd::ag

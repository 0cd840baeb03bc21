#include <cmath>

#include "doctest.h"
#include "dcd/certify.hpp"
#include "dcd/layers.hpp"
#include "dcd/linalg.hpp"
#include "oracles.hpp"

using namespace dcd;

namespace {

ConvSpec conv(std::size_t ci, std::size_t co, std::size_t k = 1, std::size_t groups = 1) {
  ConvSpec s;
  s.c_in = ci;
  s.c_out = co;
  s.kernel = k;
  s.padding = k / 2;
  s.groups = groups;
  return s;
}

ConvSpec bare(ConvSpec s) {
  s.batch_norm = false;
  s.activation = Activation::None;
  return s;
}

Tensor run(Layer& layer, const Tensor& x, bool train) {
  ag::Tape t;
  ForwardContext ctx{t, train, false, nullptr};
  return t.value(layer.forward(ctx, t.input(x)));
}

// Sample slice [i] of a tensor with a leading batch axis.
Tensor sample(const Tensor& t, std::size_t i) {
  Shape s(t.shape().begin() + 1, t.shape().end());
  Tensor out(s);
  std::copy(t.data() + i * out.size(), t.data() + (i + 1) * out.size(), out.data());
  return out;
}

}  // namespace

TEST_CASE("default latent dimension") {
  CHECK(default_latent_dim(64) == 8);
  CHECK(default_latent_dim(16) == 4);
  CHECK(default_latent_dim(96) == 6);
  CHECK(default_latent_dim(1) == 1);
  for (std::size_t c = 1; c <= 2048; ++c) {
    const std::size_t l = default_latent_dim(c);
    CHECK(l * l <= c);
    // Largest in the halving chain: doubling it again must break the bound or leave the chain.
    std::size_t chain = c;
    while (chain / 2 >= l && chain / 2 * (chain / 2) > c) chain /= 2;
    CHECK((chain == l || chain / 2 == l));
  }
  CHECK_THROWS_AS(default_latent_dim(0), ConfigError);
}

TEST_CASE("default latent dimensions for k x k") {
  CHECK(default_latent_dims_kxk(64, 3).l_k == 4);
  const LatentDims d = default_latent_dims_kxk(64, 3);
  CHECK(d.l == 4);
  CHECK(d.l * d.l * d.l_k <= 64);
  CHECK(default_latent_dims_kxk(256, 5).l_k == 12);
  CHECK_THROWS_AS(default_latent_dims_kxk(64, 1), ConfigError);
  CHECK_THROWS_AS(default_latent_dims_kxk(3, 3), ConfigError);
}

TEST_CASE("vanilla weight") {
  Tensor kernels = oracle::random({1, 4, 4, 1, 1}, 1);
  Tensor pi({3, 1}, 1.0);
  Tensor w = vanilla_weight(pi, kernels);
  for (std::size_t n = 0; n < 3; ++n) CHECK(sample(w, n) == sample(kernels, 0));

  Tensor k4 = oracle::random({4, 3, 3}, 2);
  Tensor uniform({2, 4}, 0.25);
  Tensor avg = vanilla_weight(uniform, k4);
  for (std::size_t i = 0; i < 9; ++i) {
    const double mean = (k4[i] + k4[9 + i] + k4[18 + i] + k4[27 + i]) / 4.0;
    CHECK(std::abs(avg[i] - mean) < 1e-15);
  }

  VanillaOptions vo;
  vo.temperature = 1.0;
  VanillaDynConv layer("v", conv(8, 8), vo, 3);
  Tensor att = layer.attention(oracle::random({5, 8}, 4));
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(att(i, k) >= 0.0);
      CHECK(att(i, k) <= 1.0);
      s += att(i, k);
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(vanilla_weight(Tensor({2, 3}), k4), ShapeError);
}

TEST_CASE("dcd 1x1 weight") {
  const std::size_t c = 8, l = 2, n = 3;
  Tensor w0 = oracle::random({c, c}, 5), p = oracle::random({c, l}, 6), q = oracle::random({c, l}, 7);
  Tensor ones({n, c}, 1.0), zero_phi({n, l, l});
  Tensor w = dcd_weight_1x1(ones, zero_phi, w0, p, q);
  for (std::size_t i = 0; i < n; ++i) CHECK(sample(w, i) == w0);

  Tensor phi_full = oracle::random({n, c, c}, 8);
  Tensor pf = dcd_weight_1x1(Tensor(), phi_full, w0, Tensor::identity(c), Tensor::identity(c));
  for (std::size_t i = 0; i < n; ++i) CHECK(max_abs_diff(sample(pf, i), add(w0, sample(phi_full, i))) < 1e-15);

  Tensor lambda = oracle::random({n, c}, 9, 0.5, 1.5), phi = oracle::random({n, l, l}, 10);
  Tensor wr = dcd_weight_1x1(lambda, phi, w0, p, q);
  for (std::size_t s = 0; s < n; ++s) {
    Tensor res({c, c});
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = 0; j < l; ++j)
        for (std::size_t a = 0; a < c; ++a)
          for (std::size_t b = 0; b < c; ++b) res(a, b) += p(a, i) * phi.at({s, i, j}) * q(b, j);
    Tensor got = sub(sample(wr, s), diag_left(sample(lambda, s), w0));
    CHECK(max_abs_diff(got, res) < 1e-10);
  }
}

TEST_CASE("dcd sparse weight") {
  const std::size_t c = 8, n = 2;
  Tensor w0 = oracle::random({c, c}, 11);
  Tensor lambda = oracle::random({n, c}, 12);
  Tensor p = oracle::random({c, 2}, 13), q = oracle::random({c, 2}, 14), phi = oracle::random({n, 2, 2}, 15);
  CHECK(dcd_weight_sparse(lambda, {phi}, w0, {p}, {q}) == dcd_weight_1x1(lambda, phi, w0, p, q));

  // B = C with L_b = 1: diagonal residual p_i phi_i q_i.
  std::vector<Tensor> ps, qs, phis;
  for (std::size_t b = 0; b < c; ++b) {
    ps.push_back(oracle::random({1, 1}, 100 + b));
    qs.push_back(oracle::random({1, 1}, 200 + b));
    phis.push_back(oracle::random({n, 1, 1}, 300 + b));
  }
  Tensor diag = dcd_weight_sparse(Tensor(), phis, Tensor({c, c}), ps, qs);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double expect = i == j ? ps[i][0] * phis[i][s] * qs[i][0] : 0.0;
        CHECK(std::abs(diag.at({s, i, j}) - expect) < 1e-15);
      }

  CHECK_THROWS_AS(dcd_weight_sparse(Tensor(), {phi, phi, phi}, w0, {p, p, p}, {q, q, q}), ShapeError);
}

TEST_CASE("sparse residual zero pattern") {
  for (std::size_t blocks : {2u, 4u, 8u}) {
    DcdOptions o;
    o.blocks = blocks;
    o.reduction = 4;
    DcdConv layer("s", conv(16, 16), o, 16);
    randomize_parameters(layer, 17);
    Tensor w = layer.weight(oracle::random({4, 16}, 18));
    const std::size_t per = 16 / blocks;
    for (std::size_t s = 0; s < 4; ++s)
      for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t j = 0; j < 16; ++j) {
          const double lam = 1.0 + layer.branch_output(oracle::random({4, 16}, 18))(s, i);
          const double res = w.at({s, i, j, 0, 0}) - lam * layer.w0.value.at({i, j, 0, 0});
          if (i / per != j / per) CHECK(std::abs(res) < 1e-15);
        }
  }
}

TEST_CASE("dcd depthwise weight") {
  const std::size_t c = 6, k2 = 9, lk = 4, n = 2;
  Tensor w0 = oracle::random({c, k2}, 19), p = oracle::random({c, lk}, 20), r = oracle::random({k2, lk}, 21);
  Tensor same = dcd_weight_depthwise(Tensor(), Tensor({n, lk, lk}), w0, p, r);
  for (std::size_t s = 0; s < n; ++s) CHECK(sample(same, s) == w0);

  Tensor lambda = oracle::random({n, c}, 22), phi = oracle::random({n, lk, lk}, 23);
  Tensor w = dcd_weight_depthwise(lambda, phi, w0, p, r);
  // Null space of R^T from an SVD of R padded to square.
  Tensor rsq({k2, k2});
  for (std::size_t i = 0; i < k2; ++i)
    for (std::size_t j = 0; j < lk; ++j) rsq(i, j) = r(i, j);
  SvdResult sv = svd(rsq);
  for (std::size_t s = 0; s < n; ++s) {
    Tensor res = sub(sample(w, s), diag_left(sample(lambda, s), w0));
    for (std::size_t col = lk; col < k2; ++col) {
      CHECK(sv.s[col] < 1e-10);
      for (std::size_t i = 0; i < c; ++i) {
        double dot = 0.0;
        for (std::size_t e = 0; e < k2; ++e) dot += res(i, e) * sv.u(e, col);
        CHECK(std::abs(dot) < 1e-10);
      }
    }
  }
}

TEST_CASE("dcd k x k joint weight") {
  const std::size_t c = 4, k2 = 9, n = 2;
  Tensor w0 = oracle::random({c, c, k2}, 24);
  Tensor same = dcd_weight_kxk_joint(Tensor(), Tensor({n, 1, 1, 1}), w0, oracle::random({c, 1}, 1),
                                     oracle::random({c, 1}, 2), oracle::random({k2, 1}, 3));
  for (std::size_t s = 0; s < n; ++s) CHECK(sample(same, s) == w0);

  // Projection-free: residual[o, i, e] = phi[i, o, e].
  Tensor phi = oracle::random({n, c, c, k2}, 25);
  Tensor pf = dcd_weight_kxk_joint(Tensor(), phi, w0, Tensor::identity(c), Tensor::identity(c),
                                   Tensor::identity(k2));
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t e = 0; e < k2; ++e)
          CHECK(std::abs(pf.at({s, o, i, e}) - w0.at({o, i, e}) - phi.at({s, i, o, e})) < 1e-15);

  // C = 16, k = 3 explicit triple sum.
  const std::size_t cc = 16;
  const LatentDims d = default_latent_dims_kxk(cc, 3);
  Tensor W0 = oracle::random({cc, cc, k2}, 26), Q = oracle::random({cc, d.l}, 27), P = oracle::random({cc, d.l}, 28),
         R = oracle::random({k2, d.l_k}, 29), lam = oracle::random({n, cc}, 30),
         ph = oracle::random({n, d.l, d.l, d.l_k}, 31);
  Tensor w = dcd_weight_kxk_joint(lam, ph, W0, Q, P, R);
  double worst = 0.0;
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < cc; ++o)
      for (std::size_t i = 0; i < cc; ++i)
        for (std::size_t e = 0; e < k2; ++e) {
          double res = 0.0;
          for (std::size_t a = 0; a < d.l; ++a)
            for (std::size_t b = 0; b < d.l; ++b)
              for (std::size_t f = 0; f < d.l_k; ++f) res += ph.at({s, a, b, f}) * Q(i, a) * P(o, b) * R(e, f);
          const double expect = lam(s, o) * W0.at({o, i, e}) + res;
          worst = std::max(worst, std::abs(w.at({s, o, i, e}) - expect));
        }
  CHECK(worst < 1e-9);
}

TEST_CASE("dcd k x k channel-only weight") {
  const std::size_t c = 5, k = 3, k2 = 9, l = 2, n = 3;
  Tensor w0 = oracle::random({c, c, k2}, 32), p = oracle::random({c, l}, 33), q = oracle::random({c, l}, 34);
  Tensor lambda = oracle::random({n, c}, 35), phi = oracle::random({n, l, l}, 36);
  Tensor w = dcd_weight_kxk_channel_only(lambda, phi, w0, p, q, k);
  Tensor res1 = sub(dcd_weight_1x1(lambda, phi, Tensor({c, c}), p, q), Tensor({n, c, c}));
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t i = 0; i < c; ++i)
        for (std::size_t e = 0; e < k2; ++e) {
          const double scaled = lambda(s, o) * w0.at({o, i, e});
          if (e == k2 / 2) {
            CHECK(w.at({s, o, i, e}) - scaled == doctest::Approx(res1.at({s, o, i})).epsilon(1e-15));
          } else {
            CHECK(w.at({s, o, i, e}) == scaled);
          }
        }
  CHECK(center_one_hot(3) == Tensor({9, 1}, std::vector<double>{0, 0, 0, 0, 1, 0, 0, 0, 0}));
  CHECK_THROWS_AS(center_one_hot(2), ConfigError);
  CHECK_THROWS_AS(DcdConv("x", conv(8, 8, 2), DcdOptions{DcdVariant::KxkChannelOnly}, 1), ConfigError);
}

TEST_CASE("channel-only layer equals static k x k plus a 1x1 residual conv") {
  DcdOptions o;
  o.variant = DcdVariant::KxkChannelOnly;
  o.reduction = 4;
  DcdConv layer("co", bare(conv(32, 32, 3)), o, 37);
  randomize_parameters(layer, 38, 0.3);
  Tensor x = oracle::random({2, 32, 6, 6}, 39);
  Tensor y = run(layer, x, false);

  Tensor pooled = global_avg_pool(x);
  Tensor raw = layer.branch_output(pooled);
  const std::size_t l = layer.shape().dims.l;
  Tensor expected({2, 32, 6, 6});
  for (std::size_t s = 0; s < 2; ++s) {
    Tensor xs({1, 32, 6, 6});
    std::copy(x.data() + s * xs.size(), x.data() + (s + 1) * xs.size(), xs.data());
    Tensor lam({32}), phi({l, l});
    for (std::size_t i = 0; i < 32; ++i) lam[i] = 1.0 + raw(s, i);
    for (std::size_t i = 0; i < l * l; ++i) phi[i] = raw(s, 32 + i);
    Tensor ws = diag_left(lam, layer.w0.value.reshaped({32, 32 * 9})).reshaped({32, 32, 3, 3});
    Tensor res = oracle::matmul(oracle::matmul(layer.p[0].value, phi), oracle::transpose(layer.q[0].value));
    Tensor ys = add(oracle::conv2d(xs, ws, 1, 1), oracle::conv2d(xs, res.reshaped({32, 32, 1, 1}), 1, 0));
    std::copy(ys.data(), ys.data() + ys.size(), expected.data() + s * ys.size());
  }
  CHECK(max_abs_diff(y, expected) < 1e-10);
}

TEST_CASE("initialisation: every DCD variant reproduces its static layer") {
  struct Case {
    ConvSpec spec;
    DcdOptions opts;
  };
  DcdOptions joint;
  joint.variant = DcdVariant::KxkJoint;
  DcdOptions sparse;
  sparse.blocks = 4;
  DcdOptions nolambda;
  nolambda.use_lambda = false;
  std::vector<Case> cases{{conv(8, 16), {}},       {conv(16, 16), sparse},   {conv(8, 8, 3, 8), {}},
                          {conv(16, 16, 3), joint}, {conv(8, 12, 3), {}},    {conv(8, 16), nolambda}};
  for (auto& c : cases) {
    c.spec.stride = 2;
    StaticConv st("layer", c.spec, 40);
    DcdConv dy("layer", c.spec, c.opts, 40);
    CHECK(st.w0.value == dy.w0.value);
    Tensor x = oracle::random({3, c.spec.c_in, 7, 7}, 41);
    for (bool train : {false, true}) CHECK(run(st, x, train) == run(dy, x, train));
    Tensor w = dy.weight(global_avg_pool(x));
    for (std::size_t s = 0; s < 3; ++s) CHECK(sample(w, s) == st.w0.value);
  }
}

TEST_CASE("layer forward determinism and batch independence") {
  DcdOptions o;
  o.reduction = 4;
  DcdConv layer("d", conv(8, 8), o, 42);
  randomize_parameters(layer, 43, 0.4);
  Tensor one = oracle::random({1, 8, 5, 5}, 44);
  Tensor two({2, 8, 5, 5});
  std::copy(one.data(), one.data() + one.size(), two.data());
  std::copy(one.data(), one.data() + one.size(), two.data() + one.size());
  for (bool train : {false, true}) {
    Tensor y = run(layer, two, train);
    CHECK(sample(y, 0) == sample(y, 1));
  }
  Tensor pair = oracle::random({2, 8, 5, 5}, 45);
  Tensor yb = run(layer, pair, false);
  for (std::size_t s = 0; s < 2; ++s) {
    Tensor xs({1, 8, 5, 5});
    std::copy(pair.data() + s * xs.size(), pair.data() + (s + 1) * xs.size(), xs.data());
    Tensor ys = run(layer, xs, false);
    CHECK(max_abs_diff(sample(yb, s), sample(ys, 0)) < 1e-12);
  }
}

TEST_CASE("1x1 residual rank is bounded by L") {
  DcdOptions o;
  o.reduction = 4;
  DcdConv layer("r", conv(16, 16), o, 46);
  randomize_parameters(layer, 47);
  const std::size_t l = layer.shape().dims.l;
  CHECK(l == 4);
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    Tensor pooled = oracle::random({1, 16}, 1000 + trial);
    Tensor raw = layer.branch_output(pooled);
    Tensor w = layer.weight(pooled).reshaped({16, 16});
    Tensor lam({16});
    for (std::size_t i = 0; i < 16; ++i) lam[i] = 1.0 + raw(0, i);
    Tensor res = sub(w, diag_left(lam, layer.w0.value.reshaped({16, 16})));
    SvdResult sv = svd(res);
    for (std::size_t i = l; i < 16; ++i) CHECK(sv.s[i] < 1e-10);
  }
}

TEST_CASE("parameter counts follow the closed form") {
  for (std::size_t c : {16u, 64u, 96u}) {
    DcdOptions o;
    o.reduction = 16;
    ConvSpec s = bare(conv(c, c));
    DcdConv layer("c", s, o, 1);
    const std::size_t l = default_latent_dim(c), h = c / 16;
    const std::size_t expected = c * c + 2 * c * l + (2 * c + l * l) * h + h + c + l * l;
    CHECK(layer.parameter_count() == expected);
  }
  VanillaOptions vo;
  VanillaDynConv v("v", bare(conv(64, 64)), vo, 1);
  CHECK(v.kernels.value.size() == 4 * 64 * 64);
}

TEST_CASE("configuration errors") {
  CHECK_THROWS_AS(DcdConv("x", conv(8, 8), DcdOptions{DcdVariant::Auto, 3}, 1), ConfigError);
  CHECK_THROWS_AS(DcdConv("x", conv(8, 8, 3, 8), DcdOptions{DcdVariant::Pointwise}, 1), ConfigError);
  CHECK_THROWS_AS(DcdConv("x", conv(8, 8, 3), DcdOptions{DcdVariant::Depthwise}, 1), ConfigError);
  DcdOptions off;
  off.use_lambda = false;
  off.use_phi = false;
  CHECK_THROWS_AS(DcdConv("x", conv(8, 8), off, 1), ConfigError);
  VanillaOptions bad;
  bad.temperature = 0.0;
  CHECK_THROWS_AS(VanillaDynConv("v", conv(8, 8), bad, 1), ConfigError);
}

TEST_CASE("gradients of every layer variant") {
  const auto checks = certify_variants();
  CHECK(checks.size() == 2 * certified_variants().size());
  for (const auto& c : checks) {
    CAPTURE(c.variant);
    CAPTURE(c.train);
    for (const auto& t : c.report.tensors) {
      CAPTURE(t.name);
      CAPTURE(t.worst_analytic);
      CAPTURE(t.worst_numeric);
      CHECK(t.max_rel_error < 1e-6);
    }
    CHECK(c.report.passed);
    CHECK(c.report.step == 1e-5);
  }
  CHECK_THROWS_AS(certify_variants({"nope"}), ConfigError);
}

TEST_CASE("identity static layer passes the gradient check") {
  ConvSpec spec;
  spec.c_in = spec.c_out = 5;
  spec.batch_norm = false;
  spec.activation = Activation::None;
  StaticConv layer("id", spec, 1);
  layer.w0.value = Tensor::identity(5).reshaped({5, 5, 1, 1});
  Rng rng(3);
  const GradCheckReport r = gradcheck_layer(layer, rng.uniform_tensor({2, 5, 3, 3}, -1, 1));
  CHECK(r.passed);
  CHECK(r.max_rel_error() < 1e-9);
}

#include "dcd/kernels.hpp"

#include <algorithm>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dcd::kernels {

namespace {

// Shared per-unit bodies. Serial and parallel drivers differ only in how the
// units are distributed, never in the arithmetic inside a unit.

inline void gemm_row(std::size_t i, std::size_t k, std::size_t n, const double* a, const double* b,
                     double* c) {
  double* crow = c + i * n;
  std::fill(crow, crow + n, 0.0);
  const double* arow = a + i * k;
  for (std::size_t kk = 0; kk < k; ++kk) {
    const double aik = arow[kk];
    const double* brow = b + kk * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
  }
}

// Output columns [lo, hi) whose input column ow * stride + kw - pad lies inside
// the image.
inline std::pair<std::size_t, std::size_t> valid_columns(const ConvGeometry& g, std::size_t kw) {
  const long s = static_cast<long>(g.stride), pad = static_cast<long>(g.padding), k = static_cast<long>(kw);
  const long w = static_cast<long>(g.width), n = static_cast<long>(g.out_width());
  const long lo = pad > k ? (pad - k + s - 1) / s : 0;
  const long hi = w + pad - k > 0 ? std::min(n, (w + pad - k + s - 1) / s) : 0;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

// y[n, co, :, :] for one (sample, output channel) pair.
inline void conv_forward_unit(const ConvGeometry& g, std::size_t n, std::size_t co, const double* x,
                              const double* w, bool per_sample, double* y) {
  const std::size_t oh_n = g.out_height(), ow_n = g.out_width();
  const std::size_t cin_pg = g.c_in_per_group();
  const std::size_t group = co / g.c_out_per_group();
  const std::size_t kk = g.kernel * g.kernel;
  const double* wbase = w + (per_sample ? n * g.weight_size() : 0) + co * cin_pg * kk;
  double* yp = y + (n * g.c_out + co) * oh_n * ow_n;
  std::fill(yp, yp + oh_n * ow_n, 0.0);
  const long pad = static_cast<long>(g.padding);
  for (std::size_t cl = 0; cl < cin_pg; ++cl) {
    const std::size_t ci = group * cin_pg + cl;
    const double* xp = x + (n * g.c_in + ci) * g.height * g.width;
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        const auto [lo, hi] = valid_columns(g, kw);
        const double wv = wbase[cl * kk + kh * g.kernel + kw];
        for (std::size_t oh = 0; oh < oh_n; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + kh) - pad;
          if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
          const double* xrow = xp + ih * g.width;
          double* yrow = yp + oh * ow_n;
          for (std::size_t ow = lo; ow < hi; ++ow) yrow[ow] += wv * xrow[ow * g.stride + kw - g.padding];
        }
      }
    }
  }
}

// dx[n, ci, :, :] for one (sample, input channel) pair.
inline void conv_backward_input_unit(const ConvGeometry& g, std::size_t n, std::size_t ci,
                                     const double* dy, const double* w, bool per_sample,
                                     double* dx) {
  const std::size_t oh_n = g.out_height(), ow_n = g.out_width();
  const std::size_t cin_pg = g.c_in_per_group(), cout_pg = g.c_out_per_group();
  const std::size_t group = ci / cin_pg;
  const std::size_t cl = ci % cin_pg;
  const std::size_t kk = g.kernel * g.kernel;
  const double* wsample = w + (per_sample ? n * g.weight_size() : 0);
  double* dxp = dx + (n * g.c_in + ci) * g.height * g.width;
  std::fill(dxp, dxp + g.height * g.width, 0.0);
  const long pad = static_cast<long>(g.padding);
  for (std::size_t col = 0; col < cout_pg; ++col) {
    const std::size_t co = group * cout_pg + col;
    const double* dyp = dy + (n * g.c_out + co) * oh_n * ow_n;
    const double* wp = wsample + (co * cin_pg + cl) * kk;
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        const auto [lo, hi] = valid_columns(g, kw);
        const double wv = wp[kh * g.kernel + kw];
        for (std::size_t oh = 0; oh < oh_n; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + kh) - pad;
          if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
          double* dxrow = dxp + ih * g.width;
          const double* dyrow = dyp + oh * ow_n;
          for (std::size_t ow = lo; ow < hi; ++ow) dxrow[ow * g.stride + kw - g.padding] += wv * dyrow[ow];
        }
      }
    }
  }
}

// Accumulates dw for output channel co over samples [n_begin, n_end) into dw_co.
inline void conv_backward_weight_unit(const ConvGeometry& g, std::size_t n_begin, std::size_t n_end,
                                      std::size_t co, const double* x, const double* dy,
                                      double* dw_co) {
  const std::size_t oh_n = g.out_height(), ow_n = g.out_width();
  const std::size_t cin_pg = g.c_in_per_group();
  const std::size_t group = co / g.c_out_per_group();
  const std::size_t kk = g.kernel * g.kernel;
  const long pad = static_cast<long>(g.padding);
  for (std::size_t cl = 0; cl < cin_pg; ++cl) {
    const std::size_t ci = group * cin_pg + cl;
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        const auto [lo, hi] = valid_columns(g, kw);
        double acc = dw_co[cl * kk + kh * g.kernel + kw];
        for (std::size_t n = n_begin; n < n_end; ++n) {
          const double* xp = x + (n * g.c_in + ci) * g.height * g.width;
          const double* dyp = dy + (n * g.c_out + co) * oh_n * ow_n;
          for (std::size_t oh = 0; oh < oh_n; ++oh) {
            const long ih = static_cast<long>(oh * g.stride + kh) - pad;
            if (ih < 0 || ih >= static_cast<long>(g.height)) continue;
            const double* xrow = xp + ih * g.width;
            const double* dyrow = dyp + oh * ow_n;
            for (std::size_t ow = lo; ow < hi; ++ow) acc += xrow[ow * g.stride + kw - g.padding] * dyrow[ow];
          }
        }
        dw_co[cl * kk + kh * g.kernel + kw] = acc;
      }
    }
  }
}

}  // namespace

namespace serial {

void gemm(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
          std::span<const double> b, std::span<double> c) {
  for (std::size_t i = 0; i < m; ++i) gemm_row(i, k, n, a.data(), b.data(), c.data());
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    bool per_sample_weights, std::span<double> y) {
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t co = 0; co < g.c_out; ++co)
      conv_forward_unit(g, n, co, x.data(), w.data(), per_sample_weights, y.data());
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> w, bool per_sample_weights,
                           std::span<double> dx) {
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t ci = 0; ci < g.c_in; ++ci)
      conv_backward_input_unit(g, n, ci, dy.data(), w.data(), per_sample_weights, dx.data());
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> x,
                            std::span<const double> dy, bool per_sample_weights,
                            std::span<double> dw) {
  const std::size_t per_co = g.c_in_per_group() * g.kernel * g.kernel;
  if (per_sample_weights) {
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t co = 0; co < g.c_out; ++co)
        conv_backward_weight_unit(g, n, n + 1, co, x.data(), dy.data(),
                                  dw.data() + n * g.weight_size() + co * per_co);
  } else {
    for (std::size_t co = 0; co < g.c_out; ++co)
      conv_backward_weight_unit(g, 0, g.batch, co, x.data(), dy.data(), dw.data() + co * per_co);
  }
}

}  // namespace serial

namespace omp {

void gemm(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
          std::span<const double> b, std::span<double> c) {
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n > 32768)
  for (long i = 0; i < rows; ++i) gemm_row(static_cast<std::size_t>(i), k, n, a.data(), b.data(), c.data());
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    bool per_sample_weights, std::span<double> y) {
  const long units = static_cast<long>(g.batch * g.c_out);
#pragma omp parallel for schedule(static) if (units > 1)
  for (long u = 0; u < units; ++u) {
    const auto uu = static_cast<std::size_t>(u);
    conv_forward_unit(g, uu / g.c_out, uu % g.c_out, x.data(), w.data(), per_sample_weights,
                      y.data());
  }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> w, bool per_sample_weights,
                           std::span<double> dx) {
  const long units = static_cast<long>(g.batch * g.c_in);
#pragma omp parallel for schedule(static) if (units > 1)
  for (long u = 0; u < units; ++u) {
    const auto uu = static_cast<std::size_t>(u);
    conv_backward_input_unit(g, uu / g.c_in, uu % g.c_in, dy.data(), w.data(), per_sample_weights,
                             dx.data());
  }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> x,
                            std::span<const double> dy, bool per_sample_weights,
                            std::span<double> dw) {
  const std::size_t per_co = g.c_in_per_group() * g.kernel * g.kernel;
  if (per_sample_weights) {
    const long units = static_cast<long>(g.batch * g.c_out);
#pragma omp parallel for schedule(static) if (units > 1)
    for (long u = 0; u < units; ++u) {
      const auto uu = static_cast<std::size_t>(u);
      const std::size_t n = uu / g.c_out, co = uu % g.c_out;
      conv_backward_weight_unit(g, n, n + 1, co, x.data(), dy.data(),
                                dw.data() + n * g.weight_size() + co * per_co);
    }
  } else {
    const long units = static_cast<long>(g.c_out);
#pragma omp parallel for schedule(static) if (units > 1)
    for (long co = 0; co < units; ++co) {
      const auto c = static_cast<std::size_t>(co);
      conv_backward_weight_unit(g, 0, g.batch, c, x.data(), dy.data(), dw.data() + c * per_co);
    }
  }
}

}  // namespace omp

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace dcd::kernels

#pragma once

// Raw compute kernels. Every kernel exists twice: `serial` is the reference
// implementation, `omp` distributes independent output elements over OpenMP
// threads. Both accumulate each output element in the same order, so their
// results are bit-identical for any thread count.

#include <cstddef>
#include <span>

namespace dcd::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t c_in = 1;
  std::size_t c_out = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;

  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
  std::size_t c_in_per_group() const { return c_in / groups; }
  std::size_t c_out_per_group() const { return c_out / groups; }
  // Scalars in one sample's weight tensor [c_out, c_in/groups, k, k].
  std::size_t weight_size() const { return c_out * c_in_per_group() * kernel * kernel; }
};

// `per_sample_weights` selects between one shared weight tensor and a
// [batch, ...] stack of weights where sample n uses its own kernel.
namespace serial {

// c[m x n] = a[m x k] * b[k x n]
void gemm(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
          std::span<const double> b, std::span<double> c);

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    bool per_sample_weights, std::span<double> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> w, bool per_sample_weights,
                           std::span<double> dx);
// Accumulates into dw. Shared weights sum samples in order n = 0..N-1.
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> x,
                            std::span<const double> dy, bool per_sample_weights,
                            std::span<double> dw);

}  // namespace serial

namespace omp {

void gemm(std::size_t m, std::size_t k, std::size_t n, std::span<const double> a,
          std::span<const double> b, std::span<double> c);
void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    bool per_sample_weights, std::span<double> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dy,
                           std::span<const double> w, bool per_sample_weights,
                           std::span<double> dx);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> x,
                            std::span<const double> dy, bool per_sample_weights,
                            std::span<double> dw);

}  // namespace omp

// Number of worker threads the omp kernels will use (1 without OpenMP).
int max_threads();

}  // namespace dcd::kernels

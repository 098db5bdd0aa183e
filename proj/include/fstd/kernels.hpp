#pragma once

// Dense numeric kernels behind the autodiff primitives.
//
// `omp` holds the production kernels (OpenMP data-parallel, each output element
// reduced in a fixed order so results do not depend on the thread count).
// `serial` holds straightforward reference loops used by the tests and the
// benchmark. Layouts are row-major: sequences are [length x channels], conv
// weights are [out x in x kernel], dense weights are [rows x cols].
// Backward kernels accumulate into their output buffers.

#include <cstddef>
#include <span>

namespace fstd::kernels {

struct Conv1dShape {
  std::size_t length = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  /// Zero when the configuration produces no output.
  std::size_t out_length() const;
};

struct PoolShape {
  std::size_t length = 0;
  std::size_t channels = 0;
  std::size_t window = 1;
  std::size_t stride = 1;

  std::size_t out_length() const;
};

namespace serial {
void conv1d_forward(const Conv1dShape& s, std::span<const double> in, std::span<const double> w,
                    std::span<const double> b, std::span<double> out);
void conv1d_backward(const Conv1dShape& s, std::span<const double> in,
                     std::span<const double> w, std::span<const double> grad_out,
                     std::span<double> grad_in, std::span<double> grad_w,
                     std::span<double> grad_b);
void maxpool1d_forward(const PoolShape& s, std::span<const double> in, std::span<double> out,
                       std::span<std::size_t> argmax);
void dense_forward(std::size_t rows, std::size_t cols, std::span<const double> x,
                   std::span<const double> w, std::span<const double> b, std::span<double> out);
void dense_backward(std::size_t rows, std::size_t cols, std::span<const double> x,
                    std::span<const double> w, std::span<const double> grad_out,
                    std::span<double> grad_x, std::span<double> grad_w, std::span<double> grad_b);
}  // namespace serial

namespace omp {
void conv1d_forward(const Conv1dShape& s, std::span<const double> in, std::span<const double> w,
                    std::span<const double> b, std::span<double> out);
void conv1d_backward(const Conv1dShape& s, std::span<const double> in,
                     std::span<const double> w, std::span<const double> grad_out,
                     std::span<double> grad_in, std::span<double> grad_w,
                     std::span<double> grad_b);
void maxpool1d_forward(const PoolShape& s, std::span<const double> in, std::span<double> out,
                       std::span<std::size_t> argmax);
void dense_forward(std::size_t rows, std::size_t cols, std::span<const double> x,
                   std::span<const double> w, std::span<const double> b, std::span<double> out);
void dense_backward(std::size_t rows, std::size_t cols, std::span<const double> x,
                    std::span<const double> w, std::span<const double> grad_out,
                    std::span<double> grad_x, std::span<double> grad_w, std::span<double> grad_b);
}  // namespace omp

/// Caps the OpenMP worker count from FSTD_THREADS when set. Returns the cap in effect.
int configure_threads_from_env();

}  // namespace fstd::kernels

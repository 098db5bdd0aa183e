#include "fstd/kernels.hpp"

#include <limits>

namespace fstd::kernels {

std::size_t Conv1dShape::out_length() const {
  const std::size_t padded = length + 2 * padding;
  if (stride == 0 || padded < kernel) return 0;
  return (padded - kernel) / stride + 1;
}

std::size_t PoolShape::out_length() const {
  if (stride == 0 || length < window) return 0;
  return (length - window) / stride + 1;
}

namespace serial {

void conv1d_forward(const Conv1dShape& s, std::span<const double> in, std::span<const double> w,
                    std::span<const double> b, std::span<double> out) {
  const std::size_t lo = s.out_length();
  for (std::size_t t = 0; t < lo; ++t) {
    for (std::size_t o = 0; o < s.out_channels; ++o) {
      double acc = b.empty() ? 0.0 : b[o];
      for (std::size_t i = 0; i < s.in_channels; ++i) {
        for (std::size_t j = 0; j < s.kernel; ++j) {
          const long x = static_cast<long>(t * s.stride + j) - static_cast<long>(s.padding);
          if (x < 0 || x >= static_cast<long>(s.length)) continue;
          acc += w[(o * s.in_channels + i) * s.kernel + j] * in[x * s.in_channels + i];
        }
      }
      out[t * s.out_channels + o] = acc;
    }
  }
}

void conv1d_backward(const Conv1dShape& s, std::span<const double> in,
                     std::span<const double> w, std::span<const double> grad_out,
                     std::span<double> grad_in, std::span<double> grad_w,
                     std::span<double> grad_b) {
  const std::size_t lo = s.out_length();
  for (std::size_t t = 0; t < lo; ++t) {
    for (std::size_t o = 0; o < s.out_channels; ++o) {
      const double g = grad_out[t * s.out_channels + o];
      if (!grad_b.empty()) grad_b[o] += g;
      for (std::size_t i = 0; i < s.in_channels; ++i) {
        for (std::size_t j = 0; j < s.kernel; ++j) {
          const long x = static_cast<long>(t * s.stride + j) - static_cast<long>(s.padding);
          if (x < 0 || x >= static_cast<long>(s.length)) continue;
          const std::size_t wi = (o * s.in_channels + i) * s.kernel + j;
          if (!grad_w.empty()) grad_w[wi] += g * in[x * s.in_channels + i];
          if (!grad_in.empty()) grad_in[x * s.in_channels + i] += g * w[wi];
        }
      }
    }
  }
}

void maxpool1d_forward(const PoolShape& s, std::span<const double> in, std::span<double> out,
                       std::span<std::size_t> argmax) {
  const std::size_t lo = s.out_length();
  for (std::size_t t = 0; t < lo; ++t) {
    for (std::size_t c = 0; c < s.channels; ++c) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t j = 0; j < s.window; ++j) {
        const std::size_t idx = (t * s.stride + j) * s.channels + c;
        if (in[idx] > best) {
          best = in[idx];
          arg = idx;
        }
      }
      out[t * s.channels + c] = best;
      argmax[t * s.channels + c] = arg;
    }
  }
}

void dense_forward(std::size_t rows, std::size_t cols, std::span<const double> x,
                   std::span<const double> w, std::span<const double> b, std::span<double> out) {
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = b.empty() ? 0.0 : b[r];
    for (std::size_t c = 0; c < cols; ++c) acc += w[r * cols + c] * x[c];
    out[r] = acc;
  }
}

void dense_backward(std::size_t rows, std::size_t cols, std::span<const double> x,
                    std::span<const double> w, std::span<const double> grad_out,
                    std::span<double> grad_x, std::span<double> grad_w, std::span<double> grad_b) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double g = grad_out[r];
    if (!grad_b.empty()) grad_b[r] += g;
    for (std::size_t c = 0; c < cols; ++c) {
      if (!grad_w.empty()) grad_w[r * cols + c] += g * x[c];
      if (!grad_x.empty()) grad_x[c] += g * w[r * cols + c];
    }
  }
}

}  // namespace serial
}  // namespace fstd::kernels

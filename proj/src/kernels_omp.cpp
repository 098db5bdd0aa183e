#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <limits>
#include <string>

#include "fstd/kernels.hpp"

namespace fstd::kernels {

namespace {
// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;
}  // namespace

namespace omp {

void conv1d_forward(const Conv1dShape& s, std::span<const double> in, std::span<const double> w,
                    std::span<const double> b, std::span<double> out) {
  const long lo = static_cast<long>(s.out_length());
  const std::size_t work = lo * s.out_channels * s.in_channels * s.kernel;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (long t = 0; t < lo; ++t) {
    for (std::size_t o = 0; o < s.out_channels; ++o) {
      double acc = b.empty() ? 0.0 : b[o];
      const double* wo = w.data() + o * s.in_channels * s.kernel;
      for (std::size_t i = 0; i < s.in_channels; ++i) {
        for (std::size_t j = 0; j < s.kernel; ++j) {
          const long x = static_cast<long>(t * s.stride + j) - static_cast<long>(s.padding);
          if (x < 0 || x >= static_cast<long>(s.length)) continue;
          acc += wo[i * s.kernel + j] * in[x * s.in_channels + i];
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
  const long lo = static_cast<long>(s.out_length());
  const std::size_t work = lo * s.out_channels * s.in_channels * s.kernel;
  const long oc = static_cast<long>(s.out_channels);

  if (!grad_w.empty() || !grad_b.empty()) {
    // Each thread owns whole output channels of the weight gradient.
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (long o = 0; o < oc; ++o) {
      double gb = 0.0;
      for (long t = 0; t < lo; ++t) gb += grad_out[t * s.out_channels + o];
      if (!grad_b.empty()) grad_b[o] += gb;
      if (grad_w.empty()) continue;
      for (std::size_t i = 0; i < s.in_channels; ++i) {
        for (std::size_t j = 0; j < s.kernel; ++j) {
          double acc = 0.0;
          for (long t = 0; t < lo; ++t) {
            const long x = static_cast<long>(t * s.stride + j) - static_cast<long>(s.padding);
            if (x < 0 || x >= static_cast<long>(s.length)) continue;
            acc += grad_out[t * s.out_channels + o] * in[x * s.in_channels + i];
          }
          grad_w[(o * s.in_channels + i) * s.kernel + j] += acc;
        }
      }
    }
  }

  if (!grad_in.empty()) {
    // Gather form: each input cell sums the output cells that read it.
    const long len = static_cast<long>(s.length);
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (long x = 0; x < len; ++x) {
      for (std::size_t i = 0; i < s.in_channels; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < s.kernel; ++j) {
          const long num = x + static_cast<long>(s.padding) - static_cast<long>(j);
          if (num < 0 || num % static_cast<long>(s.stride) != 0) continue;
          const long t = num / static_cast<long>(s.stride);
          if (t >= lo) continue;
          for (std::size_t o = 0; o < s.out_channels; ++o) {
            acc += grad_out[t * s.out_channels + o] * w[(o * s.in_channels + i) * s.kernel + j];
          }
        }
        grad_in[x * s.in_channels + i] += acc;
      }
    }
  }
}

void maxpool1d_forward(const PoolShape& s, std::span<const double> in, std::span<double> out,
                       std::span<std::size_t> argmax) {
  const long lo = static_cast<long>(s.out_length());
#pragma omp parallel for schedule(static) if (lo * s.channels * s.window > kParallelWork)
  for (long t = 0; t < lo; ++t) {
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
  const long nr = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (long r = 0; r < nr; ++r) {
    double acc = b.empty() ? 0.0 : b[r];
    const double* wr = w.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * x[c];
    out[r] = acc;
  }
}

void dense_backward(std::size_t rows, std::size_t cols, std::span<const double> x,
                    std::span<const double> w, std::span<const double> grad_out,
                    std::span<double> grad_x, std::span<double> grad_w, std::span<double> grad_b) {
  const long nr = static_cast<long>(rows);
  const long nc = static_cast<long>(cols);
  const bool par = rows * cols > kParallelWork;
  if (!grad_w.empty() || !grad_b.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (long r = 0; r < nr; ++r) {
      const double g = grad_out[r];
      if (!grad_b.empty()) grad_b[r] += g;
      if (grad_w.empty()) continue;
      double* gw = grad_w.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) gw[c] += g * x[c];
    }
  }
  if (!grad_x.empty()) {
#pragma omp parallel for schedule(static) if (par)
    for (long c = 0; c < nc; ++c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < rows; ++r) acc += grad_out[r] * w[r * cols + c];
      grad_x[c] += acc;
    }
  }
}

}  // namespace omp

int configure_threads_from_env() {
  if (const char* env = std::getenv("FSTD_THREADS"); env != nullptr && *env != '\0') {
    const int cap = std::max(1, std::atoi(env));
    omp_set_num_threads(std::min(cap, omp_get_num_procs()));
  }
  return omp_get_max_threads();
}

}  // namespace fstd::kernels

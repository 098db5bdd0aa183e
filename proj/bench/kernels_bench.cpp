// Serial reference kernels against the OpenMP ones on encoder-sized inputs.
// FSTD_THREADS caps the OpenMP worker count.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fstd/kernels.hpp"

namespace {

using namespace fstd::kernels;

std::vector<double> random_values(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

Conv1dShape conv_shape(const benchmark::State& state) {
  Conv1dShape s;
  s.length = static_cast<std::size_t>(state.range(0));
  s.in_channels = 32;
  s.out_channels = 32;
  s.kernel = 3;
  s.padding = 1;
  return s;
}

template <auto Kernel>
void BM_ConvForward(benchmark::State& state) {
  const Conv1dShape s = conv_shape(state);
  const auto in = random_values(s.length * s.in_channels, 1);
  const auto w = random_values(s.out_channels * s.in_channels * s.kernel, 2);
  const auto b = random_values(s.out_channels, 3);
  std::vector<double> out(s.out_length() * s.out_channels);
  for (auto _ : state) {
    Kernel(s, in, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(out.size()));
}

template <auto Kernel>
void BM_ConvBackward(benchmark::State& state) {
  const Conv1dShape s = conv_shape(state);
  const auto in = random_values(s.length * s.in_channels, 1);
  const auto w = random_values(s.out_channels * s.in_channels * s.kernel, 2);
  const auto go = random_values(s.out_length() * s.out_channels, 4);
  std::vector<double> gi(in.size()), gw(w.size()), gb(s.out_channels);
  for (auto _ : state) {
    Kernel(s, in, w, go, gi, gw, gb);
    benchmark::DoNotOptimize(gi.data());
    benchmark::DoNotOptimize(gw.data());
  }
}

template <auto Kernel>
void BM_DenseForward(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 128;
  const auto x = random_values(cols, 1);
  const auto w = random_values(rows * cols, 2);
  const auto b = random_values(rows, 3);
  std::vector<double> out(rows);
  for (auto _ : state) {
    Kernel(rows, cols, x, w, b, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <auto Kernel>
void BM_MaxPool(benchmark::State& state) {
  PoolShape s;
  s.length = static_cast<std::size_t>(state.range(0));
  s.channels = 32;
  s.window = 2;
  s.stride = 2;
  const auto in = random_values(s.length * s.channels, 1);
  std::vector<double> out(s.out_length() * s.channels);
  std::vector<std::size_t> arg(out.size());
  for (auto _ : state) {
    Kernel(s, in, out, arg);
    benchmark::DoNotOptimize(out.data());
  }
}

void setup(const benchmark::State&) { configure_threads_from_env(); }

}  // namespace

BENCHMARK(BM_ConvForward<serial::conv1d_forward>)->Name("conv1d_forward/serial")->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(BM_ConvForward<omp::conv1d_forward>)->Name("conv1d_forward/omp")->RangeMultiplier(4)->Range(64, 4096)->Setup(setup);
BENCHMARK(BM_ConvBackward<serial::conv1d_backward>)->Name("conv1d_backward/serial")->RangeMultiplier(4)->Range(64, 4096);
BENCHMARK(BM_ConvBackward<omp::conv1d_backward>)->Name("conv1d_backward/omp")->RangeMultiplier(4)->Range(64, 4096)->Setup(setup);
BENCHMARK(BM_DenseForward<serial::dense_forward>)->Name("dense_forward/serial")->Arg(64)->Arg(512);
BENCHMARK(BM_DenseForward<omp::dense_forward>)->Name("dense_forward/omp")->Arg(64)->Arg(512)->Setup(setup);
BENCHMARK(BM_MaxPool<serial::maxpool1d_forward>)->Name("maxpool1d/serial")->Arg(512)->Arg(4096);
BENCHMARK(BM_MaxPool<omp::maxpool1d_forward>)->Name("maxpool1d/omp")->Arg(512)->Arg(4096)->Setup(setup);

BENCHMARK_MAIN();

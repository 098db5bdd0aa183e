#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fstd/autodiff.hpp"

namespace fstd {

/// Length of every trimmed exemplar clip fed to the shared encoder.
inline constexpr int kExemplarLength = 16;

/// Row-major [length x channels] per-timestep features.
struct FeatureSequence {
  std::size_t length = 0;
  std::size_t channels = 0;
  std::vector<double> values;

  double at(std::size_t t, std::size_t c) const { return values[t * channels + c]; }
  double& at(std::size_t t, std::size_t c) { return values[t * channels + c]; }
  /// Rows [begin, begin + count).
  FeatureSequence slice(std::size_t begin, std::size_t count) const;
  ad::Tensor as_tensor() const;

  friend bool operator==(const FeatureSequence&, const FeatureSequence&) = default;
};

struct EncoderConfig {
  int input_dim = 16;
  /// Output channels of the three conv blocks; the last one is the map width.
  std::array<int, 3> hidden_dims{32, 32, 32};
  int embed_dim = 32;
  int fc_dim = 64;

  void validate() const;
};

/// Encoder output on the /8 temporal grid: values is [length x channels].
struct FeatureMap {
  ad::Tensor values;

  std::size_t length() const { return values.dim(0); }
  std::size_t channels() const { return values.dim(1); }
};

/// Adds enc.conv{1,2,3}.{w,b}.
void add_encoder_params(ad::ParamStore& params, const EncoderConfig& cfg, std::mt19937_64& rng);

/// Three (conv k=3 pad=1, relu, maxpool 2/2) blocks; output length is L/8.
FeatureMap encode_untrimmed(const ad::Tensor& sequence, const ad::ParamStore& params);

/// Runs a 16-step clip through the same conv stack and the Stage-II
/// RoI-pool + FC pathway over its full extent, giving f(S_j).
ad::Tensor encode_exemplar(const ad::Tensor& clip, const ad::ParamStore& params, int bins);

}  // namespace fstd

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fstd/autodiff.hpp"
#include "fstd/encoder.hpp"

namespace fstd {

/// Architecture hyper-parameters shared by every network component.
struct ModelConfig {
  EncoderConfig encoder;
  std::vector<double> anchor_scales{8, 16, 32, 64, 128};
  int roi_bins = 4;

  void validate() const;
  /// Canonical text describing every value that affects parameter shapes.
  std::string fingerprint() const;
};

/// Encoder, Stage-I and Stage-II parameters, seeded uniform(+-g*sqrt(1/fan_in)) with He gain on layers feeding a ReLU.
ad::ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace fstd

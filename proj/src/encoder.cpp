#include "fstd/encoder.hpp"

#include <string>

#include "fstd/error.hpp"
#include "fstd/geometry.hpp"
#include "fstd/proposal.hpp"

namespace fstd {

FeatureSequence FeatureSequence::slice(std::size_t begin, std::size_t count) const {
  if (begin + count > length) throw DataError("feature slice out of range");
  FeatureSequence out{count, channels, {}};
  out.values.assign(values.begin() + begin * channels, values.begin() + (begin + count) * channels);
  return out;
}

ad::Tensor FeatureSequence::as_tensor() const {
  return ad::Tensor::constant({length, channels}, values);
}

void EncoderConfig::validate() const {
  auto positive = [](int v, const char* key) {
    if (v <= 0) throw ConfigError(std::string("encoder.") + key + " must be positive");
  };
  positive(input_dim, "input_dim");
  for (int h : hidden_dims) positive(h, "hidden_dims");
  positive(embed_dim, "embed_dim");
  positive(fc_dim, "fc_dim");
  if (hidden_dims[2] != embed_dim) {
    throw ConfigError("encoder.hidden_dims[2] (" + std::to_string(hidden_dims[2]) +
                      ") must equal encoder.embed_dim (" + std::to_string(embed_dim) + ")");
  }
}

void add_encoder_params(ad::ParamStore& params, const EncoderConfig& cfg, std::mt19937_64& rng) {
  std::size_t in = static_cast<std::size_t>(cfg.input_dim);
  for (int b = 0; b < 3; ++b) {
    const auto out = static_cast<std::size_t>(cfg.hidden_dims[b]);
    const std::string base = "enc.conv" + std::to_string(b + 1);
    params.add_uniform(base + ".w", {out, in, 3}, in * 3, rng, ad::kReluGain);
    params.add_uniform(base + ".b", {out}, in * 3, rng);
    in = out;
  }
}

namespace {

ad::Tensor conv_stack(ad::Tensor x, const ad::ParamStore& params) {
  for (int b = 1; b <= 3; ++b) {
    const std::string base = "enc.conv" + std::to_string(b);
    x = ad::conv1d(x, params.get(base + ".w"), params.get(base + ".b"), 1, 1);
    x = ad::maxpool1d(ad::relu(x), 2, 2);
  }
  return x;
}

}  // namespace

FeatureMap encode_untrimmed(const ad::Tensor& sequence, const ad::ParamStore& params) {
  const std::size_t len = sequence.dim(0);
  if (len < static_cast<std::size_t>(kTemporalStride) || len % kTemporalStride != 0) {
    throw ConfigError("encoder: sequence length " + std::to_string(len) +
                      " is not a positive multiple of 8");
  }
  return FeatureMap{conv_stack(sequence, params)};
}

ad::Tensor encode_exemplar(const ad::Tensor& clip, const ad::ParamStore& params, int bins) {
  if (clip.dim(0) != static_cast<std::size_t>(kExemplarLength)) {
    throw DataError("exemplar clip has length " + std::to_string(clip.dim(0)) + ", expected " +
                    std::to_string(kExemplarLength));
  }
  const FeatureMap map{conv_stack(clip, params)};
  return embed_segment(map, Segment(0.0, kExemplarLength), params, bins);
}

}  // namespace fstd

#include "fstd/model.hpp"

#include <sstream>

#include "fstd/error.hpp"
#include "fstd/proposal.hpp"

namespace fstd {

void ModelConfig::validate() const {
  encoder.validate();
  if (anchor_scales.empty()) throw ConfigError("model.anchor_scales must not be empty");
  for (double s : anchor_scales) {
    if (!(s > 0.0)) throw ConfigError("model.anchor_scales entries must be positive");
  }
  if (roi_bins < 1) throw ConfigError("model.roi_bins must be >= 1");
}

std::string ModelConfig::fingerprint() const {
  std::ostringstream os;
  os.precision(17);
  os << "in=" << encoder.input_dim << ";hidden=" << encoder.hidden_dims[0] << ','
     << encoder.hidden_dims[1] << ',' << encoder.hidden_dims[2] << ";d=" << encoder.embed_dim
     << ";fc=" << encoder.fc_dim << ";bins=" << roi_bins << ";scales=";
  for (double s : anchor_scales) os << s << ',';
  return os.str();
}

ad::ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ad::ParamStore params;
  add_encoder_params(params, cfg.encoder, rng);
  add_proposal_params(params, cfg, rng);
  return params;
}

}  // namespace fstd

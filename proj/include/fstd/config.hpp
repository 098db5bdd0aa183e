#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fstd/episodes.hpp"
#include "fstd/infer_eval.hpp"
#include "fstd/model.hpp"
#include "fstd/trainer.hpp"

namespace fstd {

/// Every tunable of a run in one JSON document.
struct Config {
  std::uint64_t seed = 0;
  GeneratorConfig generator;
  double test_fraction = 1.0 / 3.0;
  ModelConfig model;
  TrainConfig train;
  int pretrain_episodes = 0;
  double pretrain_learning_rate = 1e-4;
  MetaTestConfig eval;
  std::vector<double> sweep_thresholds = default_sweep_thresholds();

  void validate() const;
};

/// Defaults used when no config file is given.
Config default_config();

std::string config_to_json(const Config& cfg);
/// Keys missing from the document keep their defaults; unknown keys and
/// mistyped values throw ConfigError naming the key path.
Config config_from_json(const std::string& text, const std::string& source = "<config>");
Config load_config(const std::filesystem::path& path);
void save_config(const Config& cfg, const std::filesystem::path& path);

}  // namespace fstd

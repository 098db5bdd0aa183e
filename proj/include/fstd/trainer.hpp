#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fstd/autodiff.hpp"
#include "fstd/episodes.hpp"
#include "fstd/model.hpp"
#include "fstd/proposal.hpp"

namespace fstd {

struct TrainConfig {
  double learning_rate = 1e-4;
  double momentum = 0.9;
  double lambda = 1.0;
  int batch_size = 8;
  int episodes = 2000;
  std::uint64_t seed = 0;
  int way = 5;
  int shot = 1;
  /// Temperature dividing cosine class scores before the softmax.
  double tau = 0.1;
  LabelRule stage1_rule{0.7, 0.3, true};
  LabelRule stage2_rule{0.5, 0.5, false};
  SelectConfig train_select{0.0, 0.7, 32};
  /// Append ground-truth segments to the Stage-II candidates while training.
  bool gt_as_proposals = true;
  /// Parameters whose name starts with any of these prefixes are not updated.
  std::vector<std::string> freeze;

  void validate() const;
};

enum class TrainMode { kFull, kProposalPretrain };

struct LossBreakdown {
  double l_p1_cls = 0.0;
  double l_p1_reg = 0.0;
  double l_p2_cls = 0.0;
  double l_p2_reg = 0.0;
  double l_fewshot = 0.0;
  double l_total = 0.0;
};

/// Non-differentiable decisions of one training step: Stage-II candidates,
/// labels and balanced samples. Reusing a plan freezes them.
struct TrainingPlan {
  LabeledSet stage1_labels;
  std::vector<std::size_t> stage1_sample;
  std::vector<RegressionTarget> stage1_targets;  // per anchor; meaningful for positives
  std::vector<Segment> stage2_candidates;
  LabeledSet stage2_labels;
  std::vector<std::size_t> stage2_sample;
  std::vector<RegressionTarget> stage2_targets;
};

struct LossGraph {
  LossBreakdown breakdown;
  ad::Tensor total;
  TrainingPlan plan;
};

struct StageLoss {
  ad::Tensor cls;
  ad::Tensor reg;
};

/// Stage objective: cls averaged over the sample, reg averaged
/// over sampled positives (count floored at 1). Neither is multiplied by lambda.
StageLoss stage_loss(const StageHeads& heads, const LabeledSet& labels,
                     std::span<const std::size_t> sampled,
                     std::span<const RegressionTarget> targets);

/// Full forward pipeline and the five-term objective. With `frozen` the
/// selection, labels and samples are taken from it instead of recomputed.
LossGraph total_loss(const Episode& episode, const ad::ParamStore& params,
                     const ModelConfig& model, const TrainConfig& cfg, TrainMode mode,
                     std::uint64_t sample_seed, const TrainingPlan* frozen = nullptr);

struct TrainResult {
  ad::ParamStore params;
  std::vector<LossBreakdown> log;
};

using EpisodeCallback = std::function<void(int episode, const LossBreakdown&)>;

/// One episode per SGD-with-momentum step. Throws NumericError naming the
/// first non-finite loss term.
TrainResult train(const Dataset& dataset, const Split& split, const ModelConfig& model,
                  const TrainConfig& cfg, TrainMode mode, ad::ParamStore init,
                  const EpisodeCallback& on_episode = {});

void write_training_log(const std::vector<LossBreakdown>& log, const std::filesystem::path& path);

// ---- checkpoints ---------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  ad::ParamStore params;
};

std::uint64_t config_hash(const ModelConfig& model);

void save_checkpoint(const ad::ParamStore& params, const ModelConfig& model,
                     const std::filesystem::path& path);
/// Reads and verifies a checkpoint file (magic, version, checksum).
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Loads and checks names and shapes against the architecture; throws
/// DataError listing missing and extra parameter names.
ad::ParamStore load_checkpoint_for(const std::filesystem::path& path, const ModelConfig& model);

}  // namespace fstd

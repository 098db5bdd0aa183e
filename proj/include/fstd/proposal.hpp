#pragma once

// Two-stage class-agnostic proposal subnet.
//
// Stage I: conv(k=3)+relu over the feature map, then 1x1 conv heads giving a
// (background, foreground) logit pair and a (delta_c, delta_l) pair per anchor.
// Stage II: temporal RoI pooling of each Stage-I proposal, two FC+relu layers
// (the second activation is the proposal embedding), and FC heads with the
// same per-item layout.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fstd/autodiff.hpp"
#include "fstd/encoder.hpp"
#include "fstd/geometry.hpp"
#include "fstd/model.hpp"

namespace fstd {

struct AnchorGrid {
  std::vector<Segment> anchors;  // position-major, scale-minor
  int length = 0;
  std::vector<double> scales;

  static AnchorGrid make(int length, std::vector<double> scales);
  std::size_t num_scales() const { return scales.size(); }
};

/// Per-item foreground probability and predicted offsets (values only).
struct StageOutput {
  std::vector<double> scores;
  std::vector<RegressionTarget> offsets;

  std::size_t size() const { return scores.size(); }
};

/// Differentiable head outputs. cls and reg are flat [N x 2]: item i owns
/// entries 2i and 2i+1 (background/foreground logits, delta_c/delta_l).
struct StageHeads {
  ad::Tensor cls;
  ad::Tensor reg;
  StageOutput out;
};

struct GroundTruth {
  Segment segment;
  /// Class index carried to positives; -1 for class-agnostic ground truth.
  int cls = -1;
};

enum class Label : std::uint8_t { kNegative, kPositive, kIgnore };

struct LabeledSet {
  std::vector<Label> labels;
  std::vector<int> matched_gt;     // -1 unless positive
  std::vector<int> matched_class;  // class of matched_gt, -1 otherwise
  std::vector<double> best_tiou;

  std::size_t size() const { return labels.size(); }
  std::size_t count(Label l) const;
};

struct LabelRule {
  double pos_thresh = 0.7;
  double neg_thresh = 0.3;
  bool force_best_match = true;
};

struct Proposal {
  Segment segment;
  double score = 0.0;
  /// Index of the anchor or input proposal it was decoded from.
  std::size_t source = 0;
};

void add_proposal_params(ad::ParamStore& params, const ModelConfig& cfg, std::mt19937_64& rng);

StageHeads stage1_forward(const FeatureMap& map, const AnchorGrid& grid,
                          const ad::ParamStore& params);

LabeledSet assign_labels(std::span<const Segment> candidates, std::span<const GroundTruth> gts,
                         const LabelRule& rule);

/// Indices of an exactly 1:1 positive/negative sample: positives first.
std::vector<std::size_t> sample_balanced(const LabeledSet& labels, int batch_size,
                                         std::uint64_t seed);

struct SelectConfig {
  double score_floor = 0.0;
  double nms_thresh = 0.7;
  int top_n = 32;
};

/// Decode every reference with its predicted offsets, clip to [0, L), drop
/// scores under the floor, NMS, keep the top_n best.
std::vector<Proposal> select_proposals(const StageOutput& out, std::span<const Segment> refs,
                                       int length, const SelectConfig& cfg);

/// [bins x D] channel-wise max per bin over the feature cells the bin overlaps.
ad::Tensor roi_pool_temporal(const ad::Tensor& map, const Segment& seg, int bins);

/// RoI pool + FC(fc_dim)+relu + FC(fc_dim)+relu.
ad::Tensor embed_segment(const FeatureMap& map, const Segment& seg, const ad::ParamStore& params,
                         int bins);

struct Stage2Result {
  StageHeads heads;
  std::vector<ad::Tensor> embeddings;
};

Stage2Result stage2_forward(const FeatureMap& map, std::span<const Segment> proposals,
                            const ad::ParamStore& params, int bins);

/// softmax over each (background, foreground) pair plus raw offsets.
StageOutput summarize_heads(const ad::Tensor& cls, const ad::Tensor& reg);

}  // namespace fstd

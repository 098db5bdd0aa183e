#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fstd/autodiff.hpp"
#include "fstd/episodes.hpp"
#include "fstd/model.hpp"
#include "fstd/proposal.hpp"

namespace fstd {

enum class RankBy { kConfidence, kProposalScore, kSimilarity };

struct DetectConfig {
  double proposal_thresh = 0.3;
  double similarity_thresh = 0.02;
  double final_nms = 0.5;
  double tau = 0.1;
  SelectConfig stage1_select{0.0, 0.7, 100};
  RankBy rank_by = RankBy::kConfidence;

  void validate() const;
};

struct Detection {
  Segment segment;
  int cls = 0;
  double proposal_score = 0.0;
  double similarity_score = 0.0;
  /// proposal_score * softmax(class scores / tau)[cls]
  double confidence = 0.0;
  /// Score used for final NMS and AP ranking (selected by RankBy).
  double rank = 0.0;
};

/// Every refined Stage-II proposal with its class, before thresholding.
std::vector<Detection> score_candidates(const FeatureSequence& untrimmed,
                                        const std::vector<std::vector<FeatureSequence>>& support,
                                        const ad::ParamStore& params, const ModelConfig& model,
                                        const DetectConfig& cfg);

/// Keeps candidates passing both thresholds, then class-wise NMS at final_nms.
std::vector<Detection> finalize_detections(std::span<const Detection> candidates,
                                           const DetectConfig& cfg);

std::vector<Detection> detect(const FeatureSequence& untrimmed,
                              const std::vector<std::vector<FeatureSequence>>& support,
                              const ad::ParamStore& params, const ModelConfig& model,
                              const DetectConfig& cfg);

/// All-points interpolated AP of single-class detections against gts.
double average_precision(std::span<const Detection> dets, std::span<const Segment> gts,
                         double alpha);

/// Mean AP over classes present in gts; nullopt when gts is empty.
std::optional<double> map_at(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                             int way, double alpha);

/// alpha in {0.50, 0.55, ..., 0.95}.
std::vector<double> average_map_thresholds();

struct IterationResult {
  std::size_t iteration = 0;
  std::size_t video = 0;
  std::size_t detections = 0;
  std::size_t ground_truth = 0;
  double map_at_05 = 0.0;
  double average_map = 0.0;
  bool skipped = false;
};

struct EvalReport {
  double map_at_05 = 0.0;
  double average_map = 0.0;
  int iterations = 0;
  int skipped = 0;
  std::vector<IterationResult> per_iteration;
};

struct MetaTestConfig {
  int iterations = 1000;
  int way = 5;
  int shot = 1;
  std::uint64_t seed = 0;
  DetectConfig detect;
};

/// Per-iteration episodes come from derive_seed(seed, i); iterations run in
/// parallel and the report does not depend on the thread count.
EvalReport meta_test(const Dataset& dataset, const Split& split, const ad::ParamStore& params,
                     const ModelConfig& model, const MetaTestConfig& cfg);

struct SweepRow {
  double threshold = 0.0;
  double map_at_05 = 0.0;
  double average_map = 0.0;
};

/// meta_test once per proposal threshold over the same episode stream.
std::vector<SweepRow> threshold_sweep(const Dataset& dataset, const Split& split,
                                      const ad::ParamStore& params, const ModelConfig& model,
                                      std::span<const double> thresholds,
                                      const MetaTestConfig& cfg);

/// 0.05, 0.10, ..., 0.95
std::vector<double> default_sweep_thresholds();

void write_report_json(const EvalReport& report, const std::filesystem::path& path);
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);
void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path);
void write_detections_csv(std::span<const Detection> dets, const std::filesystem::path& path);

}  // namespace fstd

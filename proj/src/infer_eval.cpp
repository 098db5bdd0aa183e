#include "fstd/infer_eval.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "fstd/error.hpp"
#include "fstd/similarity.hpp"

namespace fstd {

void DetectConfig::validate() const {
  if (!(final_nms > 0.0 && final_nms <= 1.0)) throw ConfigError("eval.final_nms must be in (0, 1]");
  if (!(stage1_select.nms_thresh > 0.0 && stage1_select.nms_thresh <= 1.0)) {
    throw ConfigError("eval.stage1_nms must be in (0, 1]");
  }
  if (stage1_select.top_n < 1) throw ConfigError("eval.top_n must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("eval.tau must be > 0");
}

std::vector<Detection> score_candidates(const FeatureSequence& untrimmed,
                                        const std::vector<std::vector<FeatureSequence>>& support,
                                        const ad::ParamStore& params, const ModelConfig& model,
                                        const DetectConfig& cfg) {
  ad::NoGradGuard no_grad;
  const int length = static_cast<int>(untrimmed.length);
  const AnchorGrid grid = AnchorGrid::make(length, model.anchor_scales);
  const FeatureMap map = encode_untrimmed(untrimmed.as_tensor(), params);
  const StageHeads s1 = stage1_forward(map, grid, params);
  const auto props = select_proposals(s1.out, grid.anchors, length, cfg.stage1_select);
  if (props.empty() || support.empty()) return {};

  std::vector<Segment> segs;
  for (const auto& p : props) segs.push_back(p.segment);
  const Stage2Result s2 = stage2_forward(map, segs, params, model.roi_bins);

  std::vector<ad::Tensor> ex_embeds;
  std::vector<int> ex_class;
  for (std::size_t label = 0; label < support.size(); ++label) {
    for (const auto& clip : support[label]) {
      ex_embeds.push_back(encode_exemplar(clip.as_tensor(), params, model.roi_bins));
      ex_class.push_back(static_cast<int>(label));
    }
  }
  const auto sims = similarity_matrix(ex_embeds, ex_class, s2.embeddings);
  const auto scores = kshot_average(sims, static_cast<int>(support.size()));
  const auto assigned = assign_class(scores);

  std::vector<Detection> out;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    std::optional<Segment> refined;
    try {
      refined = clip_segment(decode_offsets(segs[i], s2.heads.out.offsets[i]), length);
    } catch (const std::invalid_argument&) {
      continue;
    }
    if (!refined) continue;
    std::vector<double> logits(scores.way);
    for (std::size_t c = 0; c < scores.way; ++c) logits[c] = scores.at(i, c) / cfg.tau;
    const double p = ad::softmax(logits)[static_cast<std::size_t>(assigned[i].cls)];
    Detection d{*refined, assigned[i].cls, s2.heads.out.scores[i], assigned[i].similarity,
                s2.heads.out.scores[i] * p, 0.0};
    switch (cfg.rank_by) {
      case RankBy::kConfidence: d.rank = d.confidence; break;
      case RankBy::kProposalScore: d.rank = d.proposal_score; break;
      case RankBy::kSimilarity: d.rank = d.similarity_score; break;
    }
    out.push_back(d);
  }
  return out;
}

std::vector<Detection> finalize_detections(std::span<const Detection> candidates,
                                           const DetectConfig& cfg) {
  std::vector<Detection> passing;
  int max_cls = -1;
  for (const auto& d : candidates) {
    if (d.proposal_score >= cfg.proposal_thresh && d.similarity_score >= cfg.similarity_thresh) {
      passing.push_back(d);
      max_cls = std::max(max_cls, d.cls);
    }
  }
  std::vector<Detection> out;
  for (int c = 0; c <= max_cls; ++c) {
    std::vector<ScoredSegment> items;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < passing.size(); ++i) {
      if (passing[i].cls == c) {
        items.push_back({passing[i].segment, passing[i].rank});
        idx.push_back(i);
      }
    }
    for (std::size_t k : nms_indices(items, cfg.final_nms)) out.push_back(passing[idx[k]]);
  }
  return out;
}

std::vector<Detection> detect(const FeatureSequence& untrimmed,
                              const std::vector<std::vector<FeatureSequence>>& support,
                              const ad::ParamStore& params, const ModelConfig& model,
                              const DetectConfig& cfg) {
  cfg.validate();
  const auto cands = score_candidates(untrimmed, support, params, model, cfg);
  return finalize_detections(cands, cfg);
}

double average_precision(std::span<const Detection> dets, std::span<const Segment> gts,
                         double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("average_precision: alpha must be in (0, 1]");
  if (gts.empty()) return dets.empty() ? 1.0 : 0.0;
  if (dets.empty()) return 0.0;

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].rank > dets[b].rank; });

  std::vector<char> used(gts.size(), 0);
  std::vector<char> is_tp(dets.size(), 0);
  std::vector<long double> precision(dets.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Segment& s = dets[order[k]].segment;
    double best = -1.0;
    std::size_t best_g = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double v = tiou(s, gts[g]);
      if (v >= alpha && v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best_g < gts.size()) {
      used[best_g] = 1;
      is_tp[k] = 1;
      ++tp;
    }
    precision[k] = static_cast<long double>(tp) / static_cast<long double>(k + 1);
  }
  // Monotone envelope, then sum envelope at each recall step.
  for (std::size_t k = precision.size() - 1; k-- > 0;) {
    precision[k] = std::max(precision[k], precision[k + 1]);
  }
  // Extended accumulation and a single final rounding.
  long double area = 0.0L;
  for (std::size_t k = 0; k < precision.size(); ++k) {
    if (is_tp[k]) area += precision[k];
  }
  return static_cast<double>(area / static_cast<long double>(gts.size()));
}

std::optional<double> map_at(std::span<const Detection> dets, std::span<const GroundTruth> gts,
                             int way, double alpha) {
  double total = 0.0;
  int classes = 0;
  for (int c = 0; c < way; ++c) {
    std::vector<Segment> g;
    for (const auto& gt : gts) {
      if (gt.cls == c) g.push_back(gt.segment);
    }
    if (g.empty()) continue;
    std::vector<Detection> d;
    for (const auto& det : dets) {
      if (det.cls == c) d.push_back(det);
    }
    total += average_precision(d, g, alpha);
    ++classes;
  }
  if (classes == 0) return std::nullopt;
  return total / classes;
}

std::vector<double> average_map_thresholds() {
  std::vector<double> a;
  for (int i = 0; i < 10; ++i) a.push_back((50.0 + 5.0 * i) / 100.0);
  return a;
}

std::vector<double> default_sweep_thresholds() {
  std::vector<double> t;
  for (int i = 1; i <= 19; ++i) t.push_back(5.0 * i / 100.0);
  return t;
}

namespace {

struct PreparedIteration {
  Episode episode;
  std::vector<Detection> candidates;
};

void score_iteration(const std::vector<Detection>& dets, const Episode& ep, IterationResult& r) {
  r.detections = dets.size();
  r.ground_truth = ep.ground_truth.size();
  const auto m05 = map_at(dets, ep.ground_truth, ep.way, 0.5);
  if (!m05) {
    r.skipped = true;
    return;
  }
  r.map_at_05 = *m05;
  double sum = 0.0;
  for (double a : average_map_thresholds()) sum += *map_at(dets, ep.ground_truth, ep.way, a);
  r.average_map = sum / 10.0;
}

EvalReport summarize(std::vector<IterationResult> rows) {
  EvalReport rep;
  rep.iterations = static_cast<int>(rows.size());
  double m = 0.0, a = 0.0;
  int used = 0;
  for (const auto& r : rows) {
    if (r.skipped) {
      fmt::print(stderr, "warning: iteration {} (video {}) has no ground truth; skipped\n",
                 r.iteration, r.video);
      ++rep.skipped;
      continue;
    }
    m += r.map_at_05;
    a += r.average_map;
    ++used;
  }
  if (used > 0) {
    rep.map_at_05 = m / used;
    rep.average_map = a / used;
  }
  rep.per_iteration = std::move(rows);
  return rep;
}

// Runs fn(i) for every iteration in parallel; rethrows the first failure.
template <typename Fn>
void parallel_iterations(int n, Fn&& fn) {
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
#pragma omp critical(fstd_iteration_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

std::vector<PreparedIteration> prepare(const Dataset& dataset, const Split& split,
                                       const ad::ParamStore& params, const ModelConfig& model,
                                       const MetaTestConfig& cfg) {
  if (cfg.iterations < 1) throw ConfigError("eval.iterations must be >= 1");
  cfg.detect.validate();
  std::vector<PreparedIteration> prep(static_cast<std::size_t>(cfg.iterations));
  parallel_iterations(cfg.iterations, [&](int i) {
    auto& p = prep[static_cast<std::size_t>(i)];
    p.episode = sample_episode(dataset, split, SplitSide::kTest, cfg.way, cfg.shot,
                               derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    p.candidates = score_candidates(p.episode.features, p.episode.support, params, model, cfg.detect);
  });
  return prep;
}

EvalReport evaluate_prepared(const std::vector<PreparedIteration>& prep, const DetectConfig& dc) {
  std::vector<IterationResult> rows(prep.size());
  for (std::size_t i = 0; i < prep.size(); ++i) {
    rows[i].iteration = i;
    rows[i].video = prep[i].episode.video_index;
    score_iteration(finalize_detections(prep[i].candidates, dc), prep[i].episode, rows[i]);
  }
  return summarize(std::move(rows));
}

}  // namespace

EvalReport meta_test(const Dataset& dataset, const Split& split, const ad::ParamStore& params,
                     const ModelConfig& model, const MetaTestConfig& cfg) {
  return evaluate_prepared(prepare(dataset, split, params, model, cfg), cfg.detect);
}

std::vector<SweepRow> threshold_sweep(const Dataset& dataset, const Split& split,
                                      const ad::ParamStore& params, const ModelConfig& model,
                                      std::span<const double> thresholds,
                                      const MetaTestConfig& cfg) {
  if (thresholds.empty()) throw ConfigError("sweep: threshold list is empty");
  const auto prep = prepare(dataset, split, params, model, cfg);
  std::vector<SweepRow> rows;
  for (double t : thresholds) {
    DetectConfig dc = cfg.detect;
    dc.proposal_thresh = t;
    const EvalReport rep = evaluate_prepared(prep, dc);
    rows.push_back({t, rep.map_at_05, rep.average_map});
  }
  return rows;
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["map_at_05"] = report.map_at_05;
  j["average_map"] = report.average_map;
  j["iterations"] = report.iterations;
  j["skipped"] = report.skipped;
  auto& rows = j["per_iteration"] = nlohmann::ordered_json::array();
  for (const auto& r : report.per_iteration) {
    rows.push_back({{"iteration", r.iteration},
                    {"video", r.video},
                    {"detections", r.detections},
                    {"ground_truth", r.ground_truth},
                    {"map_at_05", r.map_at_05},
                    {"average_map", r.average_map},
                    {"skipped", r.skipped}});
  }
  std::ofstream os(path);
  if (!os) throw DataError("cannot write report " + path.string());
  os << j.dump(2) << '\n';
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write report " + path.string());
  os << "iteration,video,detections,ground_truth,map_at_05,average_map,skipped\n";
  for (const auto& r : report.per_iteration) {
    os << fmt::format("{},{},{},{},{},{},{}\n", r.iteration, r.video, r.detections,
                      r.ground_truth, r.map_at_05, r.average_map, r.skipped ? 1 : 0);
  }
  os << fmt::format("mean,,,,{},{},{}\n", report.map_at_05, report.average_map,
                    report.skipped);
}

void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write sweep table " + path.string());
  os << "threshold,map_at_05,average_map\n";
  for (const auto& r : rows) {
    os << fmt::format("{},{},{}\n", r.threshold, r.map_at_05, r.average_map);
  }
}

void write_detections_csv(std::span<const Detection> dets, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write detections " + path.string());
  os << "start,end,class,proposal_score,similarity_score,confidence\n";
  for (const auto& d : dets) {
    os << fmt::format("{},{},{},{},{},{}\n", d.segment.start(),
                      d.segment.end(), d.cls, d.proposal_score, d.similarity_score, d.confidence);
  }
}

}  // namespace fstd

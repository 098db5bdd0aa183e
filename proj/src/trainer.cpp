#include "fstd/trainer.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <unordered_map>

#include "fstd/error.hpp"
#include "fstd/similarity.hpp"

namespace fstd {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0, 1)");
  if (!(lambda >= 0.0)) throw ConfigError("train.lambda must be >= 0");
  if (batch_size <= 0 || batch_size % 2 != 0) {
    throw ConfigError("train.batch_size must be positive and even");
  }
  if (episodes < 0) throw ConfigError("train.episodes must be >= 0");
  if (way < 1) throw ConfigError("train.way must be >= 1");
  if (shot < 1) throw ConfigError("train.shot must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("train.tau must be > 0");
}

StageLoss stage_loss(const StageHeads& heads, const LabeledSet& labels,
                     std::span<const std::size_t> sampled,
                     std::span<const RegressionTarget> targets) {
  std::vector<ad::Tensor> cls_terms, reg_terms;
  for (std::size_t i : sampled) {
    const Label l = labels.labels.at(i);
    if (l == Label::kIgnore) throw ConfigError("stage_loss: sampled item is labelled ignore");
    const std::size_t pair[2] = {2 * i, 2 * i + 1};
    cls_terms.push_back(ad::softmax_cross_entropy(ad::gather(heads.cls, pair),
                                                  l == Label::kPositive ? 1 : 0));
    if (l == Label::kPositive) {
      const auto& t = targets[i];
      reg_terms.push_back(ad::smooth_l1(ad::gather(heads.reg, pair),
                                        ad::Tensor::constant({2}, {t.delta_c, t.delta_l})));
    }
  }
  StageLoss out;
  out.cls = cls_terms.empty()
                ? ad::Tensor::constant({}, {0.0})
                : ad::scale(ad::sum(cls_terms), 1.0 / static_cast<double>(cls_terms.size()));
  const double n_reg = std::max<std::size_t>(reg_terms.size(), 1);
  out.reg = reg_terms.empty() ? ad::Tensor::constant({}, {0.0})
                              : ad::scale(ad::sum(reg_terms), 1.0 / n_reg);
  return out;
}

namespace {

std::vector<RegressionTarget> targets_for(std::span<const Segment> refs, const LabeledSet& labels,
                                          std::span<const GroundTruth> gts) {
  std::vector<RegressionTarget> t(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (labels.labels[i] == Label::kPositive) {
      t[i] = encode_offsets(gts[static_cast<std::size_t>(labels.matched_gt[i])].segment, refs[i]);
    }
  }
  return t;
}

}  // namespace

LossGraph total_loss(const Episode& episode, const ad::ParamStore& params,
                     const ModelConfig& model, const TrainConfig& cfg, TrainMode mode,
                     std::uint64_t sample_seed, const TrainingPlan* frozen) {
  const int length = static_cast<int>(episode.features.length);
  const AnchorGrid grid = AnchorGrid::make(length, model.anchor_scales);
  const auto& gts = episode.proposal_ground_truth;

  const FeatureMap map = encode_untrimmed(episode.features.as_tensor(), params);
  const StageHeads s1 = stage1_forward(map, grid, params);

  LossGraph g;
  TrainingPlan& plan = g.plan;
  if (frozen != nullptr) {
    plan = *frozen;
  } else {
    plan.stage1_labels = assign_labels(grid.anchors, gts, cfg.stage1_rule);
    plan.stage1_sample = sample_balanced(plan.stage1_labels, cfg.batch_size,
                                         derive_seed(sample_seed, 1));
    plan.stage1_targets = targets_for(grid.anchors, plan.stage1_labels, gts);
    for (const Proposal& p : select_proposals(s1.out, grid.anchors, length, cfg.train_select)) {
      plan.stage2_candidates.push_back(p.segment);
    }
    if (cfg.gt_as_proposals) {
      for (const auto& gt : gts) plan.stage2_candidates.push_back(gt.segment);
    }
    plan.stage2_labels = assign_labels(plan.stage2_candidates, gts, cfg.stage2_rule);
    plan.stage2_sample = sample_balanced(plan.stage2_labels, cfg.batch_size,
                                         derive_seed(sample_seed, 2));
    plan.stage2_targets = targets_for(plan.stage2_candidates, plan.stage2_labels, gts);
  }

  const StageLoss p1 = stage_loss(s1, plan.stage1_labels, plan.stage1_sample, plan.stage1_targets);
  std::vector<ad::Tensor> terms{p1.cls, ad::scale(p1.reg, cfg.lambda)};
  LossBreakdown& b = g.breakdown;
  b.l_p1_cls = p1.cls.item();
  b.l_p1_reg = p1.reg.item();

  if (!plan.stage2_candidates.empty()) {
    const Stage2Result s2 = stage2_forward(map, plan.stage2_candidates, params, model.roi_bins);
    const StageLoss p2 =
        stage_loss(s2.heads, plan.stage2_labels, plan.stage2_sample, plan.stage2_targets);
    terms.push_back(p2.cls);
    terms.push_back(ad::scale(p2.reg, cfg.lambda));
    b.l_p2_cls = p2.cls.item();
    b.l_p2_reg = p2.reg.item();

    if (mode == TrainMode::kFull) {
      // Only positives matched to an episode class contribute; embed just those.
      std::vector<ad::Tensor> prop_embeds;
      LabeledSet pos;
      for (std::size_t i = 0; i < plan.stage2_labels.size(); ++i) {
        if (plan.stage2_labels.labels[i] != Label::kPositive ||
            plan.stage2_labels.matched_class[i] < 0) {
          continue;
        }
        prop_embeds.push_back(s2.embeddings[i]);
        pos.labels.push_back(Label::kPositive);
        pos.matched_gt.push_back(plan.stage2_labels.matched_gt[i]);
        pos.matched_class.push_back(plan.stage2_labels.matched_class[i]);
        pos.best_tiou.push_back(plan.stage2_labels.best_tiou[i]);
      }
      if (!prop_embeds.empty()) {
        std::vector<ad::Tensor> ex_embeds;
        std::vector<int> ex_class;
        for (std::size_t label = 0; label < episode.support.size(); ++label) {
          for (const auto& clip : episode.support[label]) {
            ex_embeds.push_back(encode_exemplar(clip.as_tensor(), params, model.roi_bins));
            ex_class.push_back(static_cast<int>(label));
          }
        }
        const auto sims = similarity_matrix(ex_embeds, ex_class, prop_embeds);
        const auto scores = kshot_average(sims, episode.way);
        const ad::Tensor few = fewshot_loss(scores, pos, cfg.tau);
        terms.push_back(few);
        b.l_fewshot = few.item();
      }
    }
  }
  g.total = ad::sum(terms);
  b.l_total = b.l_p1_cls + cfg.lambda * b.l_p1_reg + b.l_p2_cls + cfg.lambda * b.l_p2_reg +
              b.l_fewshot;
  return g;
}

namespace {

void check_finite(const LossBreakdown& b, int episode) {
  const std::pair<const char*, double> terms[] = {
      {"l_p1_cls", b.l_p1_cls}, {"l_p1_reg", b.l_p1_reg}, {"l_p2_cls", b.l_p2_cls},
      {"l_p2_reg", b.l_p2_reg}, {"l_fewshot", b.l_fewshot}, {"l_total", b.l_total}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) {
      throw NumericError(fmt::format("non-finite loss term {} = {} at episode {}", name, v, episode));
    }
  }
}

bool frozen(const std::string& name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) {
    if (name.rfind(p, 0) == 0) return true;
  }
  return false;
}

}  // namespace

TrainResult train(const Dataset& dataset, const Split& split, const ModelConfig& model,
                  const TrainConfig& cfg, TrainMode mode, ad::ParamStore init,
                  const EpisodeCallback& on_episode) {
  cfg.validate();
  model.validate();
  TrainResult r{std::move(init), {}};
  std::unordered_map<std::string, std::vector<double>> velocity;
  for (const auto& [name, t] : r.params.tensors()) velocity[name].assign(t.numel(), 0.0);

  for (int e = 0; e < cfg.episodes; ++e) {
    const std::uint64_t es = derive_seed(cfg.seed, static_cast<std::uint64_t>(e));
    const Episode ep =
        sample_episode(dataset, split, SplitSide::kTrain, cfg.way, cfg.shot, derive_seed(es, 0));
    r.params.zero_grad();
    LossGraph g = total_loss(ep, r.params, model, cfg, mode, derive_seed(es, 1));
    check_finite(g.breakdown, e);
    g.total.backward();
    for (const auto& name : r.params.names()) {
      if (frozen(name, cfg.freeze)) continue;
      ad::Tensor& p = r.params.get_mut(name);
      auto vals = p.mutable_values();
      const auto grad = p.grad();
      auto& vel = velocity[name];
      for (std::size_t i = 0; i < vals.size(); ++i) {
        vel[i] = cfg.momentum * vel[i] - cfg.learning_rate * grad[i];
        vals[i] += vel[i];
      }
    }
    r.log.push_back(g.breakdown);
    if (on_episode) on_episode(e, g.breakdown);
  }
  r.params.zero_grad();
  return r;
}

void write_training_log(const std::vector<LossBreakdown>& log, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write training log " + path.string());
  os << "episode,l_p1_cls,l_p1_reg,l_p2_cls,l_p2_reg,l_fewshot,l_total\n";
  for (std::size_t e = 0; e < log.size(); ++e) {
    const auto& b = log[e];
    os << fmt::format("{},{},{},{},{},{},{}\n", e, b.l_p1_cls,
                      b.l_p1_reg, b.l_p2_cls, b.l_p2_reg, b.l_fewshot, b.l_total);
  }
}

}  // namespace fstd

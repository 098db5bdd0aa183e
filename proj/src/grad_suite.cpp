#include "fstd/grad_suite.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "fstd/episodes.hpp"
#include "fstd/proposal.hpp"
#include "fstd/similarity.hpp"
#include "fstd/trainer.hpp"

namespace fstd {

using ad::Tensor;

namespace {

Tensor randn(ad::Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = n(rng);
  return Tensor::leaf(std::move(shape), std::move(v));
}

using Maker = std::function<std::vector<Tensor>(std::mt19937_64&)>;

GradSuiteRow run_case(const std::string& name, const ad::ScalarFn& fn, const Maker& make,
                      int seeds) {
  GradSuiteRow row{name, 0.0, 0, 0, seeds};
  for (int s = 0; s < seeds; ++s) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(s) + 100);
    const auto inputs = make(rng);
    const auto r = ad::grad_check(fn, inputs, static_cast<std::uint64_t>(s));
    row.max_rel_error = std::max(row.max_rel_error, r.max_rel_error);
    row.checked += r.checked;
    row.skipped += r.skipped;
  }
  return row;
}

}  // namespace

std::vector<GradSuiteRow> run_grad_suite(int seeds) {
  using std::span;
  std::vector<GradSuiteRow> rows;
  rows.push_back(run_case(
      "conv1d", [](span<const Tensor> in) { return ad::conv1d(in[0], in[1], in[2], 1, 1); },
      [](std::mt19937_64& r) {
        return std::vector<Tensor>{randn({12, 3}, r), randn({4, 3, 3}, r), randn({4}, r)};
      },
      seeds));
  rows.push_back(run_case(
      "maxpool1d", [](span<const Tensor> in) { return ad::maxpool1d(in[0], 2, 2); },
      [](std::mt19937_64& r) { return std::vector<Tensor>{randn({16, 3}, r)}; }, seeds));
  rows.push_back(run_case(
      "dense", [](span<const Tensor> in) { return ad::dense(in[0], in[1], in[2]); },
      [](std::mt19937_64& r) {
        return std::vector<Tensor>{randn({7}, r), randn({5, 7}, r), randn({5}, r)};
      },
      seeds));
  rows.push_back(run_case(
      "relu", [](span<const Tensor> in) { return ad::relu(in[0]); },
      [](std::mt19937_64& r) { return std::vector<Tensor>{randn({20}, r)}; }, seeds));
  rows.push_back(run_case(
      "cosine_similarity",
      [](span<const Tensor> in) { return ad::cosine_similarity(in[0], in[1]); },
      [](std::mt19937_64& r) { return std::vector<Tensor>{randn({9}, r), randn({9}, r)}; },
      seeds));
  rows.push_back(run_case(
      "softmax_cross_entropy",
      [](span<const Tensor> in) { return ad::softmax_cross_entropy(in[0], 3); },
      [](std::mt19937_64& r) { return std::vector<Tensor>{randn({5}, r, 3.0)}; }, seeds));
  rows.push_back(run_case(
      "smooth_l1", [](span<const Tensor> in) { return ad::smooth_l1(in[0], in[1]); },
      [](std::mt19937_64& r) { return std::vector<Tensor>{randn({6}, r), randn({6}, r)}; },
      seeds));
  rows.push_back(run_case(
      "roi_pool_temporal",
      [](span<const Tensor> in) { return roi_pool_temporal(in[0], Segment(13.0, 61.0), 4); },
      [](std::mt19937_64& r) { return std::vector<Tensor>{randn({10, 3}, r)}; }, seeds));
  rows.push_back(run_case(
      "fewshot_loss",
      [](span<const Tensor> in) {
        // Two exemplars per class for three classes, two positive proposals.
        std::vector<Tensor> ex(in.begin(), in.begin() + 6);
        std::vector<Tensor> props(in.begin() + 6, in.end());
        const std::vector<int> ex_class{0, 0, 1, 1, 2, 2};
        const auto scores = kshot_average(similarity_matrix(ex, ex_class, props), 3);
        LabeledSet labels;
        labels.labels = {Label::kPositive, Label::kPositive};
        labels.matched_gt = {0, 1};
        labels.matched_class = {2, 0};
        labels.best_tiou = {1.0, 1.0};
        return fewshot_loss(scores, labels, 0.5);
      },
      [](std::mt19937_64& r) {
        std::vector<Tensor> v;
        for (int i = 0; i < 8; ++i) v.push_back(randn({5}, r));
        return v;
      },
      seeds));
  rows.push_back(run_case(
      "stage_loss",
      [](span<const Tensor> in) {
        StageHeads heads{in[0], in[1], {}};
        LabeledSet labels;
        labels.labels = {Label::kPositive, Label::kNegative, Label::kPositive, Label::kNegative};
        labels.matched_gt = {0, -1, 0, -1};
        labels.matched_class = {-1, -1, -1, -1};
        labels.best_tiou = {0.8, 0.1, 0.9, 0.0};
        const std::vector<std::size_t> sampled{0, 2, 1, 3};
        const std::vector<RegressionTarget> targets{{0.3, -0.2}, {}, {-0.1, 0.4}, {}};
        const StageLoss l = stage_loss(heads, labels, sampled, targets);
        return ad::add(l.cls, l.reg);
      },
      [](std::mt19937_64& r) { return std::vector<Tensor>{randn({8}, r), randn({8}, r)}; },
      seeds));
  return rows;
}

ad::GradCheckResult end_to_end_grad_check(std::uint64_t seed) {
  GeneratorConfig gen;
  gen.num_classes = 15;
  gen.num_videos = 30;
  gen.length = 32;
  gen.feature_dim = 4;
  gen.min_instances = 1;
  gen.max_instances = 2;
  gen.min_instance_len = 6;
  gen.max_instance_len = 14;
  gen.exemplars_per_class = 2;
  const Dataset ds = generate_dataset(gen, seed);
  const Split split = split_classes(ds, 1.0 / 3.0, seed);

  ModelConfig model;
  model.encoder.input_dim = 4;
  model.encoder.hidden_dims = {4, 4, 4};
  model.encoder.embed_dim = 4;
  model.encoder.fc_dim = 6;
  model.anchor_scales = {8, 16};
  model.roi_bins = 2;
  ad::ParamStore params = init_params(model, seed);

  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.shot = 2;
  // Loose Stage-II rule so the tiny episode yields positives for the few-shot term.
  cfg.stage2_rule = {0.3, 0.3, true};
  const Episode ep =
      sample_episode(ds, split, SplitSide::kTrain, cfg.way, cfg.shot, derive_seed(seed, 7));
  const TrainingPlan plan =
      total_loss(ep, params, model, cfg, TrainMode::kFull, derive_seed(seed, 8)).plan;
  return ad::grad_check_params(
      [&] { return total_loss(ep, params, model, cfg, TrainMode::kFull, 0, &plan).total; }, params,
      ad::GradCheckOptions{});
}

}  // namespace fstd

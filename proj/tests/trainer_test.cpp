#include "fstd/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fstd/error.hpp"
#include "fstd/grad_suite.hpp"

namespace fstd {
namespace {

namespace fs = std::filesystem;

struct Fixture {
  Dataset ds;
  Split split;
  ModelConfig model;
  TrainConfig train;
};

Fixture make_fixture(std::uint64_t seed = 3) {
  GeneratorConfig g;
  g.num_videos = 30;
  g.length = 128;
  g.feature_dim = 8;
  g.min_instance_len = 10;
  g.max_instance_len = 40;
  g.exemplars_per_class = 3;
  Fixture f;
  f.ds = generate_dataset(g, seed);
  f.split = split_classes(f.ds, 1.0 / 3.0, seed);
  f.model.encoder.input_dim = 8;
  f.model.encoder.hidden_dims = {8, 8, 8};
  f.model.encoder.embed_dim = 8;
  f.model.encoder.fc_dim = 16;
  f.model.anchor_scales = {8, 16, 32};
  f.model.roi_bins = 2;
  f.train.seed = seed;
  f.train.episodes = 5;
  f.train.learning_rate = 1e-3;
  return f;
}

bool same_values(const ad::ParamStore& a, const ad::ParamStore& b) {
  if (a.names() != b.names()) return false;
  for (const auto& name : a.names()) {
    const auto x = a.get(name).values();
    const auto y = b.get(name).values();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

StageHeads heads(std::vector<double> cls, std::vector<double> reg) {
  StageHeads h;
  const std::size_t n = cls.size();
  h.cls = ad::Tensor::constant({n}, std::move(cls));
  h.reg = ad::Tensor::constant({n}, std::move(reg));
  return h;
}

LabeledSet labels_of(std::vector<Label> l) {
  LabeledSet s;
  s.labels = l;
  s.matched_gt.assign(l.size(), 0);
  s.matched_class.assign(l.size(), -1);
  s.best_tiou.assign(l.size(), 0.0);
  return s;
}

TEST(StageLoss, WorkedExamples) {
  const auto h = heads({0, 0, 0, 0}, {0.5, 0.0, 0.0, 0.0});
  const std::vector<RegressionTarget> targets{{0.0, 0.0}, {}};
  const auto none = stage_loss(h, labels_of({Label::kPositive, Label::kNegative}), {}, targets);
  EXPECT_EQ(none.cls.item(), 0.0);
  EXPECT_EQ(none.reg.item(), 0.0);

  const std::vector<std::size_t> both{0, 1};
  const auto l = stage_loss(h, labels_of({Label::kPositive, Label::kNegative}), both, targets);
  EXPECT_NEAR(l.cls.item(), std::log(2.0), 1e-15);
  EXPECT_NEAR(l.reg.item(), 0.125, 1e-15);

  // Negatives alone: regression averages over a floored count of one.
  const std::vector<std::size_t> neg{1};
  EXPECT_EQ(stage_loss(h, labels_of({Label::kPositive, Label::kNegative}), neg, targets).reg.item(), 0.0);
  const std::vector<std::size_t> ign{0};
  EXPECT_THROW(stage_loss(h, labels_of({Label::kIgnore, Label::kNegative}), ign, targets), ConfigError);
}

TEST(TotalLoss, TermsAddUpAndLambdaGates) {
  const Fixture f = make_fixture();
  const auto params = init_params(f.model, 1);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Episode ep = sample_episode(f.ds, f.split, SplitSide::kTrain, 5, 1, s);
    const LossGraph g = total_loss(ep, params, f.model, f.train, TrainMode::kFull, s);
    const auto& b = g.breakdown;
    EXPECT_NEAR(g.total.item(), b.l_p1_cls + b.l_p1_reg + b.l_p2_cls + b.l_p2_reg + b.l_fewshot, 1e-9);
    EXPECT_NEAR(g.total.item(), b.l_total, 1e-9);

    TrainConfig off = f.train;
    off.lambda = 0.0;
    ad::ParamStore p = params;
    const LossGraph g0 = total_loss(ep, p, f.model, off, TrainMode::kFull, s, &g.plan);
    EXPECT_NEAR(g0.total.item(), b.l_p1_cls + b.l_p2_cls + b.l_fewshot, 1e-9);
    g0.total.backward();
    for (const char* name : {"p1.reg.w", "p1.reg.b", "p2.reg.w", "p2.reg.b"}) {
      for (double v : p.get(name).grad()) EXPECT_EQ(v, 0.0) << name;
    }
  }
}

TEST(TotalLoss, DeterministicForFixedSeed) {
  const Fixture f = make_fixture();
  const auto params = init_params(f.model, 1);
  const Episode ep = sample_episode(f.ds, f.split, SplitSide::kTrain, 5, 1, 9);
  const auto a = total_loss(ep, params, f.model, f.train, TrainMode::kFull, 4);
  const auto b = total_loss(ep, params, f.model, f.train, TrainMode::kFull, 4);
  EXPECT_EQ(a.total.item(), b.total.item());
  EXPECT_EQ(a.plan.stage1_sample, b.plan.stage1_sample);
  EXPECT_EQ(a.plan.stage2_sample, b.plan.stage2_sample);
}

TEST(Train, ZeroEpisodesLeavesParametersUnchanged) {
  Fixture f = make_fixture();
  f.train.episodes = 0;
  const auto init = init_params(f.model, 2);
  const auto r = train(f.ds, f.split, f.model, f.train, TrainMode::kFull, init);
  EXPECT_TRUE(same_values(r.params, init));
  EXPECT_TRUE(r.log.empty());
}

TEST(Train, ReproducibleAndSeedSensitive) {
  const Fixture f = make_fixture();
  const auto init = init_params(f.model, 2);
  const auto a = train(f.ds, f.split, f.model, f.train, TrainMode::kFull, init);
  const auto b = train(f.ds, f.split, f.model, f.train, TrainMode::kFull, init);
  EXPECT_TRUE(same_values(a.params, b.params));
  ASSERT_EQ(a.log.size(), 5u);
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].l_total, b.log[i].l_total);
  TrainConfig other = f.train;
  other.seed = 99;
  EXPECT_FALSE(same_values(a.params, train(f.ds, f.split, f.model, other, TrainMode::kFull, init).params));
  EXPECT_FALSE(same_values(a.params, init));
}

TEST(Train, PretrainHasNoFewshotTerm) {
  Fixture f = make_fixture();
  f.train.episodes = 10;
  const auto r = train(f.ds, f.split, f.model, f.train, TrainMode::kProposalPretrain,
                       init_params(f.model, 2));
  for (const auto& b : r.log) EXPECT_EQ(b.l_fewshot, 0.0);
  int with_fewshot = 0;
  for (const auto& b : train(f.ds, f.split, f.model, f.train, TrainMode::kFull, init_params(f.model, 2)).log) {
    with_fewshot += b.l_fewshot > 0.0;
  }
  EXPECT_GT(with_fewshot, 0);
}

TEST(Train, FreezeKeepsPrefixes) {
  Fixture f = make_fixture();
  f.train.freeze = {"enc."};
  const auto init = init_params(f.model, 2);
  const auto r = train(f.ds, f.split, f.model, f.train, TrainMode::kFull, init);
  for (const auto& name : init.names()) {
    const auto x = init.get(name).values();
    const auto y = r.params.get(name).values();
    const bool same = std::equal(x.begin(), x.end(), y.begin(), y.end());
    if (name.rfind("enc.", 0) == 0) EXPECT_TRUE(same) << name;
  }
  EXPECT_FALSE(same_values(r.params, init));
}

TEST(Train, GradientStepsOnFrozenEpisodeDescend) {
  const Fixture f = make_fixture();
  ad::ParamStore p = init_params(f.model, 5);
  const Episode ep = sample_episode(f.ds, f.split, SplitSide::kTrain, 5, 1, 2);
  const TrainingPlan plan = total_loss(ep, p, f.model, f.train, TrainMode::kFull, 7).plan;
  double prev = INFINITY;
  for (int step = 0; step < 50; ++step) {
    p.zero_grad();
    const LossGraph g = total_loss(ep, p, f.model, f.train, TrainMode::kFull, 7, &plan);
    EXPECT_LE(g.total.item(), prev + 1e-12) << "step " << step;
    prev = g.total.item();
    g.total.backward();
    for (const auto& name : p.names()) {
      ad::Tensor& t = p.get_mut(name);
      auto v = t.mutable_values();
      const auto gr = t.grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= 1e-4 * gr[i];
    }
  }
}

TEST(Train, EndToEndGradientMatchesFiniteDifferences) {
  const auto r = end_to_end_grad_check(0);
  EXPECT_GT(r.checked, 100u);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(Train, RejectsBadConfigs) {
  Fixture f = make_fixture();
  f.train.learning_rate = 0.0;
  EXPECT_THROW(f.train.validate(), ConfigError);
  f = make_fixture();
  f.train.episodes = -1;
  EXPECT_THROW(f.train.validate(), ConfigError);
  f = make_fixture();
  f.train.batch_size = 0;
  EXPECT_THROW(f.train.validate(), ConfigError);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / "fstd_ckpt_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  std::string bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
  }
  fs::path dir_;
};

TEST_F(CheckpointTest, RoundTripIsByteIdentical) {
  const Fixture f = make_fixture();
  const auto p = init_params(f.model, 4);
  save_checkpoint(p, f.model, dir_ / "a.ckpt");
  const auto back = load_checkpoint_for(dir_ / "a.ckpt", f.model);
  EXPECT_TRUE(same_values(back, p));
  save_checkpoint(back, f.model, dir_ / "b.ckpt");
  EXPECT_EQ(bytes(dir_ / "a.ckpt"), bytes(dir_ / "b.ckpt"));
  EXPECT_EQ(load_checkpoint(dir_ / "a.ckpt").config_hash, config_hash(f.model));
}

TEST_F(CheckpointTest, CorruptionAndMismatchAreReported) {
  const Fixture f = make_fixture();
  save_checkpoint(init_params(f.model, 4), f.model, dir_ / "a.ckpt");
  std::string data = bytes(dir_ / "a.ckpt");

  std::string flipped = data;
  flipped[flipped.size() / 2] ^= 0x5a;
  std::ofstream(dir_ / "flip.ckpt", std::ios::binary) << flipped;
  EXPECT_THROW(load_checkpoint(dir_ / "flip.ckpt"), DataError);

  std::ofstream(dir_ / "short.ckpt", std::ios::binary) << data.substr(0, data.size() / 3);
  EXPECT_THROW(load_checkpoint(dir_ / "short.ckpt"), DataError);

  std::ofstream(dir_ / "text.ckpt") << "hello";
  EXPECT_THROW(load_checkpoint(dir_ / "text.ckpt"), DataError);
  EXPECT_THROW(load_checkpoint(dir_ / "absent.ckpt"), DataError);

  ModelConfig wider = f.model;
  wider.encoder.fc_dim = 24;
  try {
    load_checkpoint_for(dir_ / "a.ckpt", wider);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("p2.fc1.w"), std::string::npos) << e.what();
  }
}

TEST_F(CheckpointTest, PretrainCheckpointSeedsFullTraining) {
  Fixture f = make_fixture();
  const auto pre = train(f.ds, f.split, f.model, f.train, TrainMode::kProposalPretrain,
                         init_params(f.model, 6));
  save_checkpoint(pre.params, f.model, dir_ / "pre.ckpt");
  const auto init = load_checkpoint_for(dir_ / "pre.ckpt", f.model);
  const auto full = train(f.ds, f.split, f.model, f.train, TrainMode::kFull, init);
  EXPECT_EQ(full.log.size(), 5u);
  EXPECT_FALSE(same_values(full.params, init));
}

}  // namespace
}  // namespace fstd

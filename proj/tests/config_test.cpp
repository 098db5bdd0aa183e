#include "fstd/config.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "fstd/error.hpp"

namespace fstd {
namespace {

std::string error_of(const std::string& text) {
  try {
    config_from_json(text, "cfg.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

TEST(Config, EmptyDocumentGivesDefaults) {
  const Config c = config_from_json("{}");
  const Config d = default_config();
  EXPECT_EQ(config_to_json(c), config_to_json(d));
  EXPECT_EQ(c.train.learning_rate, 1e-4);
  EXPECT_EQ(c.train.batch_size, 8);
  EXPECT_EQ(c.eval.detect.similarity_thresh, 0.02);
  EXPECT_EQ(c.eval.way, 5);
  EXPECT_EQ(c.generator.num_classes, 15);
}

TEST(Config, PartialSectionsKeepOtherDefaults) {
  const Config c = config_from_json(R"({"seed": 7, "train": {"batch_size": 32}, "eval": {"shot": 5}})");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.train.seed, 7u);
  EXPECT_EQ(c.eval.seed, 7u);
  EXPECT_EQ(c.train.batch_size, 32);
  EXPECT_EQ(c.train.momentum, 0.9);
  EXPECT_EQ(c.eval.shot, 5);
  EXPECT_EQ(c.eval.iterations, 1000);
}

TEST(Config, UnknownKeysAndWrongTypesNameThePath) {
  EXPECT_NE(error_of(R"({"train": {"learnin_rate": 1}})").find("train.learnin_rate"), std::string::npos);
  EXPECT_NE(error_of(R"({"bogus": 1})").find("bogus"), std::string::npos);
  EXPECT_NE(error_of(R"({"model": {"roi_bins": "four"}})").find("model.roi_bins"), std::string::npos);
  EXPECT_NE(error_of(R"({"eval": {"rank_by": "loudness"}})").find("eval.rank_by"), std::string::npos);
  EXPECT_NE(error_of("{not json").find("cfg.json"), std::string::npos);
  EXPECT_THROW(config_from_json(R"({"train": {"batch_size": 0}})").validate(), ConfigError);
}

TEST(Config, RoundTripThroughFile) {
  Config c = default_config();
  c.seed = 3;
  c.train.seed = c.eval.seed = 3;
  c.train.freeze = {"enc."};
  c.model.anchor_scales = {8, 24};
  c.eval.detect.rank_by = RankBy::kSimilarity;
  c.generator.exemplar_source = ExemplarSource::kCropped;
  c.sweep_thresholds = {0.1, 0.2};
  const auto path = std::filesystem::temp_directory_path() / "fstd_config_test.json";
  save_config(c, path);
  const Config back = load_config(path);
  EXPECT_EQ(config_to_json(back), config_to_json(c));
  EXPECT_EQ(back.train.freeze, c.train.freeze);
  EXPECT_EQ(back.eval.detect.rank_by, RankBy::kSimilarity);
  EXPECT_THROW(load_config(path.string() + ".missing"), ConfigError);
}

}  // namespace
}  // namespace fstd

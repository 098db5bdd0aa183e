#include "fstd/similarity.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fstd/error.hpp"

namespace fstd {
namespace {

using ad::Tensor;

Tensor vec(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor::constant({n}, std::move(v));
}

Tensor unit_at(double cosine) { return vec({cosine, std::sqrt(1.0 - cosine * cosine)}); }

ClassScores scores_of(std::vector<std::vector<double>> rows) {
  ClassScores s;
  s.way = rows.front().size();
  for (auto& r : rows) s.per_proposal.push_back(vec(std::move(r)));
  return s;
}

TEST(SimilarityMatrix, SelfOrthogonalAndShape) {
  const std::vector<Tensor> ex{vec({1, 2, 3}), vec({1, 0, 0}), vec({0, 0, 2})};
  const std::vector<int> cls{0, 1, 2};
  const std::vector<Tensor> props{vec({1, 2, 3}), vec({0, 5, 0})};
  const auto m = similarity_matrix(ex, cls, props);
  EXPECT_EQ(m.rows, 3u);
  EXPECT_EQ(m.cols, 2u);
  EXPECT_NEAR(m.at(0, 0), 1.0, 1e-15);
  EXPECT_EQ(m.at(1, 1), 0.0);
  EXPECT_EQ(m.at(2, 1), 0.0);
  const std::vector<Tensor> bad{vec({1, 2})};
  EXPECT_THROW(similarity_matrix(bad, std::vector<int>{0}, props), ConfigError);
}

TEST(KshotAverage, MeanWithinClass) {
  const std::vector<Tensor> ex{unit_at(0.2), unit_at(0.6), unit_at(-0.5)};
  const std::vector<int> cls{1, 1, 0};
  const std::vector<Tensor> props{vec({1, 0})};
  const auto s = kshot_average(similarity_matrix(ex, cls, props), 2);
  EXPECT_NEAR(s.at(0, 1), 0.4, 1e-15);
  EXPECT_NEAR(s.at(0, 0), -0.5, 1e-15);
}

TEST(KshotAverage, OneShotReordersColumns) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  std::vector<Tensor> ex, props;
  for (int i = 0; i < 5; ++i) ex.push_back(vec({n(rng), n(rng), n(rng), n(rng)}));
  for (int i = 0; i < 3; ++i) props.push_back(vec({n(rng), n(rng), n(rng), n(rng)}));
  const std::vector<int> cls{3, 0, 4, 1, 2};
  const auto m = similarity_matrix(ex, cls, props);
  const auto s = kshot_average(m, 5);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(s.at(i, static_cast<std::size_t>(cls[j])), m.at(j, i));
  }
}

TEST(KshotAverage, IdenticalExemplarsKeepValue) {
  const std::vector<Tensor> ex(5, vec({0.3, 0.4, 1.0}));
  const std::vector<int> cls(5, 0);
  const std::vector<Tensor> props{vec({1, 1, 0})};
  const auto m = similarity_matrix(ex, cls, props);
  EXPECT_NEAR(kshot_average(m, 1).at(0, 0), m.at(0, 0), 1e-15);
  EXPECT_THROW(kshot_average(m, 2), ConfigError);
}

TEST(AssignClass, ArgmaxWithLowestIndexTies) {
  const auto a = assign_class(scores_of({{0.1, 0.9, 0.3, 0.2, 0.0}, {0.5, 0.5, 0.5, 0.5, 0.5}}));
  EXPECT_EQ(a[0].cls, 1);
  EXPECT_EQ(a[0].similarity, 0.9);
  EXPECT_EQ(a[1].cls, 0);
  EXPECT_EQ(assign_class(scores_of({{-0.7}}))[0].cls, 0);
}

LabeledSet positives(std::vector<int> classes) {
  LabeledSet ls;
  for (int c : classes) {
    ls.labels.push_back(c == -2 ? Label::kNegative : Label::kPositive);
    ls.matched_gt.push_back(c == -2 ? -1 : 0);
    ls.matched_class.push_back(c == -2 ? -1 : c);
    ls.best_tiou.push_back(1.0);
  }
  return ls;
}

TEST(FewshotLoss, WorkedExamples) {
  EXPECT_EQ(fewshot_loss(scores_of({{0.3, 0.1}}), positives({-2}), 0.1).item(), 0.0);
  // Positive matched to a class outside the episode is skipped.
  EXPECT_EQ(fewshot_loss(scores_of({{0.3, 0.1}}), positives({-1}), 0.1).item(), 0.0);

  const double peaked = fewshot_loss(scores_of({{1, -1, -1, -1, -1}}), positives({0}), 0.1).item();
  EXPECT_NEAR(peaked, std::log1p(4.0 * std::exp(-20.0)), 1e-22);
  EXPECT_NEAR(peaked, 8.2e-9, 1e-10);

  const double uniform =
      fewshot_loss(scores_of({{0.2, 0.2, 0.2, 0.2, 0.2}, {0, 0, 0, 0, 0}}), positives({3, 1}), 0.1)
          .item();
  EXPECT_NEAR(uniform, std::log(5.0), 1e-12);
  EXPECT_THROW(fewshot_loss(scores_of({{0.2}}), positives({0}), 0.0), ConfigError);
}

TEST(FewshotLoss, RelabelingInvariance) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 50; ++trial) {
    const int way = 5, shot = 1 + trial % 3;
    std::vector<Tensor> ex, props;
    std::vector<int> cls;
    for (int c = 0; c < way; ++c) {
      for (int s = 0; s < shot; ++s) {
        std::vector<double> v(8);
        for (double& x : v) x = n(rng);
        ex.push_back(vec(v));
        cls.push_back(c);
      }
    }
    std::vector<int> targets;
    for (int i = 0; i < 6; ++i) {
      std::vector<double> v(8);
      for (double& x : v) x = n(rng);
      props.push_back(vec(v));
      targets.push_back(static_cast<int>(rng() % way));
    }
    std::vector<int> perm(way);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);

    std::vector<int> cls_p(cls.size()), targets_p(targets.size());
    for (std::size_t j = 0; j < cls.size(); ++j) cls_p[j] = perm[static_cast<std::size_t>(cls[j])];
    for (std::size_t i = 0; i < targets.size(); ++i) {
      targets_p[i] = perm[static_cast<std::size_t>(targets[i])];
    }
    const auto s = kshot_average(similarity_matrix(ex, cls, props), way);
    const auto sp = kshot_average(similarity_matrix(ex, cls_p, props), way);
    EXPECT_NEAR(fewshot_loss(s, positives(targets), 0.1).item(),
                fewshot_loss(sp, positives(targets_p), 0.1).item(), 1e-9);
    const auto a = assign_class(s);
    const auto ap = assign_class(sp);
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(ap[i].cls, perm[static_cast<std::size_t>(a[i].cls)]);
    }
  }
}

}  // namespace
}  // namespace fstd

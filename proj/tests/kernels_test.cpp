#include "fstd/kernels.hpp"

#include <gtest/gtest.h>

#include <random>
#include <vector>

namespace fstd::kernels {
namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = nd(rng);
  return v;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

struct ConvCase {
  std::size_t length, in, out, kernel, stride, padding;
};

class ConvAgreement : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvAgreement, ParallelMatchesSerial) {
  const auto c = GetParam();
  const Conv1dShape s{c.length, c.in, c.out, c.kernel, c.stride, c.padding};
  std::mt19937_64 rng(c.length * 31 + c.kernel);
  const auto in = random_vec(c.length * c.in, rng);
  const auto w = random_vec(c.out * c.in * c.kernel, rng);
  const auto b = random_vec(c.out, rng);
  const auto go = random_vec(s.out_length() * c.out, rng);

  std::vector<double> o1(s.out_length() * c.out), o2(o1.size());
  serial::conv1d_forward(s, in, w, b, o1);
  omp::conv1d_forward(s, in, w, b, o2);
  EXPECT_EQ(o1, o2);

  std::vector<double> gi1(in.size()), gw1(w.size()), gb1(b.size());
  std::vector<double> gi2(in.size()), gw2(w.size()), gb2(b.size());
  serial::conv1d_backward(s, in, w, go, gi1, gw1, gb1);
  omp::conv1d_backward(s, in, w, go, gi2, gw2, gb2);
  expect_close(gi1, gi2, 1e-12);
  expect_close(gw1, gw2, 1e-12);
  expect_close(gb1, gb2, 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvAgreement,
                         ::testing::Values(ConvCase{3, 1, 1, 1, 1, 0}, ConvCase{4, 1, 1, 1, 2, 0},
                                           ConvCase{512, 16, 32, 3, 1, 1},
                                           ConvCase{64, 32, 10, 1, 1, 0},
                                           ConvCase{33, 5, 7, 5, 2, 2},
                                           ConvCase{16, 4, 4, 3, 3, 1}));

TEST(Maxpool, ParallelMatchesSerial) {
  std::mt19937_64 rng(5);
  const PoolShape s{512, 32, 2, 2};
  const auto in = random_vec(512 * 32, rng);
  std::vector<double> o1(s.out_length() * 32), o2(o1.size());
  std::vector<std::size_t> a1(o1.size()), a2(o1.size());
  serial::maxpool1d_forward(s, in, o1, a1);
  omp::maxpool1d_forward(s, in, o2, a2);
  EXPECT_EQ(o1, o2);
  EXPECT_EQ(a1, a2);
}

TEST(Dense, ParallelMatchesSerial) {
  std::mt19937_64 rng(9);
  const std::size_t m = 300, n = 200;
  const auto x = random_vec(n, rng), w = random_vec(m * n, rng), b = random_vec(m, rng),
             g = random_vec(m, rng);
  std::vector<double> o1(m), o2(m);
  serial::dense_forward(m, n, x, w, b, o1);
  omp::dense_forward(m, n, x, w, b, o2);
  EXPECT_EQ(o1, o2);
  std::vector<double> gx1(n), gw1(m * n), gb1(m), gx2(n), gw2(m * n), gb2(m);
  serial::dense_backward(m, n, x, w, g, gx1, gw1, gb1);
  omp::dense_backward(m, n, x, w, g, gx2, gw2, gb2);
  expect_close(gx1, gx2, 1e-12);
  expect_close(gw1, gw2, 0.0);
  expect_close(gb1, gb2, 0.0);
}

TEST(Shapes, OutLength) {
  EXPECT_EQ((Conv1dShape{3, 1, 1, 3, 1, 1}.out_length()), 3u);
  EXPECT_EQ((Conv1dShape{4, 1, 1, 1, 2, 0}.out_length()), 2u);
  EXPECT_EQ((Conv1dShape{2, 1, 1, 5, 1, 0}.out_length()), 0u);
  EXPECT_EQ((PoolShape{4, 1, 2, 2}.out_length()), 2u);
  EXPECT_EQ((PoolShape{1, 1, 2, 2}.out_length()), 0u);
}

}  // namespace
}  // namespace fstd::kernels

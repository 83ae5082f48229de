#include <gtest/gtest.h>

#include <cmath>

#include "aliad/diffcore/grad_check.hpp"
#include "aliad/diffcore/ops.hpp"
#include "aliad/error.hpp"
#include "aliad/geometry.hpp"
#include "test_util.hpp"

using namespace aliad;
using aliad::diff::Tensor;
using aliad::testing::random_normal;

TEST(MagNorm, ThreeFourFive) {
  auto z = Tensor::from({2}, {3.0, 4.0});
  auto m = geometry::mag_norm(z);
  EXPECT_NEAR(m[0], std::sqrt(2.0) * 0.6, 1e-12);
  EXPECT_NEAR(m[1], std::sqrt(2.0) * 0.8, 1e-12);
  EXPECT_NEAR(m[0], 0.84853, 1e-5);
  EXPECT_NEAR(m[1], 1.13137, 1e-5);
}

TEST(MagNorm, SingleChannelKeepsSign) {
  auto z = Tensor::from({2, 1}, {-1.0, 1.0});
  auto m = geometry::mag_norm(z);
  EXPECT_DOUBLE_EQ(m[0], -1.0);
  EXPECT_DOUBLE_EQ(m[1], 1.0);
}

TEST(MagNorm, NormIsSqrtCAndIdempotent) {
  std::mt19937_64 rng(5);
  for (std::size_t C : {1u, 2u, 7u, 64u}) {
    auto z = random_normal({9, C}, rng);
    auto m = geometry::mag_norm(z);
    auto n = diff::l2_norm(m, 1);
    for (double x : n.values()) EXPECT_NEAR(x, std::sqrt(static_cast<double>(C)), 1e-9);
    auto mm = geometry::mag_norm(m);
    for (std::size_t i = 0; i < m.numel(); ++i) EXPECT_NEAR(mm[i], m[i], 1e-12);
  }
}

TEST(MagNorm, TinyButValidInputs) {
  std::mt19937_64 rng(6);
  auto z = diff::mul_scalar(random_normal({5, 8}, rng), 1e-6);
  auto n = diff::l2_norm(geometry::mag_norm(z), 1);
  for (double x : n.values()) EXPECT_NEAR(x, std::sqrt(8.0), 1e-9);
}

TEST(MagNorm, DegenerateSliceNamesIndex) {
  auto z = Tensor::from({3, 2}, {1.0, 0.0, 0.0, 0.0, 0.5, 0.5});
  try {
    geometry::mag_norm(z);
    FAIL() << "expected DegenerateError";
  } catch (const DegenerateError& e) {
    EXPECT_NE(std::string(e.what()).find("slice 1"), std::string::npos) << e.what();
  }
}

TEST(MagNorm, GradCheck) {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 3; ++rep) {
    auto z = random_normal({4, 6}, rng);
    auto report = diff::grad_check(
        [](const std::vector<Tensor>& in) { return aliad::testing::weighted_sum(geometry::mag_norm(in[0])); }, {z},
        1e-5);
    EXPECT_TRUE(report.ok(1e-4)) << report.max_relative_error;
  }
}

TEST(Cosine, BasicCases) {
  const std::vector<double> a = {1.0, 2.0, -0.5};
  const std::vector<double> na = {-1.0, -2.0, 0.5};
  EXPECT_NEAR(geometry::cosine_similarity(a, a), 1.0, 1e-15);
  EXPECT_NEAR(geometry::cosine_similarity(a, na), -1.0, 1e-15);
  const std::vector<double> x = {1.0, 0.0}, y = {0.0, 3.0};
  EXPECT_EQ(geometry::cosine_similarity(x, y), 0.0);
  const std::vector<double> zero = {0.0, 0.0};
  EXPECT_THROW(geometry::cosine_similarity(x, zero), DegenerateError);
}

TEST(Critic, TableTemperature) {
  const std::vector<double> a = {0.3, -0.7, 2.0};
  EXPECT_NEAR(geometry::critic(a, a, 0.1), std::exp(10.0), 1e-9);
  EXPECT_NEAR(geometry::critic(a, a, 0.1), 22026.4658, 1e-4);
  const std::vector<double> x = {1.0, 0.0}, y = {0.0, 1.0};
  EXPECT_EQ(geometry::critic(x, y, 0.37), 1.0);
  EXPECT_THROW(geometry::critic(x, y, 0.0), ConfigError);
  EXPECT_THROW(geometry::critic(x, y, -1.0), ConfigError);
}

TEST(Critic, SymmetryScaleAndMonotonicity) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> a(5), b(5);
    for (auto& v : a) v = nd(rng);
    for (auto& v : b) v = nd(rng);
    EXPECT_EQ(geometry::critic(a, b, 0.1), geometry::critic(b, a, 0.1));
    std::vector<double> b5 = b;
    for (auto& v : b5) v *= 5.0;
    EXPECT_NEAR(geometry::critic(a, b5, 0.1), geometry::critic(a, b, 0.1), 1e-9 * geometry::critic(a, b, 0.1));
    const double s = geometry::cosine_similarity(a, b);
    if (s > 0) EXPECT_GT(geometry::critic(a, b, 0.1), geometry::critic(a, b, 0.2));
  }
  // Increasing in cosine: rotate b toward a.
  const std::vector<double> a = {1.0, 0.0};
  double prev = 0.0;
  for (int k = 0; k <= 10; ++k) {
    const double ang = M_PI * (1.0 - k / 10.0);
    const std::vector<double> b = {std::cos(ang), std::sin(ang)};
    const double c = geometry::critic(a, b, 0.5);
    EXPECT_GT(c, prev);
    prev = c;
  }
}

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "aliad/diffcore/grad_check.hpp"
#include "aliad/diffcore/ops.hpp"
#include "aliad/error.hpp"
#include "aliad/fusion.hpp"
#include "aliad/geometry.hpp"
#include "test_util.hpp"

using namespace aliad;
using aliad::contrastive::EmbeddingSet;
using aliad::diff::Tensor;
using aliad::fusion::AttentionNet;
using aliad::testing::random_normal;
using aliad::testing::to_vec;

namespace {

EmbeddingSet random_set(std::size_t V, std::size_t N, std::size_t C, std::mt19937_64& rng, bool masked) {
  EmbeddingSet e;
  e.z = geometry::mag_norm(random_normal({V, N, C}, rng));
  e.mask.assign(V * N, 1);
  if (masked) {
    std::bernoulli_distribution drop(0.4);
    std::uniform_int_distribution<std::size_t> pick(0, V - 1);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t v = 0; v < V; ++v) e.mask[v * N + n] = drop(rng) ? 0 : 1;
      if (e.present_count(n) == 0) e.mask[pick(rng) * N + n] = 1;
    }
  }
  return e;
}

double angle_deg(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::acos(std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

}  // namespace

TEST(Attention, HiddenWidth) {
  EXPECT_EQ(AttentionNet::hidden_width(8), 16u);
  EXPECT_EQ(AttentionNet::hidden_width(32), 16u);
  EXPECT_EQ(AttentionNet::hidden_width(128), 64u);
}

TEST(Attention, IdenticalViewsGetUniformWeights) {
  nn::Rng rng(1);
  AttentionNet net(8, rng);
  auto one = geometry::mag_norm(random_normal({1, 2, 8}, rng));
  auto z = diff::concat({one, one, one, one}, 0);
  EmbeddingSet e{z, std::vector<std::uint8_t>(8, 1)};
  auto w = fusion::attention_weights(e, net);
  for (double x : w.values()) EXPECT_NEAR(x, 0.25, 1e-12);
}

TEST(Attention, SinglePresentViewGetsFullWeight) {
  nn::Rng rng(2);
  AttentionNet net(8, rng);
  auto e = random_set(3, 2, 8, rng, false);
  e.mask = {0, 1, 1, 1, 0, 0};
  auto w = fusion::attention_weights(e, net);
  EXPECT_EQ(w[1 * 2 + 0], 1.0);
  EXPECT_EQ(w[0 * 2 + 0], 0.0);
  EXPECT_EQ(w[2 * 2 + 0], 0.0);
}

TEST(Attention, MaskedSoftmaxMatchesHandComputation) {
  nn::Rng rng(3);
  AttentionNet net(8, rng);
  auto e = random_set(3, 1, 8, rng, false);
  e.mask = {1, 0, 1};
  auto logits = net.logits(diff::reshape(e.z, {3, 8}));
  const double m = std::max(logits[0], logits[2]);
  const double a = std::exp(logits[0] - m), c = std::exp(logits[2] - m);
  auto w = fusion::attention_weights(e, net);
  EXPECT_NEAR(w[0], a / (a + c), 1e-12);
  EXPECT_EQ(w[1], 0.0);
  EXPECT_NEAR(w[2], c / (a + c), 1e-12);
}

TEST(Attention, MaskedWeightLaw) {
  nn::Rng rng(4);
  AttentionNet net(16, rng);
  for (int rep = 0; rep < 20; ++rep) {
    auto e = random_set(5, 7, 16, rng, true);
    auto w = fusion::attention_weights(e, net);
    for (std::size_t n = 0; n < 7; ++n) {
      double s = 0.0;
      for (std::size_t v = 0; v < 5; ++v) {
        const double x = w[v * 7 + n];
        EXPECT_GE(x, 0.0);
        if (!e.mask[v * 7 + n]) EXPECT_EQ(x, 0.0);
        s += x;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Attention, NoPresentViewThrows) {
  nn::Rng rng(5);
  AttentionNet net(8, rng);
  auto e = random_set(2, 2, 8, rng, false);
  e.mask = {1, 0, 1, 0};
  EXPECT_THROW(fusion::attention_weights(e, net), Error);
}

// Only the attention path reaches the encoder output here, so any gradient
// on z would have to cross the stop-gradient.
TEST(Attention, StopGradientBoundary) {
  nn::Rng rng(6);
  AttentionNet net(8, rng);
  const auto z0 = to_vec(geometry::mag_norm(random_normal({3, 4, 8}, rng)));
  const std::vector<std::uint8_t> mask(12, 1);

  Tensor z = Tensor::from({3, 4, 8}, z0, true);
  auto w = fusion::attention_weights(EmbeddingSet{z, mask}, net, true);
  aliad::testing::weighted_sum(w).backward();
  if (z.has_grad())
    for (double g : z.grad()) EXPECT_EQ(g, 0.0);
  nn::NamedParams params;
  net.collect("att", params);
  double total = 0.0;
  for (auto& [name, p] : params)
    for (double g : p.grad()) total += std::abs(g);
  EXPECT_GT(total, 0.0);

  Tensor z2 = Tensor::from({3, 4, 8}, z0, true);
  auto w2 = fusion::attention_weights(EmbeddingSet{z2, mask}, net, false);
  aliad::testing::weighted_sum(w2).backward();
  double leak = 0.0;
  for (double g : z2.grad()) leak += std::abs(g);
  EXPECT_GT(leak, 0.0);
}

TEST(Attention, UniformWeights) {
  EmbeddingSet e{Tensor::zeros({3, 2, 4}), {1, 1, 1, 0, 0, 1}};
  auto w = fusion::uniform_weights(e);
  EXPECT_EQ(to_vec(w), (std::vector<double>{0.5, 0.5, 0.5, 0.0, 0.0, 0.5}));
}

TEST(Fusion, SinglePresentViewIsExact) {
  std::mt19937_64 rng(7);
  auto e = random_set(3, 1, 6, rng, false);
  e.mask = {0, 1, 0};
  auto f = fusion::weighted_fusion(e, Tensor::from({3, 1}, {0.0, 1.0, 0.0}));
  for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(f[c], e.z[6 + c]);
}

TEST(Fusion, IdenticalViewsSurviveMagNorm) {
  std::mt19937_64 rng(8);
  auto one = geometry::mag_norm(random_normal({1, 1, 5}, rng));
  EmbeddingSet e{diff::concat({one, one}, 0), {1, 1}};
  auto f = geometry::mag_norm(fusion::weighted_fusion(e, Tensor::from({2, 1}, {0.3, 0.7})));
  for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(f[c], one[c], 1e-12);
}

TEST(Fusion, RightAngleExample) {
  EmbeddingSet e{Tensor::from({2, 1, 2}, {1.0, 0.0, 0.0, 1.0}), {1, 1}};
  auto f = fusion::weighted_fusion(e, Tensor::from({2, 1}, {0.8, 0.2}));
  const double deg = angle_deg(to_vec(f), {1.0, 0.0});
  EXPECT_NEAR(deg, std::atan(0.25) * 180.0 / std::numbers::pi, 1e-10);
  EXPECT_NEAR(deg, 14.04, 5e-3);
}

TEST(Fusion, HigherWeightPullsTowardView) {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 10; ++rep) {
    EmbeddingSet e{geometry::mag_norm(random_normal({2, 1, 6}, rng)), {1, 1}};
    const std::vector<double> v1(e.z.values().begin(), e.z.values().begin() + 6);
    double prev = 1e9;
    for (double w1 = 0.05; w1 < 1.0; w1 += 0.1) {
      const double a = angle_deg(to_vec(fusion::weighted_fusion(e, Tensor::from({2, 1}, {w1, 1.0 - w1}))), v1);
      EXPECT_LT(a, prev);
      prev = a;
    }
  }
}

// Solve [z0 z1 z2] c = f by Cramer's rule and check c >= 0.
TEST(Fusion, LiesInConicHull) {
  std::mt19937_64 rng(10);
  nn::Rng nrng(10);
  AttentionNet net(3, nrng);
  auto det3 = [](const std::array<std::array<double, 3>, 3>& m) {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  };
  for (int rep = 0; rep < 20; ++rep) {
    auto e = random_set(3, 1, 3, rng, false);
    auto f = fusion::weighted_fusion(e, fusion::attention_weights(e, net));
    std::array<std::array<double, 3>, 3> basis{};
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t v = 0; v < 3; ++v) basis[r][v] = e.z[v * 3 + r];
    const double d = det3(basis);
    ASSERT_GT(std::abs(d), 1e-6);
    for (std::size_t v = 0; v < 3; ++v) {
      auto m = basis;
      for (std::size_t r = 0; r < 3; ++r) m[r][v] = f[r];
      EXPECT_GE(det3(m) / d, -1e-12);
    }
  }
}

TEST(Fusion, GradCheck) {
  std::mt19937_64 rng(11);
  nn::Rng nrng(11);
  AttentionNet net(4, nrng);
  auto e = random_set(3, 2, 4, rng, false);
  e.mask = {1, 1, 0, 1, 1, 1};
  auto report = diff::grad_check(
      [&](const std::vector<Tensor>& in) {
        EmbeddingSet s{in[0], e.mask};
        return aliad::testing::weighted_sum(fusion::weighted_fusion(s, fusion::attention_weights(s, net, false)));
      },
      {e.z}, 1e-5);
  EXPECT_TRUE(report.ok(1e-4)) << report.max_relative_error;
}

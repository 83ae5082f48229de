#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "aliad/diffcore/grad_check.hpp"
#include "aliad/diffcore/ops.hpp"
#include "aliad/error.hpp"
#include "aliad/moe.hpp"
#include "test_util.hpp"

using namespace aliad;
using namespace aliad::moe;
using aliad::diff::Tensor;
using aliad::testing::random_normal;
using aliad::testing::to_vec;

namespace {

// Clean logits recomputed with plain loops from the gate weights.
std::vector<double> oracle_logits(const Tensor& tokens, const Tensor& w) {
  const std::size_t T = tokens.size(0), C = tokens.size(1), E = w.size(1);
  std::vector<double> out(T * E, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t c = 0; c < C; ++c) out[t * E + e] += tokens[t * C + c] * w[c * E + e];
  return out;
}

void randomize(Tensor t, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> nd(0.0, scale);
  for (auto& x : t.mutable_values()) x = nd(rng);
}

}  // namespace

TEST(GateConfig, Validation) {
  EXPECT_NO_THROW((GateConfig{16, 3, true}.validate()));
  EXPECT_THROW((GateConfig{4, 5, true}.validate()), ConfigError);
  EXPECT_THROW((GateConfig{4, 0, true}.validate()), ConfigError);
  nn::Rng rng(1);
  EXPECT_THROW(Gate(8, GateConfig{2, 3, false}, rng), ConfigError);
}

TEST(Gate, SparsityAndNormalization) {
  const std::pair<std::size_t, std::size_t> grid[] = {{8, 2}, {16, 3}, {32, 4}};
  for (auto [E, K] : grid) {
    for (bool train : {false, true}) {
      nn::Rng rng(E * 10 + K);
      Gate gate(12, GateConfig{E, K, true}, rng);
      auto tokens = random_normal({20, 12}, rng);
      auto out = noisy_topk_gate(tokens, gate, train, &rng);
      for (std::size_t t = 0; t < 20; ++t) {
        std::size_t nonzero = 0;
        double s = 0.0;
        for (std::size_t e = 0; e < E; ++e) {
          const double g = out.sparse_weights[t * E + e];
          EXPECT_GE(g, 0.0);
          if (g > 0.0) ++nonzero;
          s += g;
        }
        EXPECT_EQ(nonzero, K);
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
      for (std::size_t e = 0; e < E; ++e) {
        double col = 0.0;
        for (std::size_t t = 0; t < 20; ++t) col += out.sparse_weights[t * E + e];
        EXPECT_NEAR(out.importance[e], col, 1e-12);
      }
    }
  }
}

TEST(Gate, FullTopKIsDenseSoftmax) {
  nn::Rng rng(2);
  Gate gate(6, GateConfig{5, 5, false}, rng);
  auto tokens = random_normal({4, 6}, rng);
  auto out = noisy_topk_gate(tokens, gate, true);
  auto dense = diff::softmax(diff::matmul(tokens, gate.gate_weight()), 1);
  for (std::size_t i = 0; i < dense.numel(); ++i) EXPECT_NEAR(out.sparse_weights[i], dense[i], 1e-12);
}

TEST(Gate, SelectionMatchesArgsortOracle) {
  nn::Rng rng(3);
  Gate gate(10, GateConfig{8, 3, false}, rng);
  auto tokens = random_normal({4, 10}, rng);
  auto out = noisy_topk_gate(tokens, gate, true);
  const auto logits = oracle_logits(tokens, gate.gate_weight());
  for (std::size_t t = 0; t < 4; ++t) {
    std::vector<std::size_t> idx(8);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return logits[t * 8 + a] > logits[t * 8 + b]; });
    idx.resize(3);
    EXPECT_EQ(out.selected[t], idx);
    // Softmax over the kept logits.
    double den = 0.0;
    for (auto e : idx) den += std::exp(logits[t * 8 + e]);
    for (auto e : idx) EXPECT_NEAR(out.sparse_weights[t * 8 + e], std::exp(logits[t * 8 + e]) / den, 1e-12);
  }
}

TEST(Gate, TiesGoToLowerIndex) {
  nn::Rng rng(4);
  Gate gate(2, GateConfig{4, 2, false}, rng);
  Tensor w = gate.gate_weight();
  auto v = w.mutable_values();
  std::fill(v.begin(), v.end(), 0.0);
  auto out = noisy_topk_gate(Tensor::from({1, 2}, {1.0, 1.0}), gate, false);
  EXPECT_EQ(out.selected[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(out.sparse_weights[0], 0.5);
}

TEST(Gate, NoiseFreeGatingIsBitwiseDeterministic) {
  nn::Rng rng(5);
  Gate gate(8, GateConfig{16, 3, true}, rng);
  auto tokens = random_normal({9, 8}, rng);
  auto a = noisy_topk_gate(tokens, gate, false);
  auto b = noisy_topk_gate(tokens, gate, false);
  EXPECT_EQ(std::memcmp(a.sparse_weights.values().data(), b.sparse_weights.values().data(), 9 * 16 * sizeof(double)),
            0);
  EXPECT_EQ(a.selected, b.selected);
}

TEST(Gate, NoiseNeedsGenerator) {
  nn::Rng rng(6);
  Gate gate(4, GateConfig{4, 2, true}, rng);
  EXPECT_THROW(noisy_topk_gate(random_normal({2, 4}, rng), gate, true, nullptr), Error);
  EXPECT_THROW(noisy_topk_gate(Tensor::zeros({0, 4}), gate, false), ShapeError);
}

TEST(Gate, HardCountsWithoutNoise) {
  nn::Rng rng(7);
  Gate gate(6, GateConfig{8, 3, true}, rng);
  auto out = noisy_topk_gate(random_normal({10, 6}, rng), gate, false);
  EXPECT_EQ(to_vec(out.load), out.token_counts);
  EXPECT_EQ(std::accumulate(out.token_counts.begin(), out.token_counts.end(), 0.0), 30.0);
}

// The smooth load lets the balancing loss train the gate. Noise is redrawn
// from the same seed on every evaluation so the function is fixed.
TEST(Gate, LoadSurrogateGradCheck) {
  nn::Rng rng(8);
  Gate gate(5, GateConfig{6, 2, true}, rng);
  std::mt19937_64 init(8);
  randomize(gate.noise_weight(), init, 0.3);
  auto tokens = random_normal({7, 5}, init);
  auto f = [&](const std::vector<Tensor>&) {
    nn::Rng noise(123);
    auto out = noisy_topk_gate(tokens, gate, true, &noise);
    return cv_squared(out.load);
  };
  auto report = diff::grad_check(f, {gate.gate_weight(), gate.noise_weight()}, 1e-5);
  EXPECT_TRUE(report.ok(1e-4)) << report.max_relative_error;
  double mag = 0.0;
  for (const auto& g : report.analytic)
    for (double x : g) mag += std::abs(x);
  EXPECT_GT(mag, 0.0);

  auto lb = [&](const std::vector<Tensor>&) {
    nn::Rng noise(321);
    auto one = noisy_topk_gate(tokens, gate, true, &noise);
    return load_balancing_loss(&one, nullptr);
  };
  auto lb_report = diff::grad_check(lb, {gate.gate_weight(), gate.noise_weight()}, 1e-5);
  EXPECT_TRUE(lb_report.ok(1e-4)) << lb_report.max_relative_error;
}

TEST(MoeHead, SingleExpertIsExact) {
  nn::Rng rng(9);
  MoeHead head(6, 4, GateConfig{1, 1, true}, rng);
  auto tokens = random_normal({5, 6}, rng);
  auto out = moe_head(tokens, head, false);
  auto direct = head.experts()[0].forward(tokens);
  for (std::size_t i = 0; i < direct.numel(); ++i) EXPECT_EQ(out.logits[i], direct[i]);
}

TEST(MoeHead, IdenticalExpertsGiveOneExpertsLogits) {
  nn::Rng rng(10);
  MoeHead head(6, 3, GateConfig{5, 2, true}, rng);
  for (std::size_t e = 1; e < 5; ++e) head.experts()[e] = head.experts()[0];
  auto tokens = random_normal({8, 6}, rng);
  auto out = moe_head(tokens, head, true, &rng);
  auto direct = head.experts()[0].forward(tokens);
  for (std::size_t i = 0; i < direct.numel(); ++i) EXPECT_NEAR(out.logits[i], direct[i], 1e-12);
}

TEST(MoeHead, MatchesDenseOracle) {
  nn::Rng rng(11);
  MoeHead head(6, 3, GateConfig{4, 2, false}, rng);
  auto tokens = random_normal({7, 6}, rng);
  auto out = moe_head(tokens, head, true);
  std::vector<double> dense(7 * 3, 0.0);
  for (std::size_t e = 0; e < 4; ++e) {
    auto y = head.experts()[e].forward(tokens);
    for (std::size_t t = 0; t < 7; ++t)
      for (std::size_t k = 0; k < 3; ++k) dense[t * 3 + k] += out.gate.sparse_weights[t * 4 + e] * y[t * 3 + k];
  }
  for (std::size_t i = 0; i < dense.size(); ++i) EXPECT_NEAR(out.logits[i], dense[i], 1e-12);
}

TEST(MoeHead, GradCheck) {
  nn::Rng rng(12);
  MoeHead head(4, 3, GateConfig{4, 2, false}, rng);
  auto report = diff::grad_check(
      [&](const std::vector<Tensor>& in) { return aliad::testing::weighted_sum(moe_head(in[0], head, true).logits); },
      {random_normal({5, 4}, rng)}, 1e-5);
  EXPECT_TRUE(report.ok(1e-4)) << report.max_relative_error;
  nn::NamedParams params;
  head.collect("moe", params);
  EXPECT_EQ(params.size(), 2u + 4u * 4u);
  EXPECT_EQ(params.front().first, "moe.gate.w_gate");
}

TEST(CvSquared, Examples) {
  EXPECT_EQ(cv_squared(Tensor::from({4}, {2.5, 2.5, 2.5, 2.5})).item(), 0.0);
  EXPECT_EQ(cv_squared(Tensor::from({2}, {1.0, 3.0})).item(), 0.25);
  EXPECT_NEAR(cv_squared(Tensor::from({2}, {7.0, 21.0})).item(), 0.25, 1e-15);
  EXPECT_EQ(cv_squared(Tensor::from({1}, {4.0})).item(), 0.0);
  EXPECT_EQ(cv_squared(Tensor::zeros({3})).item(), 0.0);
  std::vector<double> one_hot(16, 0.0);
  one_hot[5] = 3.7;
  EXPECT_NEAR(cv_squared(Tensor::from({16}, one_hot)).item(), 15.0, 1e-9);
}

TEST(CvSquared, ScaleInvariance) {
  std::mt19937_64 rng(13);
  auto x = aliad::testing::random_tensor({9}, rng, 0.1, 2.0);
  const double base = cv_squared(x).item();
  for (double c : {0.001, 4.0, 1000.0}) EXPECT_NEAR(cv_squared(diff::mul_scalar(x, c)).item(), base, 1e-12);
}

TEST(LoadBalancing, CollapsedRoutingAndSeparateGroups) {
  // Gate weights pushed so one expert dominates every token.
  nn::Rng rng(14);
  Gate gate(3, GateConfig{16, 1, false}, rng);
  Tensor w = gate.gate_weight();
  auto v = w.mutable_values();
  std::fill(v.begin(), v.end(), 0.0);
  for (std::size_t c = 0; c < 3; ++c) v[c * 16 + 7] = 10.0;
  auto tokens = aliad::testing::random_tensor({6, 3}, rng, 0.5, 1.0);
  auto one = noisy_topk_gate(tokens, gate, false);
  auto fused = noisy_topk_gate(diff::index_select(tokens, 0, std::vector<std::size_t>{0, 1}), gate, false);
  EXPECT_NEAR(cv_squared(one.importance).item(), 15.0, 1e-9);
  EXPECT_NEAR(cv_squared(fused.importance).item(), 15.0, 1e-9);
  const double both = load_balancing_loss(&one, &fused).item();
  EXPECT_NEAR(both, 60.0, 1e-9);
  EXPECT_NEAR(both, load_balancing_loss(&one, nullptr).item() + load_balancing_loss(nullptr, &fused).item(), 1e-12);
}

TEST(LoadBalancing, UniformIsZero) {
  GateOutput g;
  g.selected.resize(4);
  g.importance = Tensor::full({4}, 1.0);
  g.load = Tensor::full({4}, 3.0);
  EXPECT_EQ(load_balancing_loss(&g, &g).item(), 0.0);
  EXPECT_EQ(load_balancing_loss(nullptr, nullptr).item(), 0.0);
}

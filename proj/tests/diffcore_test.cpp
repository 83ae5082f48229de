#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstring>
#include <functional>
#include <string>

#include "aliad/diffcore/grad_check.hpp"
#include "aliad/diffcore/ops.hpp"
#include "aliad/error.hpp"
#include "test_util.hpp"

using namespace aliad;
using namespace aliad::diff;
using aliad::testing::random_tensor;
using aliad::testing::weighted_sum;

namespace {

constexpr double kTol = 1e-4;
constexpr double kStep = 1e-5;

// Runs grad_check of weighted_sum(op(inputs)) for one input configuration.
void expect_grad_ok(const std::string& label, const std::function<Tensor(const std::vector<Tensor>&)>& op,
                    std::vector<Tensor> inputs) {
  auto report = grad_check([&](const std::vector<Tensor>& in) { return weighted_sum(op(in)); }, inputs, kStep);
  EXPECT_TRUE(report.ok(kTol)) << label << ": max relative error " << report.max_relative_error;
}

}  // namespace

TEST(StopGradient, ForwardIsIdentity) {
  std::mt19937_64 rng(1);
  auto t = random_tensor({3, 4}, rng, -1, 1, true);
  auto s = stop_gradient(t);
  EXPECT_EQ(aliad::testing::to_vec(s), aliad::testing::to_vec(t));
  EXPECT_FALSE(s.requires_grad());
}

TEST(StopGradient, BlocksGradient) {
  std::mt19937_64 rng(2);
  auto t = random_tensor({5}, rng, -1, 1, true);
  Tensor loss = sum(stop_gradient(t));
  loss.backward();
  // Nothing reaches t, which is the same as an all-zero gradient.
  for (double g : t.grad()) EXPECT_EQ(g, 0.0);
}

TEST(StopGradient, SeversOneBranchOfProduct) {
  std::mt19937_64 rng(3);
  auto t = random_tensor({6}, rng, -2, 2, true);
  Tensor loss = sum(mul(t, stop_gradient(t)));
  loss.backward();
  // Finite differences of sum(t * c) with c frozen at t's value.
  const auto frozen = aliad::testing::to_vec(t);
  auto c = Tensor::from({6}, frozen);
  auto probe = Tensor::from({6}, frozen, true);
  auto report = grad_check([&](const std::vector<Tensor>& in) { return sum(mul(in[0], c)); }, {probe}, kStep);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_NEAR(t.grad()[i], frozen[i], 1e-12);
    EXPECT_NEAR(t.grad()[i], report.numeric[0][i], 1e-8);
  }
}

TEST(Backward, SumGivesOnes) {
  auto t = Tensor::from({3}, {0.5, -1.0, 2.0}, true);
  sum(t).backward();
  for (double g : t.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, PowerRule) {
  auto t = Tensor::from({3}, {1.0, 2.0, 3.0}, true);
  sum(pow(t, 2.0)).backward();
  EXPECT_DOUBLE_EQ(t.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(t.grad()[1], 4.0);
  EXPECT_DOUBLE_EQ(t.grad()[2], 6.0);
}

TEST(Backward, RejectsNonScalar) {
  auto t = Tensor::from({2}, {1.0, 2.0}, true);
  EXPECT_THROW(mul_scalar(t, 2.0).backward(), ShapeError);
}

TEST(Backward, AccumulatesIntoLeaves) {
  auto t = Tensor::from({2}, {1.0, 2.0}, true);
  sum(t).backward();
  sum(t).backward();
  EXPECT_EQ(t.grad()[0], 2.0);
  t.zero_grad();
  EXPECT_FALSE(t.has_grad());
}

TEST(Backward, SharedSubexpressionCountsTwice) {
  auto t = Tensor::from({1}, {3.0}, true);
  Tensor u = exp(t);
  sum(add(u, u)).backward();
  EXPECT_NEAR(t.grad()[0], 2.0 * std::exp(3.0), 1e-12);
}

TEST(Backward, DeterministicBitwise) {
  auto run = [] {
    std::mt19937_64 rng(11);
    auto x = random_tensor({4, 6}, rng, -1, 1, true);
    auto w = random_tensor({6, 3}, rng, -1, 1, true);
    Tensor y = softmax(matmul(x, w), 1);
    weighted_sum(log(y)).backward();
    auto g = aliad::testing::to_vec(x);
    g.assign(x.grad().begin(), x.grad().end());
    g.insert(g.end(), w.grad().begin(), w.grad().end());
    return g;
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(std::memcmp(&a[i], &b[i], sizeof(double)), 0);
}

TEST(GradCheck, SumIsExact) {
  std::mt19937_64 rng(4);
  auto report = grad_check([](const std::vector<Tensor>& in) { return sum(in[0]); },
                           {random_tensor({3, 5}, rng)}, kStep);
  EXPECT_LT(report.max_relative_error, 1e-9);
  ASSERT_EQ(report.per_input_errors.size(), 1u);
  EXPECT_EQ(report.max_relative_error, report.per_input_errors[0]);
}

TEST(GradCheck, NanIsAFailure) {
  auto x = Tensor::from({2}, {-1.0, 4.0});
  auto report = grad_check([](const std::vector<Tensor>& in) { return sum(sqrt(in[0])); }, {x}, kStep);
  EXPECT_TRUE(report.saw_nan);
  EXPECT_FALSE(report.ok(1.0));
}

TEST(GradCheck, RestoresInputs) {
  auto x = Tensor::from({2}, {0.25, 0.75});
  grad_check([](const std::vector<Tensor>& in) { return sum(exp(in[0])); }, {x}, kStep);
  EXPECT_EQ(x[0], 0.25);
  EXPECT_EQ(x[1], 0.75);
}

class PrimitiveGrad : public ::testing::TestWithParam<int> {};

// Every primitive on three shapes per seed.
TEST_P(PrimitiveGrad, MatchesFiniteDifferences) {
  const int seed = GetParam();
  std::mt19937_64 rng(seed);
  const std::vector<Shape> shapes = {{3}, {2, 4}, {2, 3, 2}};
  for (const auto& s : shapes) {
    const std::string tag = " shape " + shape_str(s);
    expect_grad_ok("add" + tag, [](auto& in) { return add(in[0], in[1]); }, {random_tensor(s, rng), random_tensor(s, rng)});
    expect_grad_ok("sub" + tag, [](auto& in) { return sub(in[0], in[1]); }, {random_tensor(s, rng), random_tensor(s, rng)});
    expect_grad_ok("mul" + tag, [](auto& in) { return mul(in[0], in[1]); }, {random_tensor(s, rng), random_tensor(s, rng)});
    expect_grad_ok("div" + tag, [](auto& in) { return div(in[0], in[1]); },
                   {random_tensor(s, rng), random_tensor(s, rng, 0.5, 2.0)});
    expect_grad_ok("exp" + tag, [](auto& in) { return exp(in[0]); }, {random_tensor(s, rng)});
    expect_grad_ok("log" + tag, [](auto& in) { return log(in[0]); }, {random_tensor(s, rng, 0.2, 3.0)});
    expect_grad_ok("sqrt" + tag, [](auto& in) { return sqrt(in[0]); }, {random_tensor(s, rng, 0.2, 3.0)});
    expect_grad_ok("pow" + tag, [](auto& in) { return pow(in[0], 2.5); }, {random_tensor(s, rng, 0.2, 2.0)});
    expect_grad_ok("relu" + tag, [](auto& in) { return relu(in[0]); }, {random_tensor(s, rng, 0.05, 1.0)});
    expect_grad_ok("relu-neg" + tag, [](auto& in) { return relu(in[0]); }, {random_tensor(s, rng, -1.0, -0.05)});
    expect_grad_ok("softplus" + tag, [](auto& in) { return softplus(in[0]); }, {random_tensor(s, rng, -3, 3)});
    expect_grad_ok("normal_cdf" + tag, [](auto& in) { return normal_cdf(in[0]); }, {random_tensor(s, rng, -2, 2)});
    expect_grad_ok("sum" + tag, [](auto& in) { return sum(in[0]); }, {random_tensor(s, rng)});
    expect_grad_ok("mean" + tag, [](auto& in) { return mean(in[0]); }, {random_tensor(s, rng)});
    for (std::size_t axis = 0; axis < s.size(); ++axis) {
      const std::string at = tag + " axis " + std::to_string(axis);
      expect_grad_ok("softmax" + at, [axis](auto& in) { return softmax(in[0], axis); }, {random_tensor(s, rng, -2, 2)});
      expect_grad_ok("log_softmax" + at, [axis](auto& in) { return log_softmax(in[0], axis); },
                     {random_tensor(s, rng, -2, 2)});
      expect_grad_ok("logsumexp" + at, [axis](auto& in) { return logsumexp(in[0], axis); },
                     {random_tensor(s, rng, -2, 2)});
      expect_grad_ok("sum_axis" + at, [axis](auto& in) { return sum(in[0], axis, true); }, {random_tensor(s, rng)});
      expect_grad_ok("mean_axis" + at, [axis](auto& in) { return mean(in[0], axis); }, {random_tensor(s, rng)});
      expect_grad_ok("l2_norm" + at, [axis](auto& in) { return l2_norm(in[0], axis); }, {random_tensor(s, rng, 0.1, 1)});
      Shape other = s;
      other[axis] = 2;
      expect_grad_ok("concat" + at, [axis](auto& in) { return concat({in[0], in[1]}, axis); },
                     {random_tensor(s, rng), random_tensor(other, rng)});
      const std::vector<std::size_t> pick = {s[axis] - 1, 0, s[axis] - 1};
      expect_grad_ok("index_select" + at, [axis, pick](auto& in) { return index_select(in[0], axis, pick); },
                     {random_tensor(s, rng)});
    }
    // Broadcast against a trailing-axis vector and a scalar.
    const Shape tail = {s.back()};
    expect_grad_ok("mul-bcast" + tag, [](auto& in) { return mul(in[0], in[1]); },
                   {random_tensor(s, rng), random_tensor(tail, rng)});
    expect_grad_ok("div-bcast" + tag, [](auto& in) { return div(in[0], in[1]); },
                   {random_tensor(s, rng), random_tensor({1}, rng, 0.5, 2.0)});
    expect_grad_ok("add-bcast" + tag, [](auto& in) { return add(in[1], in[0]); },
                   {random_tensor(s, rng), random_tensor(tail, rng)});
    expect_grad_ok("reshape" + tag, [](auto& in) { return reshape(in[0], {in[0].numel()}); }, {random_tensor(s, rng)});
    const std::size_t n = numel_of(s);
    const std::vector<std::size_t> flat = {n - 1, 0, n / 2, 0};
    expect_grad_ok("gather" + tag, [flat](auto& in) { return gather(in[0], flat, {4}); }, {random_tensor(s, rng)});
    expect_grad_ok("scatter" + tag, [flat, s](auto& in) { return scatter(in[0], flat, s); }, {random_tensor({4}, rng)});
  }

  // Matrix and sequence primitives on their own shape families.
  const std::vector<std::array<std::size_t, 3>> mm = {{1, 3, 2}, {4, 2, 5}, {3, 6, 3}};
  for (auto [a, b, c] : mm) {
    expect_grad_ok("matmul", [](auto& in) { return matmul(in[0], in[1]); },
                   {random_tensor({a, b}, rng), random_tensor({b, c}, rng)});
    expect_grad_ok("transpose", [](auto& in) { return transpose(in[0]); }, {random_tensor({a, b}, rng)});
    const std::vector<std::size_t> rows = {a - 1, 0};
    expect_grad_ok("scatter_rows", [rows, a](auto& in) { return scatter_rows(in[0], rows, a + 1); },
                   {random_tensor({2, b}, rng)});
    std::vector<int> labels(a);
    for (std::size_t i = 0; i < a; ++i) labels[i] = static_cast<int>((i * 7 + seed) % c);
    expect_grad_ok("cross_entropy", [labels](auto& in) { return cross_entropy(in[0], labels); },
                   {random_tensor({a, c}, rng, -2, 2)});
  }
  struct ConvCase {
    std::size_t B, Cin, T, Cout, K, stride, pad;
  };
  const std::vector<ConvCase> convs = {{1, 1, 5, 1, 3, 1, 1}, {2, 3, 8, 4, 5, 2, 2}, {2, 2, 7, 3, 3, 3, 0}};
  for (const auto& c : convs) {
    expect_grad_ok("conv1d", [c](auto& in) { return conv1d(in[0], in[1], in[2], c.stride, c.pad); },
                   {random_tensor({c.B, c.Cin, c.T}, rng), random_tensor({c.Cout, c.Cin, c.K}, rng),
                    random_tensor({c.Cout}, rng)});
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, PrimitiveGrad, ::testing::Values(1, 2, 3));

TEST(Ops, Conv1dMatchesDirectSum) {
  auto x = Tensor::from({1, 1, 5}, {1, 2, 3, 4, 5});
  auto w = Tensor::from({1, 1, 3}, {1, 0, -1});
  auto y = conv1d(x, w, Tensor(), 1, 1);
  // y[t] = x[t-1] - x[t+1] with zero padding.
  const std::vector<double> expect = {-2, -2, -2, -2, 4};
  ASSERT_EQ(y.numel(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(y[i], expect[i]);
  auto y2 = conv1d(x, w, Tensor(), 2, 1);
  EXPECT_EQ(y2.shape(), (Shape{1, 1, 3}));
  EXPECT_DOUBLE_EQ(y2[0], -2);
  EXPECT_DOUBLE_EQ(y2[2], 4);
}

TEST(Ops, SoftmaxIsStableForLargeLogits) {
  auto t = Tensor::from({3}, {1000.0, 1000.0, -1e30});
  auto s = softmax(t, 0);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  EXPECT_EQ(s[2], 0.0);
}

TEST(Ops, LogFloor) {
  auto t = Tensor::from({1}, {0.0}, true);
  auto l = log(t);
  EXPECT_DOUBLE_EQ(l[0], std::log(kLogFloor));
  sum(l).backward();
  EXPECT_EQ(t.grad()[0], 0.0);
}

TEST(Ops, ReluPropagatesNan) {
  const auto r = relu(Tensor::from({3}, {-1.0, std::nan(""), 2.0}));
  EXPECT_EQ(r[0], 0.0);
  EXPECT_TRUE(std::isnan(r[1]));
  EXPECT_EQ(r[2], 2.0);
}

TEST(Ops, BroadcastShapeErrors) {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({4});
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(matmul(a, a), ShapeError);
  EXPECT_THROW(Tensor::from({2, 2}, {1.0}), ShapeError);
}

TEST(Ops, CrossEntropyUniformLogits) {
  auto logits = Tensor::zeros({2, 4});
  const std::vector<int> y = {0, 3};
  auto ce = cross_entropy(logits, y);
  EXPECT_NEAR(ce[0], std::log(4.0), 1e-15);
  EXPECT_NEAR(ce[1], std::log(4.0), 1e-15);
}

TEST(Ops, LeafMutationOnly) {
  auto t = Tensor::from({1}, {1.0}, true);
  auto u = exp(t);
  EXPECT_THROW(u.mutable_values(), Error);
  t.mutable_values()[0] = 2.0;
  EXPECT_EQ(t[0], 2.0);
}

#pragma once

#include <random>
#include <vector>

#include "aliad/diffcore/ops.hpp"
#include "aliad/diffcore/tensor.hpp"

namespace aliad::testing {

inline diff::Tensor random_tensor(diff::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                                  bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(diff::numel_of(shape));
  for (auto& x : v) x = dist(rng);
  return diff::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline diff::Tensor random_normal(diff::Shape shape, std::mt19937_64& rng, bool requires_grad = false) {
  std::normal_distribution<double> dist;
  std::vector<double> v(diff::numel_of(shape));
  for (auto& x : v) x = dist(rng);
  return diff::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// sum(t * R) with R fixed by `seed`, so upstream gradients are not all ones.
inline diff::Tensor weighted_sum(const diff::Tensor& t, unsigned seed = 99) {
  std::mt19937_64 rng(seed);
  return diff::sum(diff::mul(t, random_tensor(t.shape(), rng, 0.5, 1.5)));
}

inline std::vector<double> to_vec(const diff::Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace aliad::testing

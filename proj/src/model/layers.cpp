#include "aliad/layers.hpp"

#include <cmath>

#include "aliad/diffcore/ops.hpp"
#include "aliad/error.hpp"

namespace aliad::nn {

using diff::Tensor;

namespace {

Tensor uniform(diff::Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(diff::numel_of(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

Linear::Linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = uniform({in, out}, bound, rng);
  bias_ = uniform({out}, bound, rng);
}

Tensor Linear::forward(const Tensor& x) const { return diff::add(diff::matmul(x, weight_), bias_); }

void Linear::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".weight", weight_);
  out.emplace_back(prefix + ".bias", bias_);
}

Mlp::Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
    : first_(in, hidden, rng), second_(hidden, out, rng) {}

Tensor Mlp::forward(const Tensor& x) const { return second_.forward(diff::relu(first_.forward(x))); }

void Mlp::collect(const std::string& prefix, NamedParams& out) const {
  first_.collect(prefix + ".fc1", out);
  second_.collect(prefix + ".fc2", out);
}

Conv1d::Conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride, Rng& rng)
    : stride_(stride), pad_(kernel / 2) {
  // He-uniform weights and zero bias: keeps the signal variance through ReLU
  // stacks so pooled features are not swamped by constant offsets.
  const double bound = std::sqrt(6.0 / static_cast<double>(in_ch * kernel));
  weight_ = uniform({out_ch, in_ch, kernel}, bound, rng);
  bias_ = diff::Tensor::zeros({out_ch}, true);
}

Tensor Conv1d::forward(const Tensor& x) const { return diff::conv1d(x, weight_, bias_, stride_, pad_); }

void Conv1d::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".weight", weight_);
  out.emplace_back(prefix + ".bias", bias_);
}

BatchNorm1d::BatchNorm1d(std::size_t channels, double momentum, double eps)
    : gamma_(Tensor::full({channels}, 1.0, true)),
      beta_(Tensor::zeros({channels}, true)),
      running_mean_(Tensor::zeros({channels})),
      running_var_(Tensor::full({channels}, 1.0)),
      momentum_(momentum),
      eps_(eps) {}

Tensor BatchNorm1d::forward(const Tensor& x, bool train) const {
  const std::size_t C = gamma_.numel();
  if (x.dim() != 3 || x.size(1) != C) throw ShapeError("batch norm expects [B, " + std::to_string(C) + ", T]");
  const Tensor gamma = diff::reshape(gamma_, {1, C, 1}), beta = diff::reshape(beta_, {1, C, 1});
  Tensor centered, inv_std;
  if (train) {
    const Tensor mu = diff::mean(diff::mean(x, 0, true), 2, true);
    centered = diff::sub(x, mu);
    const Tensor var = diff::mean(diff::mean(diff::mul(centered, centered), 0, true), 2, true);
    inv_std = diff::pow(diff::add_scalar(var, eps_), -0.5);
    auto rm = running_mean_.mutable_values();
    auto rv = running_var_.mutable_values();
    for (std::size_t c = 0; c < C; ++c) {
      rm[c] = (1.0 - momentum_) * rm[c] + momentum_ * mu[c];
      rv[c] = (1.0 - momentum_) * rv[c] + momentum_ * var[c];
    }
  } else {
    std::vector<double> mu(C), is(C);
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = running_mean_[c];
      is[c] = 1.0 / std::sqrt(running_var_[c] + eps_);
    }
    centered = diff::sub(x, Tensor::from({1, C, 1}, std::move(mu)));
    inv_std = Tensor::from({1, C, 1}, std::move(is));
  }
  return diff::add(diff::mul(diff::mul(centered, inv_std), gamma), beta);
}

void BatchNorm1d::collect(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".gamma", gamma_);
  out.emplace_back(prefix + ".beta", beta_);
}

void BatchNorm1d::collect_buffers(const std::string& prefix, NamedParams& out) const {
  out.emplace_back(prefix + ".running_mean", running_mean_);
  out.emplace_back(prefix + ".running_var", running_var_);
}

}  // namespace aliad::nn

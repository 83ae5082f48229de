#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "aliad/diffcore/tensor.hpp"

namespace aliad::nn {

using Rng = std::mt19937_64;
using NamedParams = std::vector<std::pair<std::string, diff::Tensor>>;

// y = x W + b with x: [B, in], W: [in, out].
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  diff::Tensor forward(const diff::Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  std::size_t in_features() const { return weight_.size(0); }
  std::size_t out_features() const { return weight_.size(1); }

 private:
  diff::Tensor weight_, bias_;
};

// Two fully connected layers with a ReLU between them.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);

  diff::Tensor forward(const diff::Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  std::size_t out_features() const { return second_.out_features(); }

 private:
  Linear first_, second_;
};

class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride, Rng& rng);

  // Same-style padding of kernel/2; length shrinks by the stride.
  diff::Tensor forward(const diff::Tensor& x) const;
  void collect(const std::string& prefix, NamedParams& out) const;

 private:
  diff::Tensor weight_, bias_;
  std::size_t stride_ = 1, pad_ = 0;
};

// Per-channel normalisation of [B, C, T] over batch and time. Training mode
// uses the statistics of the given batch and folds them into running
// averages, which evaluation mode uses instead.
class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  explicit BatchNorm1d(std::size_t channels, double momentum = 0.1, double eps = 1e-5);

  diff::Tensor forward(const diff::Tensor& x, bool train) const;
  void collect(const std::string& prefix, NamedParams& out) const;
  // Running mean and variance; not trained by gradient.
  void collect_buffers(const std::string& prefix, NamedParams& out) const;

 private:
  diff::Tensor gamma_, beta_;
  // Updated from const forward passes; the handles themselves never change.
  mutable diff::Tensor running_mean_, running_var_;
  double momentum_ = 0.1, eps_ = 1e-5;
};

}  // namespace aliad::nn

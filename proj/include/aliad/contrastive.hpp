#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aliad/diffcore/tensor.hpp"

namespace aliad::contrastive {

// Per-view embeddings of a batch with a presence mask. Absent entries must
// hold finite values (callers write zeros); they never reach a loss term.
struct EmbeddingSet {
  diff::Tensor z;                  // [V, N, C]
  std::vector<std::uint8_t> mask;  // [V, N], 1 = present

  static EmbeddingSet all_present(diff::Tensor z);

  std::size_t views() const { return z.size(0); }
  std::size_t batch() const { return z.size(1); }
  std::size_t channels() const { return z.size(2); }
  bool present(std::size_t v, std::size_t n) const { return mask[v * batch() + n] != 0; }
  // Number of present views for sample n.
  std::size_t present_count(std::size_t n) const;
  void validate() const;
};

struct PairCountLedger {
  std::uint64_t pair_loss_evaluations = 0;
  std::uint64_t critic_evaluations = 0;
};

struct PairLoss {
  diff::Tensor per_sample;  // [N], zero where the sample is masked out
  diff::Tensor mean;        // scalar, mean over present samples
};

// Symmetric two-view InfoNCE with the exponentiated cosine critic. The
// cross-view positive also sits in each denominator; only the anchor itself
// is excluded. Masked samples are dropped from anchors and negatives alike.
PairLoss pair_loss(const diff::Tensor& za, const diff::Tensor& zb, std::span<const std::uint8_t> mask_ab, double tau,
                   PairCountLedger* ledger = nullptr);

// Contrasts every view with the weighted center of the remaining views.
// Weights and weighted embeddings are detached, the center is built once
// and each view's own term is subtracted from it. Samples with a single
// present view contribute nothing. `detach_centers = false` keeps the graph
// through centers and weights and exists for topology tests only.
diff::Tensor adjusted_center_loss(const EmbeddingSet& e, const diff::Tensor& w, double tau,
                                  PairCountLedger* ledger = nullptr, bool detach_centers = true);

// Literal double-loop evaluation: recomputes every center from scratch and
// evaluates each pair term critic by critic. O(V^2 N C + V N^2 C).
double adjusted_center_loss_reference(const EmbeddingSet& e, const diff::Tensor& w, double tau);

// Mean of pair_loss over all unordered view pairs that share a present sample.
diff::Tensor full_graph_loss(const EmbeddingSet& e, double tau, PairCountLedger* ledger = nullptr);

enum class LossKind { AdjustedCenter, FullGraph };
std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

struct BenchResult {
  LossKind kind{};
  std::size_t views = 0, batch = 0, channels = 0, trials = 0;
  double median_ns = 0.0;
  double iqr_ns = 0.0;
  std::uint64_t pair_evals = 0;
};

// Times forward + backward of one loss on seeded, fully present inputs.
BenchResult bench_loss(LossKind kind, std::size_t views, std::size_t batch, std::size_t channels, std::size_t trials,
                       std::size_t warmup, std::uint64_t seed = 7, double tau = 0.1);

}  // namespace aliad::contrastive

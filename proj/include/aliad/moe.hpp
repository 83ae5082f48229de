#pragma once

#include <cstddef>
#include <vector>

#include "aliad/layers.hpp"

namespace aliad::moe {

struct GateConfig {
  std::size_t num_experts = 16;
  std::size_t top_k = 3;
  bool noise_enabled = true;

  void validate() const;
};

// Noisy top-K gate: clean logits x W_gate, plus (training only) standard
// normal noise scaled by softplus(x W_noise) + 1e-2.
class Gate {
 public:
  Gate() = default;
  Gate(std::size_t channels, GateConfig cfg, nn::Rng& rng);

  const GateConfig& config() const { return cfg_; }
  const diff::Tensor& gate_weight() const { return w_gate_; }
  const diff::Tensor& noise_weight() const { return w_noise_; }
  void collect(const std::string& prefix, nn::NamedParams& out) const;

 private:
  GateConfig cfg_;
  diff::Tensor w_gate_, w_noise_;
};

struct GateOutput {
  diff::Tensor sparse_weights;                    // [T, E]
  std::vector<std::vector<std::size_t>> selected;  // per token, best first
  diff::Tensor importance;                        // [E], column sums of sparse_weights
  // [E]. Smooth estimate of P(expert kept) summed over tokens when noise is
  // active in training, otherwise the hard token counts (no gradient).
  diff::Tensor load;
  std::vector<double> token_counts;  // [E], hard dispatch counts
  std::size_t tokens() const { return selected.size(); }
};

// `rng` supplies the gate noise; required only when noise is active.
GateOutput noisy_topk_gate(const diff::Tensor& tokens, const Gate& gate, bool train_mode, nn::Rng* rng = nullptr);

// Expert MLPs C -> C -> classes behind one gate.
class MoeHead {
 public:
  MoeHead() = default;
  MoeHead(std::size_t channels, std::size_t classes, GateConfig cfg, nn::Rng& rng);

  const Gate& gate() const { return gate_; }
  const std::vector<nn::Mlp>& experts() const { return experts_; }
  std::vector<nn::Mlp>& experts() { return experts_; }
  void collect(const std::string& prefix, nn::NamedParams& out) const;

 private:
  Gate gate_;
  std::vector<nn::Mlp> experts_;
};

struct MoeOutput {
  diff::Tensor logits;  // [T, classes]
  GateOutput gate;
};

// Gate-weighted sum of the selected experts' logits. Each expert only runs
// on the tokens routed to it.
MoeOutput moe_head(const diff::Tensor& tokens, const MoeHead& head, bool train_mode, nn::Rng* rng = nullptr);

// (std / mean)^2 with population variance; the denominator is floored at
// 1e-10 and a single entry gives 0.
diff::Tensor cv_squared(const diff::Tensor& x);

// CV^2(importance) + CV^2(load) per token group, summed over the groups
// given (null groups are skipped).
diff::Tensor load_balancing_loss(const GateOutput* one_view, const GateOutput* fused);

}  // namespace aliad::moe

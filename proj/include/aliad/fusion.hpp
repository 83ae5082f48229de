#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "aliad/contrastive.hpp"
#include "aliad/layers.hpp"

namespace aliad::fusion {

// Shared scorer: C -> hidden -> 1 logit, applied to every (view, sample).
class AttentionNet {
 public:
  AttentionNet() = default;
  AttentionNet(std::size_t channels, nn::Rng& rng);

  static std::size_t hidden_width(std::size_t channels);

  // [T, C] -> [T] logits.
  diff::Tensor logits(const diff::Tensor& tokens) const;
  void collect(const std::string& prefix, nn::NamedParams& out) const;

 private:
  nn::Mlp mlp_;
};

// Softmax of the per-view logits across present views of each sample; exactly
// zero on absent views. With `stop_grad` the scorer sees detached embeddings,
// so no gradient reaches the encoders through this path.
diff::Tensor attention_weights(const contrastive::EmbeddingSet& e, const AttentionNet& net, bool stop_grad = true);

// 1/|present| on present views, 0 elsewhere.
diff::Tensor uniform_weights(const contrastive::EmbeddingSet& e);

// sum_v w[v, n] z[v, n] -> [N, C]. Not magnitude-normalised.
diff::Tensor weighted_fusion(const contrastive::EmbeddingSet& e, const diff::Tensor& w);

}  // namespace aliad::fusion

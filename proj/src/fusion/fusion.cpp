#include "aliad/fusion.hpp"

#include <algorithm>

#include "aliad/diffcore/ops.hpp"
#include "aliad/error.hpp"

namespace aliad::fusion {

using diff::Tensor;

namespace {

constexpr double kAbsentLogit = -1e30;

Tensor mask_tensor(const contrastive::EmbeddingSet& e) {
  std::vector<double> m(e.mask.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = e.mask[i] ? 1.0 : 0.0;
  return Tensor::from({e.views(), e.batch()}, std::move(m));
}

void require_present_view(const contrastive::EmbeddingSet& e) {
  for (std::size_t n = 0; n < e.batch(); ++n) {
    if (e.present_count(n) == 0) throw Error("sample " + std::to_string(n) + " has no present view");
  }
}

}  // namespace

AttentionNet::AttentionNet(std::size_t channels, nn::Rng& rng) : mlp_(channels, hidden_width(channels), 1, rng) {}

std::size_t AttentionNet::hidden_width(std::size_t channels) { return std::max<std::size_t>(channels / 2, 16); }

Tensor AttentionNet::logits(const Tensor& tokens) const {
  const std::size_t T = tokens.size(0);
  return diff::reshape(mlp_.forward(tokens), {T});
}

void AttentionNet::collect(const std::string& prefix, nn::NamedParams& out) const { mlp_.collect(prefix, out); }

Tensor attention_weights(const contrastive::EmbeddingSet& e, const AttentionNet& net, bool stop_grad) {
  require_present_view(e);
  const std::size_t V = e.views(), N = e.batch(), C = e.channels();
  const Tensor input = stop_grad ? diff::stop_gradient(e.z) : e.z;
  const Tensor logits = diff::reshape(net.logits(diff::reshape(input, {V * N, C})), {V, N});

  std::vector<double> offset(V * N);
  for (std::size_t i = 0; i < offset.size(); ++i) offset[i] = e.mask[i] ? 0.0 : kAbsentLogit;
  const Tensor masked = diff::add(logits, Tensor::from({V, N}, std::move(offset)));
  return diff::mul(diff::softmax(masked, 0), mask_tensor(e));
}

Tensor uniform_weights(const contrastive::EmbeddingSet& e) {
  require_present_view(e);
  const std::size_t V = e.views(), N = e.batch();
  std::vector<double> w(V * N, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    const double share = 1.0 / static_cast<double>(e.present_count(n));
    for (std::size_t v = 0; v < V; ++v)
      if (e.present(v, n)) w[v * N + n] = share;
  }
  return Tensor::from({V, N}, std::move(w));
}

Tensor weighted_fusion(const contrastive::EmbeddingSet& e, const Tensor& w) {
  const std::size_t V = e.views(), N = e.batch();
  if (w.shape() != diff::Shape{V, N}) throw ShapeError("fusion weights must be [V, N]");
  return diff::sum(diff::mul(e.z, diff::reshape(w, {V, N, 1})), 0);
}

}  // namespace aliad::fusion

#include "aliad/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aliad/diffcore/ops.hpp"
#include "aliad/error.hpp"

namespace aliad::moe {

using diff::Tensor;

namespace {

constexpr double kNoiseFloor = 1e-2;
constexpr double kCvFloor = 1e-10;

}  // namespace

void GateConfig::validate() const {
  if (num_experts == 0) throw ConfigError("num_experts must be >= 1");
  if (top_k == 0 || top_k > num_experts) {
    throw ConfigError("top_k must lie in [1, num_experts]; got K=" + std::to_string(top_k) +
                      " E=" + std::to_string(num_experts));
  }
}

Gate::Gate(std::size_t channels, GateConfig cfg, nn::Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const double bound = 1.0 / std::sqrt(static_cast<double>(channels));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> wg(channels * cfg_.num_experts);
  for (auto& x : wg) x = dist(rng);
  w_gate_ = Tensor::from({channels, cfg_.num_experts}, std::move(wg), true);
  w_noise_ = Tensor::zeros({channels, cfg_.num_experts}, true);
}

void Gate::collect(const std::string& prefix, nn::NamedParams& out) const {
  out.emplace_back(prefix + ".w_gate", w_gate_);
  out.emplace_back(prefix + ".w_noise", w_noise_);
}

GateOutput noisy_topk_gate(const Tensor& tokens, const Gate& gate, bool train_mode, nn::Rng* rng) {
  const auto& cfg = gate.config();
  cfg.validate();
  if (tokens.dim() != 2 || tokens.size(0) == 0) throw ShapeError("gate expects [T, C] tokens with T >= 1");
  const std::size_t T = tokens.size(0), E = cfg.num_experts, K = cfg.top_k;

  const Tensor clean = diff::matmul(tokens, gate.gate_weight());
  const bool noisy = train_mode && cfg.noise_enabled;
  Tensor logits = clean;
  Tensor noise_std;
  if (noisy) {
    if (!rng) throw Error("noisy gating needs a random generator");
    noise_std = diff::add_scalar(diff::softplus(diff::matmul(tokens, gate.noise_weight())), kNoiseFloor);
    std::normal_distribution<double> normal;
    std::vector<double> eps(T * E);
    for (auto& x : eps) x = normal(*rng);
    logits = diff::add(clean, diff::mul(Tensor::from({T, E}, std::move(eps)), noise_std));
  }

  // Rank experts per token; ties go to the lower index.
  const std::size_t keep = std::min(K + 1, E);
  const auto lv = logits.values();
  GateOutput out;
  out.selected.resize(T);
  std::vector<std::size_t> order(E);
  std::vector<std::size_t> kept_flat;
  kept_flat.reserve(T * K);
  std::vector<std::size_t> thr_in, thr_out;
  for (std::size_t t = 0; t < T; ++t) {
    std::iota(order.begin(), order.end(), 0);
    const double* row = lv.data() + t * E;
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    out.selected[t].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(K));
    for (std::size_t j = 0; j < K; ++j) kept_flat.push_back(t * E + order[j]);
    if (K < E) {
      thr_in.push_back(t * E + order[K]);
      thr_out.push_back(t * E + order[K - 1]);
    }
  }

  const Tensor top = diff::softmax(diff::gather(logits, kept_flat, {T, K}), 1);
  out.sparse_weights = diff::scatter(top, kept_flat, {T, E});
  out.importance = diff::sum(out.sparse_weights, 0);

  out.token_counts.assign(E, 0.0);
  for (const auto& sel : out.selected)
    for (auto e : sel) out.token_counts[e] += 1.0;

  if (noisy && K < E) {
    // P(logit of e clears the competing threshold under fresh noise).
    const Tensor th_in = diff::reshape(diff::gather(logits, thr_in, {T}), {T, 1});
    const Tensor th_out = diff::reshape(diff::gather(logits, thr_out, {T}), {T, 1});
    std::vector<double> in_mask(T * E, 0.0);
    for (auto idx : kept_flat) in_mask[idx] = 1.0;
    const Tensor is_in = Tensor::from({T, E}, in_mask);
    for (auto& x : in_mask) x = 1.0 - x;
    const Tensor is_out = Tensor::from({T, E}, std::move(in_mask));
    const Tensor p_in = diff::normal_cdf(diff::div(diff::sub(clean, th_in), noise_std));
    const Tensor p_out = diff::normal_cdf(diff::div(diff::sub(clean, th_out), noise_std));
    out.load = diff::sum(diff::add(diff::mul(is_in, p_in), diff::mul(is_out, p_out)), 0);
  } else {
    out.load = Tensor::from({E}, out.token_counts);
  }
  return out;
}

MoeHead::MoeHead(std::size_t channels, std::size_t classes, GateConfig cfg, nn::Rng& rng) : gate_(channels, cfg, rng) {
  experts_.reserve(cfg.num_experts);
  for (std::size_t e = 0; e < cfg.num_experts; ++e) experts_.emplace_back(channels, channels, classes, rng);
}

void MoeHead::collect(const std::string& prefix, nn::NamedParams& out) const {
  gate_.collect(prefix + ".gate", out);
  for (std::size_t e = 0; e < experts_.size(); ++e) experts_[e].collect(prefix + ".expert" + std::to_string(e), out);
}

MoeOutput moe_head(const Tensor& tokens, const MoeHead& head, bool train_mode, nn::Rng* rng) {
  const std::size_t E = head.gate().config().num_experts;
  if (head.experts().size() != E) throw ConfigError("expert count does not match the gate");
  MoeOutput out;
  out.gate = noisy_topk_gate(tokens, head.gate(), train_mode, rng);
  const std::size_t T = tokens.size(0);

  std::vector<std::vector<std::size_t>> routed(E);
  for (std::size_t t = 0; t < T; ++t)
    for (auto e : out.gate.selected[t]) routed[e].push_back(t);

  Tensor total;
  for (std::size_t e = 0; e < E; ++e) {
    if (routed[e].empty()) continue;
    const auto& rows = routed[e];
    std::vector<std::size_t> flat(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) flat[i] = rows[i] * E + e;
    const Tensor g = diff::reshape(diff::gather(out.gate.sparse_weights, flat, {rows.size()}), {rows.size(), 1});
    const Tensor y = diff::mul(head.experts()[e].forward(diff::index_select(tokens, 0, rows)), g);
    const Tensor placed = diff::scatter_rows(y, rows, T);
    total = total.defined() ? diff::add(total, placed) : placed;
  }
  out.logits = total;
  return out;
}

Tensor cv_squared(const Tensor& x) {
  if (x.dim() != 1 || x.numel() == 0) throw ShapeError("cv_squared expects a non-empty vector");
  const std::size_t E = x.numel();
  if (E == 1) return Tensor::scalar(0.0);
  const Tensor mu = diff::mean(x);
  const Tensor centered = diff::sub(x, mu);
  const Tensor var = diff::mean(diff::mul(centered, centered));
  const Tensor mu2 = diff::mul(mu, mu);
  if (mu2.item() > kCvFloor) return diff::div(var, mu2);
  return diff::mul_scalar(var, 1.0 / kCvFloor);
}

Tensor load_balancing_loss(const GateOutput* one_view, const GateOutput* fused) {
  Tensor total = Tensor::scalar(0.0);
  for (const GateOutput* g : {one_view, fused}) {
    if (!g || g->tokens() == 0) continue;
    total = diff::add(total, diff::add(cv_squared(g->importance), cv_squared(g->load)));
  }
  return total;
}

}  // namespace aliad::moe

#include "aliad/contrastive.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "aliad/diffcore/ops.hpp"
#include "aliad/error.hpp"
#include "aliad/geometry.hpp"

namespace aliad::contrastive {

using diff::Tensor;

namespace {

constexpr double kExcluded = -1e30;
constexpr double kWeightSumTol = 1e-4;

void check_tau(double tau) {
  if (!(tau > 0.0)) throw ConfigError("contrastive temperature must be positive, got " + std::to_string(tau));
}

void check_weights(const EmbeddingSet& e, const Tensor& w) {
  const std::size_t V = e.views(), N = e.batch();
  if (w.shape() != diff::Shape{V, N}) {
    throw ShapeError("weights must be [V, N] = " + diff::shape_str({V, N}) + ", got " + diff::shape_str(w.shape()));
  }
  const auto wv = w.values();
  for (std::size_t n = 0; n < N; ++n) {
    double total = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      const double x = wv[v * N + n];
      if (x < 0.0 || !std::isfinite(x)) throw Error("negative or non-finite view weight at view " + std::to_string(v));
      if (!e.present(v, n)) {
        if (x > kWeightSumTol) throw Error("nonzero weight on absent view " + std::to_string(v) + " of sample " + std::to_string(n));
        continue;
      }
      total += x;
    }
    if (e.present_count(n) > 0 && std::abs(total - 1.0) > kWeightSumTol) {
      throw Error("view weights of sample " + std::to_string(n) + " sum to " + std::to_string(total) + ", expected 1");
    }
  }
}

Tensor view_slice(const Tensor& t3, std::size_t v) {
  const std::size_t idx[1] = {v};
  auto s = t3.shape();
  return diff::reshape(diff::index_select(t3, 0, idx), {s[1], s[2]});
}

Tensor diagonal(const Tensor& sq) {
  const std::size_t P = sq.size(0);
  std::vector<std::size_t> idx(P);
  for (std::size_t i = 0; i < P; ++i) idx[i] = i * P + i;
  return diff::gather(sq, idx, {P});
}

// Both directed terms for anchor i, one critic call per denominator entry.
double pair_term_bruteforce(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b,
                            std::size_t i, double tau) {
  auto directed = [tau](const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y,
                        std::size_t i) {
    const double num = geometry::critic(x[i], y[i], tau);
    double den = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (j != i) den += geometry::critic(x[i], x[j], tau);
      den += geometry::critic(x[i], y[j], tau);
    }
    return -std::log(num / den);
  };
  return directed(a, b, i) + directed(b, a, i);
}

}  // namespace

EmbeddingSet EmbeddingSet::all_present(Tensor z) {
  if (z.dim() != 3) throw ShapeError("embeddings must be [V, N, C], got " + diff::shape_str(z.shape()));
  EmbeddingSet e;
  e.mask.assign(z.size(0) * z.size(1), 1);
  e.z = std::move(z);
  return e;
}

std::size_t EmbeddingSet::present_count(std::size_t n) const {
  std::size_t c = 0;
  for (std::size_t v = 0; v < views(); ++v) c += present(v, n) ? 1 : 0;
  return c;
}

void EmbeddingSet::validate() const {
  if (!z.defined() || z.dim() != 3) throw ShapeError("embeddings must be [V, N, C]");
  if (mask.size() != views() * batch()) throw ShapeError("mask must have V*N entries");
  for (double x : z.values()) {
    if (!std::isfinite(x)) throw Error("non-finite embedding value");
  }
}

PairLoss pair_loss(const Tensor& za, const Tensor& zb, std::span<const std::uint8_t> mask_ab, double tau,
                   PairCountLedger* ledger) {
  check_tau(tau);
  if (za.dim() != 2 || za.shape() != zb.shape()) {
    throw ShapeError("pair_loss expects two [N, C] tensors, got " + diff::shape_str(za.shape()) + " and " +
                     diff::shape_str(zb.shape()));
  }
  const std::size_t N = za.size(0);
  if (mask_ab.size() != N) throw ShapeError("pair_loss mask length mismatch");
  std::vector<std::size_t> present;
  for (std::size_t n = 0; n < N; ++n)
    if (mask_ab[n]) present.push_back(n);
  if (present.empty()) throw Error("pair_loss: every sample is masked (empty batch)");
  const std::size_t P = present.size();

  const Tensor a = diff::index_select(za, 0, present);
  const Tensor b = diff::index_select(zb, 0, present);
  const Tensor ua = geometry::normalize_rows(a);
  const Tensor ub = geometry::normalize_rows(b);
  const double inv_tau = 1.0 / tau;
  const Tensor s_ab = diff::mul_scalar(diff::matmul(ua, diff::transpose(ub)), inv_tau);
  const Tensor s_aa = diff::mul_scalar(diff::matmul(ua, diff::transpose(ua)), inv_tau);
  const Tensor s_bb = diff::mul_scalar(diff::matmul(ub, diff::transpose(ub)), inv_tau);

  std::vector<double> excl(P * P, 0.0);
  for (std::size_t i = 0; i < P; ++i) excl[i * P + i] = kExcluded;
  const Tensor self_mask = Tensor::from({P, P}, std::move(excl));

  const Tensor lse_a = diff::logsumexp(diff::concat({diff::add(s_aa, self_mask), s_ab}, 1), 1);
  const Tensor lse_b = diff::logsumexp(diff::concat({diff::add(s_bb, self_mask), diff::transpose(s_ab)}, 1), 1);
  const Tensor pos = diagonal(s_ab);
  const Tensor per_present = diff::sub(diff::add(lse_a, lse_b), diff::mul_scalar(pos, 2.0));

  if (ledger) {
    ledger->pair_loss_evaluations += 1;
    ledger->critic_evaluations += 3 * P * P;
  }
  return PairLoss{diff::scatter_rows(per_present, present, N),
                  diff::mul_scalar(diff::sum(per_present), 1.0 / static_cast<double>(P))};
}

Tensor adjusted_center_loss(const EmbeddingSet& e, const Tensor& w, double tau, PairCountLedger* ledger,
                            bool detach_centers) {
  check_tau(tau);
  e.validate();
  const std::size_t V = e.views(), N = e.batch();
  if (V < 2) throw Error("adjusted center loss needs at least 2 views (divides by V - 1)");
  check_weights(e, w);

  std::vector<double> mask_vals(V * N);
  for (std::size_t i = 0; i < V * N; ++i) mask_vals[i] = e.mask[i] ? 1.0 : 0.0;
  const Tensor mask3 = Tensor::from({V, N, 1}, mask_vals);

  const Tensor weights = detach_centers ? diff::stop_gradient(w) : w;
  Tensor wz = diff::mul(diff::mul(e.z, mask3), diff::reshape(weights, {V, N, 1}));
  if (detach_centers) wz = diff::stop_gradient(wz);
  const Tensor center = diff::sum(wz, 0);  // [N, C]

  std::vector<std::size_t> count(N);
  std::size_t effective = 0;
  for (std::size_t n = 0; n < N; ++n) {
    count[n] = e.present_count(n);
    if (count[n] >= 2) ++effective;
  }
  if (effective == 0) return Tensor::scalar(0.0);

  Tensor total;
  std::vector<std::uint8_t> mask_ab(N);
  for (std::size_t a = 0; a < V; ++a) {
    bool any = false;
    for (std::size_t n = 0; n < N; ++n) {
      mask_ab[n] = e.present(a, n) && count[n] >= 2;
      any = any || mask_ab[n];
    }
    if (!any) continue;
    const Tensor others = diff::sub(center, view_slice(wz, a));
    const Tensor za = view_slice(e.z, a);
    const PairLoss pl = pair_loss(za, others, mask_ab, tau, ledger);
    const std::size_t row[1] = {a};
    const Tensor one_minus_w = diff::add_scalar(diff::neg(diff::reshape(diff::index_select(weights, 0, row), {N})), 1.0);
    const Tensor term = diff::sum(diff::mul(pl.per_sample, one_minus_w));
    total = total.defined() ? diff::add(total, term) : term;
  }
  return diff::mul_scalar(total, 1.0 / (static_cast<double>(V - 1) * static_cast<double>(effective)));
}

double adjusted_center_loss_reference(const EmbeddingSet& e, const Tensor& w, double tau) {
  check_tau(tau);
  e.validate();
  const std::size_t V = e.views(), N = e.batch(), C = e.channels();
  if (V < 2) throw Error("adjusted center loss needs at least 2 views (divides by V - 1)");
  check_weights(e, w);
  const auto zv = e.z.values();
  const auto wv = w.values();

  std::size_t effective = 0;
  for (std::size_t n = 0; n < N; ++n)
    if (e.present_count(n) >= 2) ++effective;
  if (effective == 0) return 0.0;

  double total = 0.0;
  for (std::size_t a = 0; a < V; ++a) {
    std::vector<std::size_t> rows;
    std::vector<std::vector<double>> anchors, centers;
    for (std::size_t n = 0; n < N; ++n) {
      if (!e.present(a, n) || e.present_count(n) < 2) continue;
      std::vector<double> center(C, 0.0);
      for (std::size_t v = 0; v < V; ++v) {
        if (v == a || !e.present(v, n)) continue;
        for (std::size_t c = 0; c < C; ++c) center[c] += wv[v * N + n] * zv[(v * N + n) * C + c];
      }
      rows.push_back(n);
      anchors.emplace_back(zv.begin() + static_cast<std::ptrdiff_t>((a * N + n) * C),
                           zv.begin() + static_cast<std::ptrdiff_t>((a * N + n + 1) * C));
      centers.push_back(std::move(center));
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      total += (1.0 - wv[a * N + rows[i]]) * pair_term_bruteforce(anchors, centers, i, tau);
    }
  }
  return total / (static_cast<double>(V - 1) * static_cast<double>(effective));
}

Tensor full_graph_loss(const EmbeddingSet& e, double tau, PairCountLedger* ledger) {
  check_tau(tau);
  e.validate();
  const std::size_t V = e.views(), N = e.batch();
  if (V < 2) throw Error("full graph loss needs at least 2 views");
  std::vector<Tensor> slices;
  slices.reserve(V);
  for (std::size_t v = 0; v < V; ++v) slices.push_back(view_slice(e.z, v));

  Tensor total;
  std::size_t pairs = 0;
  std::vector<std::uint8_t> mask_ab(N);
  for (std::size_t a = 0; a < V; ++a) {
    for (std::size_t b = a + 1; b < V; ++b) {
      bool any = false;
      for (std::size_t n = 0; n < N; ++n) {
        mask_ab[n] = e.present(a, n) && e.present(b, n);
        any = any || mask_ab[n];
      }
      if (!any) continue;
      const Tensor m = pair_loss(slices[a], slices[b], mask_ab, tau, ledger).mean;
      total = total.defined() ? diff::add(total, m) : m;
      ++pairs;
    }
  }
  if (pairs == 0) return Tensor::scalar(0.0);
  return diff::mul_scalar(total, 1.0 / static_cast<double>(pairs));
}

std::string to_string(LossKind kind) {
  return kind == LossKind::AdjustedCenter ? "adjusted_center" : "full_graph";
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "adjusted_center") return LossKind::AdjustedCenter;
  if (name == "full_graph") return LossKind::FullGraph;
  throw ConfigError("unknown loss kind '" + name + "' (expected adjusted_center or full_graph)");
}

BenchResult bench_loss(LossKind kind, std::size_t views, std::size_t batch, std::size_t channels, std::size_t trials,
                       std::size_t warmup, std::uint64_t seed, double tau) {
  if (trials < 5) throw ConfigError("bench_loss needs at least 5 trials");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> raw(views * batch * channels);
  for (auto& x : raw) x = normal(rng);
  // Rows onto the sqrt(C) sphere, as the encoders would emit them.
  const double radius = std::sqrt(static_cast<double>(channels));
  for (std::size_t r = 0; r < views * batch; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < channels; ++c) s += raw[r * channels + c] * raw[r * channels + c];
    const double k = radius / std::sqrt(s);
    for (std::size_t c = 0; c < channels; ++c) raw[r * channels + c] *= k;
  }
  const Tensor w = Tensor::full({views, batch}, 1.0 / static_cast<double>(views));

  BenchResult res;
  res.kind = kind;
  res.views = views;
  res.batch = batch;
  res.channels = channels;
  res.trials = trials;

  std::vector<double> samples;
  samples.reserve(trials);
  for (std::size_t t = 0; t < warmup + trials; ++t) {
    EmbeddingSet e = EmbeddingSet::all_present(Tensor::from({views, batch, channels}, raw, true));
    PairCountLedger ledger;
    const auto start = std::chrono::steady_clock::now();
    Tensor loss = kind == LossKind::AdjustedCenter ? adjusted_center_loss(e, w, tau, &ledger)
                                                   : full_graph_loss(e, tau, &ledger);
    loss.backward();
    const auto stop = std::chrono::steady_clock::now();
    res.pair_evals = ledger.pair_loss_evaluations;
    if (t >= warmup) samples.push_back(std::chrono::duration<double, std::nano>(stop - start).count());
  }
  std::sort(samples.begin(), samples.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(samples.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, samples.size() - 1);
    return samples[lo] + (pos - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
  };
  res.median_ns = quantile(0.5);
  res.iqr_ns = quantile(0.75) - quantile(0.25);
  return res;
}

}  // namespace aliad::contrastive

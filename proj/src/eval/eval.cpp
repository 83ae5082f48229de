#include "aliad/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "aliad/diffcore/ops.hpp"
#include "aliad/error.hpp"
#include "aliad/model.hpp"

namespace aliad::eval {

namespace {

constexpr std::size_t kChunk = 64;

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

// Noise-free gate weights summed per expert over the fused tokens of `rows`
// restricted to `subset`.
std::vector<double> usage_of(const model::AliAd& m, const data::Dataset& ds, const std::vector<std::size_t>& rows,
                             const std::vector<std::uint8_t>& subset) {
  std::vector<double> total(m.config().gate.num_experts, 0.0);
  for (std::size_t s = 0; s < rows.size(); s += kChunk) {
    const std::span<const std::size_t> part(rows.data() + s, std::min(kChunk, rows.size() - s));
    const auto batch = model::make_batch(ds, part, &subset);
    const auto g = m.gate(m.embed(batch).fused);
    const auto w = g.importance.values();
    for (std::size_t e = 0; e < total.size(); ++e) total[e] += w[e];
  }
  return total;
}

void to_percent(std::vector<double>& row) {
  const double s = std::accumulate(row.begin(), row.end(), 0.0);
  if (s <= 0) return;
  for (auto& x : row) x *= 100.0 / s;
}

}  // namespace

double macro_f1(std::span<const int> predictions, std::span<const int> labels, std::size_t num_classes) {
  if (predictions.size() != labels.size()) throw Error("prediction and label counts differ");
  if (labels.empty()) throw Error("macro F1 of an empty set");
  if (num_classes == 0) throw ConfigError("need at least one class");
  std::vector<double> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if (y < 0 || y >= static_cast<int>(num_classes) || p < 0 || p >= static_cast<int>(num_classes))
      throw Error("class index out of range");
    if (y == p) {
      tp[y] += 1;
    } else {
      fp[p] += 1;
      fn[y] += 1;
    }
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom = 2 * tp[c] + fp[c] + fn[c];
    sum += denom > 0 ? 2 * tp[c] / denom : 0.0;
  }
  return sum / static_cast<double>(num_classes);
}

std::vector<std::vector<std::size_t>> combinations(std::size_t n, std::size_t k) {
  std::vector<std::vector<std::size_t>> out;
  if (k == 0 || k > n) return out;
  std::vector<std::size_t> c(k);
  std::iota(c.begin(), c.end(), 0);
  while (true) {
    out.push_back(c);
    std::size_t i = k;
    while (i > 0 && c[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++c[i - 1];
    for (std::size_t j = i; j < k; ++j) c[j] = c[j - 1] + 1;
  }
  return out;
}

SweepResult subset_sweep(const model::AliAd& m, const data::Dataset& ds, std::size_t k, std::size_t max_combos,
                         std::uint64_t seed) {
  const std::size_t V = ds.num_views();
  if (k < 1 || k > V) throw ConfigError("k must lie in [1, " + std::to_string(V) + "], got " + std::to_string(k));
  SweepResult res;
  res.k = k;
  auto combos = combinations(V, k);
  if (max_combos > 0 && combos.size() > max_combos) {
    std::mt19937_64 rng(seed);
    std::shuffle(combos.begin(), combos.end(), rng);
    combos.resize(max_combos);
    std::sort(combos.begin(), combos.end());
  }
  const auto labeled = ds.labeled_indices();
  for (const auto& combo : combos) {
    std::vector<std::uint8_t> subset(V, 0);
    for (auto v : combo) subset[v] = 1;
    std::vector<std::size_t> rows;
    for (auto i : labeled) {
      bool any = false;
      for (auto v : combo) any = any || ds.present(i, v);
      if (any) rows.push_back(i);
    }
    if (rows.empty()) continue;
    std::vector<int> preds, labels;
    for (std::size_t s = 0; s < rows.size(); s += kChunk) {
      const std::span<const std::size_t> part(rows.data() + s, std::min(kChunk, rows.size() - s));
      const auto batch = model::make_batch(ds, part, &subset);
      const auto p = m.predict(batch);
      preds.insert(preds.end(), p.begin(), p.end());
      labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
    }
    res.combos.push_back(combo);
    res.scores.push_back(macro_f1(preds, labels, ds.num_classes));
  }
  if (!res.scores.empty()) {
    const double n = static_cast<double>(res.scores.size());
    res.mean = std::accumulate(res.scores.begin(), res.scores.end(), 0.0) / n;
    double var = 0.0;
    for (double s : res.scores) var += (s - res.mean) * (s - res.mean);
    res.stddev = std::sqrt(var / n);
  }
  return res;
}

ExpertUsage analyze_experts(const model::AliAd& m, const data::Dataset& ds) {
  if (m.config().ablations.no_moe) throw ConfigError("model was trained without experts; there is no gate to analyze");
  const std::size_t V = ds.num_views();
  ExpertUsage usage;
  for (std::size_t v = 0; v < V; ++v) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.present(i, v)) rows.push_back(i);
    if (rows.empty()) continue;
    std::vector<std::uint8_t> subset(V, 0);
    subset[v] = 1;
    auto row = usage_of(m, ds, rows, subset);
    to_percent(row);
    usage.rows.push_back("view:" + ds.views[v].name);
    usage.percent.push_back(std::move(row));
  }
  usage.single_view_rows = usage.rows.size();
  std::vector<std::size_t> multi;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.present_count(i) >= 2) multi.push_back(i);
  if (!multi.empty()) {
    auto row = usage_of(m, ds, multi, std::vector<std::uint8_t>(V, 1));
    to_percent(row);
    usage.rows.push_back("fusion:all");
    usage.percent.push_back(std::move(row));
  }
  return usage;
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw ShapeError("JS divergence needs equal-length nonempty inputs");
  const double sp = std::accumulate(p.begin(), p.end(), 0.0), sq = std::accumulate(q.begin(), q.end(), 0.0);
  if (!(sp > 0) || !(sq > 0)) throw Error("JS divergence of an all-zero distribution");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = p[i] / sp, b = q[i] / sq, mid = 0.5 * (a + b);
    if (a > 0) js += 0.5 * a * std::log(a / mid);
    if (b > 0) js += 0.5 * b * std::log(b / mid);
  }
  return js;
}

double mean_single_to_fused_js(const ExpertUsage& usage) {
  if (usage.single_view_rows == 0 || usage.rows.size() <= usage.single_view_rows)
    throw Error("usage table needs single-view rows and a fusion row");
  const auto& fused = usage.percent.back();
  double s = 0.0;
  for (std::size_t r = 0; r < usage.single_view_rows; ++r) s += js_divergence(usage.percent[r], fused);
  return s / static_cast<double>(usage.single_view_rows);
}

void write_usage_csv(const ExpertUsage& usage, const std::filesystem::path& file) {
  std::ofstream os(file);
  if (!os) throw Error("cannot write " + file.string());
  os.precision(10);
  const std::size_t E = usage.percent.empty() ? 0 : usage.percent.front().size();
  os << "row";
  for (std::size_t e = 0; e < E; ++e) os << ",expert_" << e;
  os << '\n';
  for (std::size_t r = 0; r < usage.rows.size(); ++r) {
    os << usage.rows[r];
    for (double x : usage.percent[r]) os << ',' << x;
    os << '\n';
  }
}

WeightCurves analyze_weights(const std::filesystem::path& log_csv) {
  std::ifstream in(log_csv);
  if (!in) throw DataError("cannot open training log " + log_csv.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("training log is empty");
  const auto header = split(line);
  std::optional<std::size_t> epoch_col, ac_col;
  std::vector<std::size_t> w_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "epoch") epoch_col = c;
    else if (header[c] == "l_ac") ac_col = c;
    else if (header[c].rfind("w_mean_view_", 0) == 0) w_cols.push_back(c);
  }
  if (!epoch_col) throw DataError("training log lacks an epoch column");
  if (w_cols.empty()) throw DataError("training log lacks w_mean_view_* columns");
  WeightCurves out;
  if (ac_col) out.l_ac.emplace();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) throw DataError("training log row has the wrong column count");
    out.epochs.push_back(std::stoul(cells[*epoch_col]));
    std::vector<double> w;
    for (auto c : w_cols) w.push_back(std::stod(cells[c]));
    out.w_mean.push_back(std::move(w));
    if (ac_col) out.l_ac->push_back(std::stod(cells[*ac_col]));
  }
  return out;
}

void write_weights_csv(const WeightCurves& curves, const std::filesystem::path& file) {
  std::ofstream os(file);
  if (!os) throw Error("cannot write " + file.string());
  os.precision(17);
  const std::size_t V = curves.w_mean.empty() ? 0 : curves.w_mean.front().size();
  os << "epoch";
  for (std::size_t v = 0; v < V; ++v) os << ",w_mean_view_" << v;
  if (curves.l_ac) os << ",l_ac";
  os << '\n';
  for (std::size_t e = 0; e < curves.epochs.size(); ++e) {
    os << curves.epochs[e];
    for (double w : curves.w_mean[e]) os << ',' << w;
    if (curves.l_ac) os << ',' << (*curves.l_ac)[e];
    os << '\n';
  }
}

}  // namespace aliad::eval

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aliad/data.hpp"

namespace aliad::model {
class AliAd;
}

namespace aliad::eval {

// Unweighted mean of per-class F1 over all `num_classes` classes. A class
// with no true positives (including one absent from both lists) scores 0.
double macro_f1(std::span<const int> predictions, std::span<const int> labels, std::size_t num_classes);

// All size-k subsets of {0..n-1} in lexicographic order.
std::vector<std::vector<std::size_t>> combinations(std::size_t n, std::size_t k);

struct SweepResult {
  std::size_t k = 0;
  std::vector<std::vector<std::size_t>> combos;
  std::vector<double> scores;  // macro-F1 per combination
  double mean = 0.0;
  double stddev = 0.0;  // population
};

// Macro-F1 of predict() on the labeled rows for every size-k view subset.
// Rows missing every view of a subset are left out of that subset's score.
// `max_combos` > 0 keeps a seeded random sample of that many subsets.
SweepResult subset_sweep(const model::AliAd& model, const data::Dataset& ds, std::size_t k, std::size_t max_combos = 0,
                         std::uint64_t seed = 0);

// Gate-weight share per expert (rows sum to 100): one row per single view,
// then one row for the fusion of all present views on rows with at least
// two views.
struct ExpertUsage {
  std::vector<std::string> rows;
  std::vector<std::vector<double>> percent;
  std::size_t single_view_rows = 0;
};

ExpertUsage analyze_experts(const model::AliAd& model, const data::Dataset& ds);

// Jensen-Shannon divergence (natural log) of two distributions given as
// nonnegative weights; each is normalised first.
double js_divergence(std::span<const double> p, std::span<const double> q);

// Mean JS divergence between each single-view row and the fusion row.
double mean_single_to_fused_js(const ExpertUsage& usage);

void write_usage_csv(const ExpertUsage& usage, const std::filesystem::path& file);

struct WeightCurves {
  std::vector<std::size_t> epochs;
  std::vector<std::vector<double>> w_mean;  // [epoch][view]
  std::optional<std::vector<double>> l_ac;
};

// Reads a training log CSV; throws DataError when the epoch or weight columns
// are missing.
WeightCurves analyze_weights(const std::filesystem::path& log_csv);
void write_weights_csv(const WeightCurves& curves, const std::filesystem::path& file);

}  // namespace aliad::eval

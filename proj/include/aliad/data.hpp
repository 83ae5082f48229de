#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace aliad::data {

enum class Modality { Inertial, Pose2d, Pose3d };

std::string to_string(Modality m);
Modality parse_modality(const std::string& s);

struct ViewInfo {
  std::string name;
  Modality modality = Modality::Inertial;
  std::size_t channels = 3;
};

// Samples are stored per view as float32 [sample, channel, time]. The mask is
// sample-major: mask[i * V + v] is nonzero when view v of sample i exists.
// Absent views hold zeros.
struct Dataset {
  std::vector<ViewInfo> views;
  std::size_t window = 0;
  std::size_t num_classes = 0;
  std::vector<std::vector<float>> x;
  std::vector<int> labels;  // -1 for unlabeled
  std::vector<std::uint8_t> mask;

  std::size_t size() const { return labels.size(); }
  std::size_t num_views() const { return views.size(); }
  bool present(std::size_t i, std::size_t v) const { return mask[i * views.size() + v] != 0; }
  std::size_t present_count(std::size_t i) const;
  std::size_t sample_stride(std::size_t v) const { return views[v].channels * window; }
  std::span<const float> sample(std::size_t v, std::size_t i) const;
  std::span<float> sample(std::size_t v, std::size_t i);

  // Rows `indices` in the given order.
  Dataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> labeled_indices() const;
  std::vector<std::size_t> unlabeled_indices() const;
  // Throws DataError when shapes disagree, a label is out of range or a
  // mask row is empty.
  void validate() const;
};

struct SyntheticSpec {
  std::vector<ViewInfo> views;
  std::vector<double> snr;  // per view; +inf gives noiseless views
  std::size_t num_classes = 4;
  std::size_t window = 32;
  std::size_t samples_per_class = 50;
  double frac_unlabeled = 0.0;
  std::uint64_t seed = 0;         // classes, projections and noise levels
  std::uint64_t sample_seed = 0;  // per-sample jitter and noise; vary it for held-out splits
  std::size_t latent_dim = 6;

  void validate() const;
};

// JSON object {"views": [{"name", "modality", "channels", "snr"}], "num_classes",
// "window", "samples_per_class", "frac_unlabeled", "seed", "sample_seed", "latent_dim"}.
// An SNR of "inf" or null means noiseless.
SyntheticSpec parse_synthetic_spec(const std::string& json_text);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& file);

// Each class is a smooth latent trajectory (three sinusoids per latent
// dimension); view v sees it through a fixed random projection plus Gaussian
// noise at that view's SNR. Samples jitter in amplitude and phase.
Dataset gen_synthetic(const SyntheticSpec& spec);

// [channels, length] series cut into windows of `window` steps every
// `stride` steps; each window is [channels, window].
std::vector<std::vector<float>> sliding_window(std::span<const float> series, std::size_t channels,
                                               std::size_t window, std::size_t stride);

// Per-view drop probability that leaves a 1e-3 chance of losing all views.
double uniform_drop_probability(std::size_t views);

// Independent per-(sample, view) drops. Samples left without any view are
// removed; the rest keep their order and labels.
Dataset drop_views_uniform(const Dataset& ds, std::uint64_t seed);
Dataset drop_views_rates(const Dataset& ds, std::span<const double> rates, std::uint64_t seed);

// Rates keyed by view name (JSON object) or listed in view order (JSON
// array).
std::vector<double> load_rates(const std::filesystem::path& file, const Dataset& ds);

struct AugmentParams {
  double scale = 1.0;
  std::vector<double> warp;                  // source time per output step; empty means none
  std::vector<double> rotation;              // row-major 3x3; empty means none
};

AugmentParams sample_augment(Modality m, std::size_t window, std::mt19937_64& rng);
// Channels are rotated in consecutive groups of three.
void apply_augment(std::span<float> window_data, std::size_t channels, std::size_t window, const AugmentParams& p);
void augment(std::span<float> window_data, const ViewInfo& view, std::size_t window, std::mt19937_64& rng);

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace aliad::data

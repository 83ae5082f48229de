#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "aliad/data.hpp"
#include "aliad/error.hpp"
#include "json.hpp"

namespace aliad::data {

namespace {

constexpr std::size_t kSinusoids = 3;

struct Wave {
  double amp, freq, phase;
};

// Independent stream per (seed, stream, index).
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index, std::uint64_t extra = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),  static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag),   static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32), static_cast<std::uint32_t>(extra),
                    static_cast<std::uint32_t>(extra >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

void SyntheticSpec::validate() const {
  if (views.empty()) throw ConfigError("synthetic spec needs at least one view");
  if (snr.size() != views.size()) throw ConfigError("need one SNR per view");
  for (double s : snr)
    if (!(s > 0.0)) throw ConfigError("SNR must be positive");
  for (const auto& v : views)
    if (v.channels == 0) throw ConfigError("view " + v.name + " has zero channels");
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  if (window < 4) throw ConfigError("window must be at least 4 steps");
  if (samples_per_class == 0) throw ConfigError("samples_per_class must be positive");
  if (!(frac_unlabeled >= 0.0 && frac_unlabeled < 1.0)) throw ConfigError("frac_unlabeled must lie in [0, 1)");
  if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
}

SyntheticSpec parse_synthetic_spec(const std::string& text) {
  SyntheticSpec spec;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& v : j.at("views")) {
      spec.views.push_back({v.at("name").get<std::string>(), parse_modality(v.value("modality", "inertial")),
                            v.value("channels", std::size_t{3})});
      const auto& s = v.contains("snr") ? v.at("snr") : nlohmann::json(nullptr);
      if (s.is_null() || (s.is_string() && s.get<std::string>() == "inf"))
        spec.snr.push_back(std::numeric_limits<double>::infinity());
      else
        spec.snr.push_back(s.get<double>());
    }
    spec.num_classes = j.value("num_classes", spec.num_classes);
    spec.window = j.value("window", spec.window);
    spec.samples_per_class = j.value("samples_per_class", spec.samples_per_class);
    spec.frac_unlabeled = j.value("frac_unlabeled", spec.frac_unlabeled);
    spec.seed = j.value("seed", spec.seed);
    spec.sample_seed = j.value("sample_seed", spec.sample_seed);
    spec.latent_dim = j.value("latent_dim", spec.latent_dim);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open spec file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_synthetic_spec(ss.str());
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t V = spec.views.size(), M = spec.num_classes, T = spec.window, L = spec.latent_dim;
  const std::size_t S = M * spec.samples_per_class;

  // Class prototypes in latent space: waves[m][l][k].
  auto proto_rng = stream(spec.seed, 1, 0);
  std::uniform_real_distribution<double> amp(0.5, 1.0), freq(0.5, 3.0), phase(0.0, 2.0 * std::numbers::pi);
  std::vector<std::vector<std::vector<Wave>>> waves(M, std::vector<std::vector<Wave>>(L));
  for (auto& cls : waves)
    for (auto& dim : cls)
      for (std::size_t k = 0; k < kSinusoids; ++k) dim.push_back({amp(proto_rng), freq(proto_rng), phase(proto_rng)});
  auto latent = [&](std::size_t m, std::size_t l, double t) {
    double s = 0.0;
    for (const auto& w : waves[m][l]) s += w.amp * std::sin(2.0 * std::numbers::pi * w.freq * t / static_cast<double>(T) + w.phase);
    return s;
  };

  // Fixed projection per view, scaled so each channel has unit-order power.
  std::vector<std::vector<double>> proj(V);
  for (std::size_t v = 0; v < V; ++v) {
    auto r = stream(spec.seed, 2, v);
    std::normal_distribution<double> nd;
    proj[v].resize(spec.views[v].channels * L);
    for (auto& p : proj[v]) p = nd(r) / std::sqrt(static_cast<double>(L));
  }

  // Noise level from the mean clean power of each view over the prototypes.
  std::vector<double> sigma(V, 0.0);
  for (std::size_t v = 0; v < V; ++v) {
    if (std::isinf(spec.snr[v])) continue;
    const std::size_t C = spec.views[v].channels;
    double power = 0.0;
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < C; ++c) {
          double y = 0.0;
          for (std::size_t l = 0; l < L; ++l) y += proj[v][c * L + l] * latent(m, l, static_cast<double>(t));
          power += y * y;
        }
    power /= static_cast<double>(M * T * C);
    sigma[v] = std::sqrt(power / spec.snr[v]);
  }

  Dataset ds;
  ds.views = spec.views;
  ds.window = T;
  ds.num_classes = M;
  ds.labels.resize(S);
  ds.mask.assign(S * V, 1);
  ds.x.resize(V);
  for (std::size_t v = 0; v < V; ++v) ds.x[v].resize(S * spec.views[v].channels * T);

  std::uniform_real_distribution<double> jitter(0.8, 1.2), shift(-1.5, 1.5);
  std::vector<double> z(L * T);
  for (std::size_t i = 0; i < S; ++i) {
    const std::size_t m = i % M;
    ds.labels[i] = static_cast<int>(m);
    auto r = stream(spec.seed, 3, i, spec.sample_seed);
    std::normal_distribution<double> nd;
    const double scale = jitter(r), dt = shift(r);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t t = 0; t < T; ++t) z[l * T + t] = scale * latent(m, l, static_cast<double>(t) + dt);
    for (std::size_t v = 0; v < V; ++v) {
      const std::size_t C = spec.views[v].channels;
      auto out = ds.sample(v, i);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t t = 0; t < T; ++t) {
          double y = 0.0;
          for (std::size_t l = 0; l < L; ++l) y += proj[v][c * L + l] * z[l * T + t];
          if (sigma[v] > 0.0) y += sigma[v] * nd(r);
          out[c * T + t] = static_cast<float>(y);
        }
    }
  }

  const auto unlabeled = static_cast<std::size_t>(std::floor(spec.frac_unlabeled * static_cast<double>(S)));
  if (unlabeled > 0) {
    std::vector<std::size_t> order(S);
    std::iota(order.begin(), order.end(), 0);
    auto r = stream(spec.seed, 4, 0, spec.sample_seed);
    std::shuffle(order.begin(), order.end(), r);
    for (std::size_t k = 0; k < unlabeled; ++k) ds.labels[order[k]] = -1;
  }
  return ds;
}

}  // namespace aliad::data

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "aliad/data.hpp"
#include "aliad/error.hpp"
#include "json.hpp"

namespace aliad::data {

namespace {

constexpr char kViewMagic[8] = {'A', 'L', 'I', 'A', 'D', 'V', 'W', '1'};

static_assert(std::endian::native == std::endian::little, "on-disk tensors are written in host order");

void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

Dataset drop_with(const Dataset& ds, std::span<const double> rates, std::uint64_t seed) {
  const std::size_t V = ds.num_views();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset out = ds;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t v = 0; v < V; ++v) {
      // Draw for every entry so the stream does not depend on the mask.
      const bool drop = u(rng) < rates[v];
      if (drop && out.present(i, v)) {
        out.mask[i * V + v] = 0;
        auto s = out.sample(v, i);
        std::fill(s.begin(), s.end(), 0.0f);
      }
    }
    if (out.present_count(i) > 0) keep.push_back(i);
  }
  return out.subset(keep);
}

}  // namespace

std::string to_string(Modality m) {
  switch (m) {
    case Modality::Inertial: return "inertial";
    case Modality::Pose2d: return "pose2d";
    case Modality::Pose3d: return "pose3d";
  }
  return "inertial";
}

Modality parse_modality(const std::string& s) {
  if (s == "inertial") return Modality::Inertial;
  if (s == "pose2d") return Modality::Pose2d;
  if (s == "pose3d") return Modality::Pose3d;
  throw ConfigError("unknown modality '" + s + "' (expected inertial, pose2d or pose3d)");
}

std::size_t Dataset::present_count(std::size_t i) const {
  std::size_t c = 0;
  for (std::size_t v = 0; v < views.size(); ++v) c += present(i, v) ? 1 : 0;
  return c;
}

std::span<const float> Dataset::sample(std::size_t v, std::size_t i) const {
  const std::size_t s = sample_stride(v);
  return {x[v].data() + i * s, s};
}

std::span<float> Dataset::sample(std::size_t v, std::size_t i) {
  const std::size_t s = sample_stride(v);
  return {x[v].data() + i * s, s};
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.views = views;
  out.window = window;
  out.num_classes = num_classes;
  const std::size_t V = views.size();
  out.x.resize(V);
  for (std::size_t v = 0; v < V; ++v) {
    out.x[v].reserve(indices.size() * sample_stride(v));
    for (auto i : indices) {
      auto s = sample(v, i);
      out.x[v].insert(out.x[v].end(), s.begin(), s.end());
    }
  }
  for (auto i : indices) {
    out.labels.push_back(labels[i]);
    for (std::size_t v = 0; v < V; ++v) out.mask.push_back(mask[i * V + v]);
  }
  return out;
}

std::vector<std::size_t> Dataset::labeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] >= 0) out.push_back(i);
  return out;
}

std::vector<std::size_t> Dataset::unlabeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0) out.push_back(i);
  return out;
}

void Dataset::validate() const {
  const std::size_t V = views.size(), S = labels.size();
  if (V == 0) throw DataError("dataset has no views");
  if (num_classes < 2) throw DataError("dataset needs at least 2 classes");
  if (x.size() != V) throw DataError("view tensor count does not match view list");
  if (mask.size() != S * V) throw DataError("mask size does not match samples x views");
  for (std::size_t v = 0; v < V; ++v)
    if (x[v].size() != S * sample_stride(v)) throw DataError("view " + views[v].name + " has the wrong element count");
  for (std::size_t i = 0; i < S; ++i) {
    if (labels[i] >= static_cast<int>(num_classes)) throw DataError("sample " + std::to_string(i) + " label out of range");
    if (present_count(i) == 0) throw DataError("sample " + std::to_string(i) + " has no present view");
  }
}

std::vector<std::vector<float>> sliding_window(std::span<const float> series, std::size_t channels,
                                               std::size_t window, std::size_t stride) {
  if (channels == 0 || series.size() % channels != 0) throw ShapeError("series size is not a multiple of channels");
  if (window == 0 || stride == 0) throw ConfigError("window and stride must be positive");
  const std::size_t length = series.size() / channels;
  if (window > length) {
    throw ConfigError("window " + std::to_string(window) + " exceeds series length " + std::to_string(length));
  }
  const std::size_t count = (length - window) / stride + 1;
  std::vector<std::vector<float>> out(count, std::vector<float>(channels * window));
  for (std::size_t w = 0; w < count; ++w)
    for (std::size_t c = 0; c < channels; ++c)
      std::copy_n(series.begin() + static_cast<std::ptrdiff_t>(c * length + w * stride), window,
                  out[w].begin() + static_cast<std::ptrdiff_t>(c * window));
  return out;
}

double uniform_drop_probability(std::size_t views) {
  if (views == 0) throw ConfigError("need at least one view");
  return std::pow(10.0, -3.0 / static_cast<double>(views));
}

Dataset drop_views_uniform(const Dataset& ds, std::uint64_t seed) {
  const std::vector<double> rates(ds.num_views(), uniform_drop_probability(ds.num_views()));
  return drop_with(ds, rates, seed);
}

Dataset drop_views_rates(const Dataset& ds, std::span<const double> rates, std::uint64_t seed) {
  if (rates.size() != ds.num_views()) throw ConfigError("need one drop rate per view");
  for (double r : rates)
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("drop rates must lie in [0, 1); got " + std::to_string(r));
  return drop_with(ds, rates, seed);
}

std::vector<double> load_rates(const std::filesystem::path& file, const Dataset& ds) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open rates file " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("rates file " + file.string() + ": " + e.what());
  }
  std::vector<double> rates(ds.num_views(), 0.0);
  if (j.is_array()) {
    if (j.size() != ds.num_views()) throw ConfigError("rates array length does not match view count");
    for (std::size_t v = 0; v < rates.size(); ++v) rates[v] = j[v].get<double>();
  } else if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      auto pos = std::find_if(ds.views.begin(), ds.views.end(), [&](const ViewInfo& vi) { return vi.name == it.key(); });
      if (pos == ds.views.end()) throw ConfigError("rates file names unknown view '" + it.key() + "'");
      rates[static_cast<std::size_t>(pos - ds.views.begin())] = it.value().get<double>();
    }
  } else {
    throw ConfigError("rates file must hold an object or an array");
  }
  return rates;
}

AugmentParams sample_augment(Modality m, std::size_t window, std::mt19937_64& rng) {
  AugmentParams p;
  std::uniform_real_distribution<double> scale(0.8, 1.2), step(0.7, 1.3), angle(0.0, 2.0 * std::numbers::pi);
  p.scale = scale(rng);

  // Monotone piecewise-linear warp through 4 segments with endpoints fixed.
  constexpr std::size_t kSegments = 4;
  if (window >= 2) {
    std::array<double, kSegments + 1> knots{};
    for (std::size_t k = 1; k <= kSegments; ++k) knots[k] = knots[k - 1] + step(rng);
    const double last = static_cast<double>(window - 1);
    for (auto& k : knots) k *= last / knots[kSegments];
    p.warp.resize(window);
    for (std::size_t t = 0; t < window; ++t) {
      const double pos = static_cast<double>(t) / last * kSegments;
      const std::size_t seg = std::min<std::size_t>(static_cast<std::size_t>(pos), kSegments - 1);
      const double frac = pos - static_cast<double>(seg);
      p.warp[t] = knots[seg] + frac * (knots[seg + 1] - knots[seg]);
    }
  }

  if (m == Modality::Inertial) {
    // Uniform random rotation from a unit quaternion.
    std::normal_distribution<double> nd;
    double q[4];
    double n = 0.0;
    for (auto& x : q) {
      x = nd(rng);
      n += x * x;
    }
    n = std::sqrt(n);
    for (auto& x : q) x /= n;
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    p.rotation = {1 - 2 * (y * y + z * z), 2 * (x * y - z * w),     2 * (x * z + y * w),
                  2 * (x * y + z * w),     1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
                  2 * (x * z - y * w),     2 * (y * z + x * w),     1 - 2 * (x * x + y * y)};
  } else if (m == Modality::Pose3d) {
    const double a = angle(rng);
    p.rotation = {std::cos(a), -std::sin(a), 0.0, std::sin(a), std::cos(a), 0.0, 0.0, 0.0, 1.0};
  }
  return p;
}

void apply_augment(std::span<float> data, std::size_t channels, std::size_t window, const AugmentParams& p) {
  if (data.size() != channels * window) throw ShapeError("augment input is not [channels, window]");
  std::vector<double> buf(data.begin(), data.end());
  if (!p.warp.empty()) {
    if (p.warp.size() != window) throw ShapeError("warp map length does not match the window");
    std::vector<double> warped(buf.size());
    for (std::size_t c = 0; c < channels; ++c) {
      const double* row = buf.data() + c * window;
      for (std::size_t t = 0; t < window; ++t) {
        const double s = std::clamp(p.warp[t], 0.0, static_cast<double>(window - 1));
        const std::size_t lo = std::min(static_cast<std::size_t>(s), window - 1);
        const std::size_t hi = std::min(lo + 1, window - 1);
        const double f = s - static_cast<double>(lo);
        warped[c * window + t] = (1.0 - f) * row[lo] + f * row[hi];
      }
    }
    buf.swap(warped);
  }
  if (!p.rotation.empty()) {
    if (p.rotation.size() != 9) throw ShapeError("rotation must be 3x3");
    for (std::size_t g = 0; g + 3 <= channels; g += 3) {
      for (std::size_t t = 0; t < window; ++t) {
        const double v[3] = {buf[g * window + t], buf[(g + 1) * window + t], buf[(g + 2) * window + t]};
        for (std::size_t r = 0; r < 3; ++r)
          buf[(g + r) * window + t] = p.rotation[r * 3] * v[0] + p.rotation[r * 3 + 1] * v[1] + p.rotation[r * 3 + 2] * v[2];
      }
    }
  }
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(buf[i] * p.scale);
}

void augment(std::span<float> data, const ViewInfo& view, std::size_t window, std::mt19937_64& rng) {
  apply_augment(data, view.channels, window, sample_augment(view.modality, window, rng));
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::filesystem::create_directories(dir);
  const std::size_t V = ds.num_views(), S = ds.size();

  nlohmann::json views = nlohmann::json::array();
  for (const auto& v : ds.views)
    views.push_back({{"name", v.name}, {"modality", to_string(v.modality)}, {"channels", v.channels}});
  const bool any_label = std::any_of(ds.labels.begin(), ds.labels.end(), [](int y) { return y >= 0; });
  nlohmann::json manifest = {{"format", "aliad-dataset"}, {"version", 1},           {"num_views", V},
                             {"views", views},            {"window", ds.window},   {"num_classes", ds.num_classes},
                             {"num_samples", S},          {"has_labels", any_label}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';

  std::ofstream labels(dir / "labels.csv");
  labels << "sample_id,label\n";
  for (std::size_t i = 0; i < S; ++i) {
    labels << i << ',';
    if (ds.labels[i] >= 0) labels << ds.labels[i];
    labels << '\n';
  }

  std::ofstream mask(dir / "mask.csv");
  mask << "sample_id";
  for (const auto& v : ds.views) mask << ',' << v.name;
  mask << '\n';
  for (std::size_t i = 0; i < S; ++i) {
    mask << i;
    for (std::size_t v = 0; v < V; ++v) mask << ',' << (ds.present(i, v) ? 1 : 0);
    mask << '\n';
  }

  for (std::size_t v = 0; v < V; ++v) {
    std::ofstream os(dir / ("view_" + std::to_string(v) + ".bin"), std::ios::binary);
    os.write(kViewMagic, sizeof kViewMagic);
    write_u64(os, S);
    write_u64(os, ds.views[v].channels);
    write_u64(os, ds.window);
    os.write(reinterpret_cast<const char*>(ds.x[v].data()), static_cast<std::streamsize>(ds.x[v].size() * sizeof(float)));
    if (!os) throw DataError("failed writing view " + std::to_string(v));
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream min(dir / "manifest.json");
  if (!min) throw DataError("missing manifest.json in " + dir.string());
  nlohmann::json m;
  try {
    min >> m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad manifest: ") + e.what());
  }
  Dataset ds;
  std::size_t S = 0;
  try {
    for (const auto& v : m.at("views"))
      ds.views.push_back({v.at("name").get<std::string>(), parse_modality(v.at("modality").get<std::string>()),
                          v.at("channels").get<std::size_t>()});
    ds.window = m.at("window").get<std::size_t>();
    ds.num_classes = m.at("num_classes").get<std::size_t>();
    S = m.at("num_samples").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad manifest: ") + e.what());
  }
  const std::size_t V = ds.views.size();

  std::ifstream lin(dir / "labels.csv");
  if (!lin) throw DataError("missing labels.csv");
  std::string line;
  std::getline(lin, line);
  ds.labels.assign(S, -1);
  for (std::size_t i = 0; i < S; ++i) {
    if (!std::getline(lin, line)) throw DataError("labels.csv has fewer rows than the manifest");
    auto cells = split_csv(line);
    if (cells.size() != 2 || std::stoul(cells[0]) != i) throw DataError("labels.csv row " + std::to_string(i) + " malformed");
    if (!cells[1].empty()) ds.labels[i] = std::stoi(cells[1]);
  }

  std::ifstream mkin(dir / "mask.csv");
  if (!mkin) throw DataError("missing mask.csv");
  std::getline(mkin, line);
  ds.mask.assign(S * V, 0);
  for (std::size_t i = 0; i < S; ++i) {
    if (!std::getline(mkin, line)) throw DataError("mask.csv has fewer rows than the manifest");
    auto cells = split_csv(line);
    if (cells.size() != V + 1) throw DataError("mask.csv row " + std::to_string(i) + " malformed");
    for (std::size_t v = 0; v < V; ++v) ds.mask[i * V + v] = cells[v + 1] == "1" ? 1 : 0;
  }

  ds.x.resize(V);
  for (std::size_t v = 0; v < V; ++v) {
    std::ifstream is(dir / ("view_" + std::to_string(v) + ".bin"), std::ios::binary);
    if (!is) throw DataError("missing view_" + std::to_string(v) + ".bin");
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kViewMagic, sizeof magic) != 0) throw DataError("view_" + std::to_string(v) + ".bin: bad magic");
    const auto s = read_u64(is), c = read_u64(is), t = read_u64(is);
    if (s != S || c != ds.views[v].channels || t != ds.window)
      throw DataError("view_" + std::to_string(v) + ".bin: shape does not match the manifest");
    ds.x[v].resize(S * c * t);
    is.read(reinterpret_cast<char*>(ds.x[v].data()), static_cast<std::streamsize>(ds.x[v].size() * sizeof(float)));
    if (!is) throw DataError("view_" + std::to_string(v) + ".bin is truncated");
  }
  ds.validate();
  return ds;
}

}  // namespace aliad::data

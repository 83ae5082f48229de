#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "aliad/diffcore/ops.hpp"
#include "aliad/error.hpp"
#include "aliad/eval.hpp"
#include "aliad/model.hpp"
#include "json.hpp"

namespace aliad::model {

using diff::Tensor;

namespace {

constexpr char kParamMagic[8] = {'A', 'L', 'I', 'A', 'D', 'P', 'R', '1'};

double macro_f1_on(const AliAd& model, const data::Dataset& ds) {
  const auto idx = ds.labeled_indices();
  if (idx.empty()) return 0.0;
  std::vector<int> preds, labels;
  constexpr std::size_t kChunk = 64;
  for (std::size_t s = 0; s < idx.size(); s += kChunk) {
    const std::span<const std::size_t> part(idx.data() + s, std::min(kChunk, idx.size() - s));
    const auto batch = make_batch(ds, part);
    const auto p = model.predict(batch);
    preds.insert(preds.end(), p.begin(), p.end());
    labels.insert(labels.end(), batch.labels.begin(), batch.labels.end());
  }
  return eval::macro_f1(preds, labels, ds.num_classes);
}

std::vector<std::vector<double>> snapshot(const nn::NamedParams& params) {
  std::vector<std::vector<double>> out;
  for (const auto& [name, p] : params) out.emplace_back(p.values().begin(), p.values().end());
  return out;
}

void restore(const nn::NamedParams& params, const std::vector<std::vector<double>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    auto dst = p.mutable_values();
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

}  // namespace

Adam::Adam(nn::NamedParams params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i].second;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1_ * m[k] + (1.0 - b1_) * g[k];
      v[k] = b2_ * v[k] + (1.0 - b2_) * g[k] * g[k];
      w[k] -= lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
    }
  }
}

std::pair<data::Dataset, data::Dataset> split_train_val(const data::Dataset& ds, double val_fraction,
                                                        std::uint64_t seed) {
  auto labeled = ds.labeled_indices();
  std::mt19937_64 rng(seed);
  std::shuffle(labeled.begin(), labeled.end(), rng);
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(labeled.size())));
  std::vector<std::size_t> val(labeled.begin(), labeled.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::sort(val.begin(), val.end());
  std::vector<std::size_t> train;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (!std::binary_search(val.begin(), val.end(), i)) train.push_back(i);
  return {ds.subset(train), ds.subset(val)};
}

TrainResult train(AliAd& model, const data::Dataset& train_set, const data::Dataset& val,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  const auto& cfg = model.config();
  train_set.validate();
  if (train_set.num_views() != model.views().size()) throw DataError("dataset view count does not match the model");
  auto labeled = train_set.labeled_indices();
  auto unlabeled = train_set.unlabeled_indices();
  if (labeled.empty()) throw DataError("training needs at least one labeled sample");
  const data::Dataset& val_set = val.size() > 0 ? val : train_set;

  const auto params = model.parameters();
  const auto state = model.state();
  Adam opt(params, cfg.lr);
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x7a11u};
  nn::Rng rng(seq);
  const std::size_t V = model.views().size();
  const std::size_t steps = (labeled.size() + cfg.batch_labeled - 1) / cfg.batch_labeled;
  std::size_t unl_pos = unlabeled.size();

  TrainResult result;
  std::vector<std::vector<double>> best;
  std::size_t global_step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(labeled.begin(), labeled.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    log.w_mean.assign(V, 0.0);
    double seen = 0.0;
    for (std::size_t s = 0; s < steps; ++s, ++global_step) {
      std::vector<std::size_t> rows(labeled.begin() + static_cast<std::ptrdiff_t>(s * cfg.batch_labeled),
                                    labeled.begin() + static_cast<std::ptrdiff_t>(
                                                          std::min(labeled.size(), (s + 1) * cfg.batch_labeled)));
      for (std::size_t k = 0; k < cfg.batch_unlabeled && !unlabeled.empty(); ++k) {
        if (unl_pos == unlabeled.size()) {
          std::shuffle(unlabeled.begin(), unlabeled.end(), rng);
          unl_pos = 0;
        }
        rows.push_back(unlabeled[unl_pos++]);
      }
      const auto batch = make_batch(train_set, rows, nullptr, cfg.augment ? &rng : nullptr);
      opt.zero_grad();
      StepOutput out;
      try {
        out = model.forward_train(batch, rng);
      } catch (const DegenerateError& e) {
        // Non-finite activations surface as degenerate norms before the loss.
        throw DegenerateError("training diverged at step " + std::to_string(global_step) + ": " + e.what());
      }
      const double total = out.total.item();
      if (!std::isfinite(total)) throw Error("training diverged (non-finite loss) at step " + std::to_string(global_step));
      out.total.backward();
      opt.step();

      if (s == 0) log.first_step_total = total;
      log.total += total;
      log.l_cls += out.l_cls.item();
      log.l_ac += out.l_ac.item();
      log.l_lb += out.l_lb.item();
      const std::size_t N = batch.size;
      for (std::size_t v = 0; v < V; ++v)
        for (std::size_t n = 0; n < N; ++n) log.w_mean[v] += out.weights[v * N + n];
      seen += static_cast<double>(N);
    }
    const double k = static_cast<double>(steps);
    log.total /= k;
    log.l_cls /= k;
    log.l_ac /= k;
    log.l_lb /= k;
    for (auto& w : log.w_mean) w /= seen;
    log.val_f1 = macro_f1_on(model, val_set);
    if (log.val_f1 > result.best_val_f1) {
      result.best_val_f1 = log.val_f1;
      result.best_epoch = epoch;
      best = snapshot(state);
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  restore(state, best);
  return result;
}

void write_log_csv(const std::vector<EpochLog>& log, std::size_t views, bool with_ac, const std::filesystem::path& file) {
  std::ofstream os(file);
  if (!os) throw Error("cannot write " + file.string());
  os.precision(17);
  os << "epoch,l_cls";
  if (with_ac) os << ",l_ac";
  os << ",l_lb,val_f1";
  for (std::size_t v = 0; v < views; ++v) os << ",w_mean_view_" << v;
  os << '\n';
  for (const auto& e : log) {
    os << e.epoch << ',' << e.l_cls;
    if (with_ac) os << ',' << e.l_ac;
    os << ',' << e.l_lb << ',' << e.val_f1;
    for (double w : e.w_mean) os << ',' << w;
    os << '\n';
  }
}

void save_checkpoint(const AliAd& model, const std::filesystem::path& dir, std::size_t epoch, double val_f1) {
  std::filesystem::create_directories(dir);
  nlohmann::json views = nlohmann::json::array();
  for (const auto& v : model.views())
    views.push_back({{"name", v.name}, {"modality", data::to_string(v.modality)}, {"channels", v.channels}});
  nlohmann::json params = nlohmann::json::array();
  std::size_t idx = 0;
  for (const auto& [name, p] : model.state()) {
    const std::string file = "param_" + std::to_string(idx++) + ".bin";
    std::ofstream os(dir / file, std::ios::binary);
    os.write(kParamMagic, sizeof kParamMagic);
    const auto name_len = static_cast<std::uint32_t>(name.size());
    os.write(reinterpret_cast<const char*>(&name_len), sizeof name_len);
    os.write(name.data(), name_len);
    const auto ndim = static_cast<std::uint32_t>(p.dim());
    os.write(reinterpret_cast<const char*>(&ndim), sizeof ndim);
    for (auto d : p.shape()) {
      const auto d64 = static_cast<std::uint64_t>(d);
      os.write(reinterpret_cast<const char*>(&d64), sizeof d64);
    }
    std::vector<float> f(p.values().begin(), p.values().end());
    os.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
    if (!os) throw Error("failed writing " + file);
    params.push_back({{"name", name}, {"file", file}, {"shape", p.shape()}});
  }
  nlohmann::json manifest = {{"format", "aliad-checkpoint"},
                             {"version", 1},
                             {"config", nlohmann::json::parse(config_to_json(model.config()))},
                             {"views", views},
                             {"window", model.window()},
                             {"num_classes", model.num_classes()},
                             {"epoch", epoch},
                             {"val_f1", val_f1},
                             {"params", params}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

AliAd load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("missing manifest.json in " + dir.string());
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint manifest: ") + e.what());
  }
  std::vector<data::ViewInfo> views;
  for (const auto& v : m.at("views"))
    views.push_back({v.at("name").get<std::string>(), data::parse_modality(v.at("modality").get<std::string>()),
                     v.at("channels").get<std::size_t>()});
  AliAd model(parse_config(m.at("config").dump()), views, m.at("window").get<std::size_t>(),
              m.at("num_classes").get<std::size_t>());
  const auto params = model.state();
  const auto& entries = m.at("params");
  if (entries.size() != params.size()) throw DataError("checkpoint parameter count does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, p] = params[i];
    const auto file = entries[i].at("file").get<std::string>();
    std::ifstream is(dir / file, std::ios::binary);
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kParamMagic, sizeof magic) != 0) throw DataError(file + ": bad magic");
    std::uint32_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), sizeof name_len);
    std::string stored(name_len, '\0');
    is.read(stored.data(), name_len);
    if (stored != name) throw DataError(file + ": holds '" + stored + "', expected '" + name + "'");
    std::uint32_t ndim = 0;
    is.read(reinterpret_cast<char*>(&ndim), sizeof ndim);
    diff::Shape shape(ndim);
    for (auto& d : shape) {
      std::uint64_t d64 = 0;
      is.read(reinterpret_cast<char*>(&d64), sizeof d64);
      d = static_cast<std::size_t>(d64);
    }
    if (shape != p.shape()) throw DataError(file + ": shape " + diff::shape_str(shape) + " does not match the model");
    std::vector<float> f(p.numel());
    is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
    if (!is) throw DataError(file + " is truncated");
    Tensor t = p;
    auto dst = t.mutable_values();
    std::copy(f.begin(), f.end(), dst.begin());
  }
  return model;
}

}  // namespace aliad::model

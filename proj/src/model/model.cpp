#include "aliad/model.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "aliad/diffcore/ops.hpp"
#include "aliad/error.hpp"
#include "aliad/geometry.hpp"
#include "json.hpp"

namespace aliad::model {

using diff::Tensor;

// ---- configuration ----

const std::vector<std::string>& Ablations::names() {
  static const std::vector<std::string> kNames = {"no_moe",         "no_contrast",         "no_attention",
                                                  "no_magnorm",     "no_individual_views", "no_separate_load",
                                                  "no_stop_grad",   "full_graph"};
  return kNames;
}

bool& Ablations::flag(const std::string& name) {
  if (name == "no_moe") return no_moe;
  if (name == "no_contrast") return no_contrast;
  if (name == "no_attention") return no_attention;
  if (name == "no_magnorm") return no_magnorm;
  if (name == "no_individual_views") return no_individual_views;
  if (name == "no_separate_load") return no_separate_load;
  if (name == "no_stop_grad") return no_stop_grad;
  if (name == "full_graph") return full_graph;
  throw ConfigError("unknown ablation '" + name + "'");
}

bool Ablations::get(const std::string& name) const { return const_cast<Ablations*>(this)->flag(name); }

Ablations Ablations::parse(const std::string& csv) {
  Ablations a;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) a.flag(item) = true;
  }
  return a;
}

std::string Ablations::to_string() const {
  std::string out;
  for (const auto& n : names()) {
    if (!get(n)) continue;
    if (!out.empty()) out += ',';
    out += n;
  }
  return out;
}

void EncoderConfig::validate() const {
  if (in_channels == 0) throw ConfigError("encoder needs at least one input channel");
  if (embed_dim < 2) throw ConfigError("embedding size must be at least 2");
  if (kernel == 0) throw ConfigError("kernel size must be positive");
  for (auto w : hidden_widths)
    if (w == 0) throw ConfigError("encoder widths must be positive");
}

void AliAdConfig::validate() const {
  encoder(1).validate();
  gate.validate();
  if (w_cls < 0 || w_ac < 0 || w_lb < 0) throw ConfigError("loss weights must be nonnegative");
  if (!(tau > 0)) throw ConfigError("temperature must be positive");
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  if (batch_labeled == 0) throw ConfigError("labeled batch size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(val_fraction >= 0 && val_fraction < 1)) throw ConfigError("val_fraction must lie in [0, 1)");
}

EncoderConfig AliAdConfig::encoder(std::size_t in_channels) const {
  return EncoderConfig{in_channels, hidden_widths, embed_dim, kernel};
}

namespace {

nlohmann::json to_json(const AliAdConfig& c) {
  nlohmann::json abl = nlohmann::json::object();
  for (const auto& n : Ablations::names()) abl[n] = c.ablations.get(n);
  return {{"embed_dim", c.embed_dim},
          {"hidden_widths", c.hidden_widths},
          {"kernel", c.kernel},
          {"num_experts", c.gate.num_experts},
          {"top_k", c.gate.top_k},
          {"gate_noise", c.gate.noise_enabled},
          {"w_cls", c.w_cls},
          {"w_ac", c.w_ac},
          {"w_lb", c.w_lb},
          {"tau", c.tau},
          {"lr", c.lr},
          {"batch_labeled", c.batch_labeled},
          {"batch_unlabeled", c.batch_unlabeled},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"share_homogeneous", c.share_homogeneous},
          {"augment", c.augment},
          {"val_fraction", c.val_fraction},
          {"ablations", abl}};
}

AliAdConfig from_json(const nlohmann::json& j) {
  AliAdConfig c;
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& k = it.key();
    const auto& v = it.value();
    if (k == "embed_dim") c.embed_dim = v.get<std::size_t>();
    else if (k == "hidden_widths") c.hidden_widths = v.get<std::vector<std::size_t>>();
    else if (k == "kernel") c.kernel = v.get<std::size_t>();
    else if (k == "num_experts") c.gate.num_experts = v.get<std::size_t>();
    else if (k == "top_k") c.gate.top_k = v.get<std::size_t>();
    else if (k == "gate_noise") c.gate.noise_enabled = v.get<bool>();
    else if (k == "w_cls") c.w_cls = v.get<double>();
    else if (k == "w_ac") c.w_ac = v.get<double>();
    else if (k == "w_lb") c.w_lb = v.get<double>();
    else if (k == "tau") c.tau = v.get<double>();
    else if (k == "lr") c.lr = v.get<double>();
    else if (k == "batch_labeled") c.batch_labeled = v.get<std::size_t>();
    else if (k == "batch_unlabeled") c.batch_unlabeled = v.get<std::size_t>();
    else if (k == "epochs") c.epochs = v.get<std::size_t>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "share_homogeneous") c.share_homogeneous = v.get<bool>();
    else if (k == "augment") c.augment = v.get<bool>();
    else if (k == "val_fraction") c.val_fraction = v.get<double>();
    else if (k == "ablations") {
      if (v.is_string()) {
        c.ablations = Ablations::parse(v.get<std::string>());
      } else {
        for (auto a = v.begin(); a != v.end(); ++a) c.ablations.flag(a.key()) = a.value().get<bool>();
      }
    } else {
      throw ConfigError("unknown config key '" + k + "'");
    }
  }
  c.validate();
  return c;
}

}  // namespace

AliAdConfig parse_config(const std::string& text) {
  try {
    return from_json(nlohmann::json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

AliAdConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const AliAdConfig& cfg) { return to_json(cfg).dump(2); }

// ---- encoder ----

Encoder::Encoder(const EncoderConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  std::vector<std::size_t> widths = cfg_.hidden_widths;
  widths.push_back(cfg_.embed_dim);
  std::size_t in = cfg_.in_channels;
  for (auto out : widths) {
    blocks_.push_back({nn::Conv1d(in, out, cfg_.kernel, 2, rng), nn::Conv1d(out, out, cfg_.kernel, 1, rng),
                       nn::Conv1d(in, out, 1, 2, rng), nn::BatchNorm1d(out), nn::BatchNorm1d(out),
                       nn::BatchNorm1d(out)});
    in = out;
  }
}

Tensor Encoder::forward(const Tensor& x, bool train) const {
  if (x.dim() != 3 || x.size(1) != cfg_.in_channels) {
    throw ShapeError("encoder expects [B, " + std::to_string(cfg_.in_channels) + ", T], got " + diff::shape_str(x.shape()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& b = blocks_[i];
    const Tensor mid = diff::relu(b.bn1.forward(b.conv1.forward(h), train));
    const Tensor main = b.bn2.forward(b.conv2.forward(mid), train);
    h = diff::add(main, b.bn_shortcut.forward(b.shortcut.forward(h), train));
    // The last block stays linear so pooled features can take either sign.
    if (i + 1 < blocks_.size()) h = diff::relu(h);
  }
  return diff::mean(h, 2);
}

void Encoder::collect(const std::string& prefix, nn::NamedParams& out) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = prefix + ".block" + std::to_string(i);
    blocks_[i].conv1.collect(p + ".conv1", out);
    blocks_[i].conv2.collect(p + ".conv2", out);
    blocks_[i].shortcut.collect(p + ".shortcut", out);
    blocks_[i].bn1.collect(p + ".bn1", out);
    blocks_[i].bn2.collect(p + ".bn2", out);
    blocks_[i].bn_shortcut.collect(p + ".bn_shortcut", out);
  }
}

void Encoder::collect_buffers(const std::string& prefix, nn::NamedParams& out) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = prefix + ".block" + std::to_string(i);
    blocks_[i].bn1.collect_buffers(p + ".bn1", out);
    blocks_[i].bn2.collect_buffers(p + ".bn2", out);
    blocks_[i].bn_shortcut.collect_buffers(p + ".bn_shortcut", out);
  }
}

// ---- batches ----

ViewBatch make_batch(const data::Dataset& ds, std::span<const std::size_t> indices,
                     const std::vector<std::uint8_t>* view_subset, std::mt19937_64* augment_rng) {
  const std::size_t V = ds.num_views();
  if (view_subset && view_subset->size() != V) throw ConfigError("view subset needs one flag per view");
  ViewBatch b;
  b.size = indices.size();
  b.x.resize(V);
  b.mask.assign(b.size * V, 0);
  std::vector<float> scratch;
  for (std::size_t v = 0; v < V; ++v) b.x[v].assign(b.size * ds.sample_stride(v), 0.0);
  for (std::size_t n = 0; n < b.size; ++n) {
    const std::size_t i = indices[n];
    if (i >= ds.size()) throw DataError("sample index out of range");
    b.labels.push_back(ds.labels[i]);
    for (std::size_t v = 0; v < V; ++v) {
      if (!ds.present(i, v) || (view_subset && !(*view_subset)[v])) continue;
      b.mask[n * V + v] = 1;
      auto src = ds.sample(v, i);
      scratch.assign(src.begin(), src.end());
      if (augment_rng) data::augment(scratch, ds.views[v], ds.window, *augment_rng);
      std::copy(scratch.begin(), scratch.end(), b.x[v].begin() + static_cast<std::ptrdiff_t>(n * scratch.size()));
    }
  }
  return b;
}

// ---- model ----

AliAd::AliAd(const AliAdConfig& cfg, std::vector<data::ViewInfo> views, std::size_t window, std::size_t num_classes)
    : cfg_(cfg), views_(std::move(views)), window_(window), classes_(num_classes) {
  cfg_.validate();
  if (views_.empty()) throw ConfigError("model needs at least one view");
  if (classes_ < 2) throw ConfigError("model needs at least 2 classes");
  nn::Rng rng(cfg_.seed);

  // Views with the same modality and channel count share an encoder.
  std::map<std::pair<data::Modality, std::size_t>, std::size_t> groups;
  for (const auto& v : views_) {
    std::size_t id = encoders_.size();
    if (cfg_.share_homogeneous) {
      auto [it, inserted] = groups.try_emplace({v.modality, v.channels}, encoders_.size());
      id = it->second;
      if (!inserted) {
        encoder_of_view_.push_back(id);
        continue;
      }
    }
    encoders_.emplace_back(cfg_.encoder(v.channels), rng);
    encoder_of_view_.push_back(id);
  }
  attention_ = fusion::AttentionNet(cfg_.embed_dim, rng);
  if (cfg_.ablations.no_moe) {
    mlp_head_ = nn::Mlp(cfg_.embed_dim, cfg_.embed_dim, classes_, rng);
  } else {
    moe_ = moe::MoeHead(cfg_.embed_dim, classes_, cfg_.gate, rng);
  }
}

nn::NamedParams AliAd::parameters() const {
  nn::NamedParams out;
  for (std::size_t e = 0; e < encoders_.size(); ++e) encoders_[e].collect("encoder" + std::to_string(e), out);
  attention_.collect("attention", out);
  if (cfg_.ablations.no_moe) {
    mlp_head_.collect("head", out);
  } else {
    moe_.collect("moe", out);
  }
  return out;
}

nn::NamedParams AliAd::buffers() const {
  nn::NamedParams out;
  for (std::size_t e = 0; e < encoders_.size(); ++e) encoders_[e].collect_buffers("encoder" + std::to_string(e), out);
  return out;
}

nn::NamedParams AliAd::state() const {
  auto out = parameters();
  for (auto& b : buffers()) out.push_back(std::move(b));
  return out;
}

Tensor AliAd::encode(std::size_t view, const Tensor& x, bool train) const {
  const Tensor h = encoders_.at(encoder_of_view_.at(view)).forward(x, train);
  return cfg_.ablations.no_magnorm ? h : geometry::mag_norm(h);
}

Embeddings AliAd::embed(const ViewBatch& batch, bool train) const {
  const std::size_t V = views_.size(), N = batch.size, C = cfg_.embed_dim;
  if (batch.x.size() != V) throw ShapeError("batch view count does not match the model");
  if (N == 0) throw DataError("empty batch");
  std::vector<Tensor> slices;
  Embeddings out;
  out.views.mask.assign(V * N, 0);
  for (std::size_t v = 0; v < V; ++v) {
    const std::size_t ch = views_[v].channels, stride = ch * window_;
    // Pool 0 holds labeled rows, pool 1 unlabeled; outside training one pool.
    std::vector<std::size_t> pools[2];
    for (std::size_t n = 0; n < N; ++n) {
      if (!batch.present(n, v)) continue;
      out.views.mask[v * N + n] = 1;
      pools[train && batch.labels[n] < 0 ? 1 : 0].push_back(n);
    }
    std::vector<std::size_t> rows;
    std::vector<Tensor> parts;
    for (const auto& pool : pools) {
      if (pool.empty()) continue;
      std::vector<double> x;
      for (auto n : pool)
        x.insert(x.end(), batch.x[v].begin() + static_cast<std::ptrdiff_t>(n * stride),
                 batch.x[v].begin() + static_cast<std::ptrdiff_t>((n + 1) * stride));
      parts.push_back(encode(v, Tensor::from({pool.size(), ch, window_}, std::move(x)), train));
      rows.insert(rows.end(), pool.begin(), pool.end());
    }
    if (rows.empty()) {
      slices.push_back(Tensor::zeros({1, N, C}));
      continue;
    }
    const Tensor z = parts.size() == 1 ? parts[0] : diff::concat(parts, 0);
    slices.push_back(diff::reshape(diff::scatter_rows(z, rows, N), {1, N, C}));
  }
  out.views.z = V == 1 ? slices[0] : diff::concat(slices, 0);
  for (std::size_t n = 0; n < N; ++n)
    if (out.views.present_count(n) == 0) throw DataError("sample " + std::to_string(n) + " has no present view");

  if (cfg_.ablations.no_attention) {
    out.weights = fusion::uniform_weights(out.views);
  } else {
    out.weights = fusion::attention_weights(out.views, attention_, !cfg_.ablations.no_stop_grad);
  }
  const Tensor fused = fusion::weighted_fusion(out.views, out.weights);
  out.fused = cfg_.ablations.no_magnorm ? fused : geometry::mag_norm(fused);
  return out;
}

Tensor AliAd::head(const Tensor& tokens, bool train, nn::Rng* rng, moe::GateOutput* gate_out) const {
  if (cfg_.ablations.no_moe) return mlp_head_.forward(tokens);
  auto out = moe::moe_head(tokens, moe_, train, rng);
  if (gate_out) *gate_out = std::move(out.gate);
  return out.logits;
}

Tensor AliAd::classification_loss(const Tensor& fused_logits, std::span<const int> labels, const Tensor& view_logits,
                                  std::span<const std::size_t> view_owner) {
  const std::size_t L = labels.size();
  if (fused_logits.dim() != 2 || fused_logits.size(0) != L) throw ShapeError("fused logits must be [labeled, M]");
  Tensor per_sample = diff::cross_entropy(fused_logits, labels);
  std::vector<double> denom(L, 1.0);
  if (view_logits.defined() && !view_owner.empty()) {
    std::vector<int> owner_labels(view_owner.size());
    for (std::size_t p = 0; p < view_owner.size(); ++p) {
      owner_labels[p] = labels[view_owner[p]];
      denom[view_owner[p]] += 1.0;
    }
    const Tensor ce_views = diff::cross_entropy(view_logits, owner_labels);
    per_sample = diff::add(per_sample, diff::scatter_rows(ce_views, view_owner, L));
  }
  for (auto& d : denom) d = 1.0 / d;
  return diff::mean(diff::mul(per_sample, Tensor::from({L}, std::move(denom))));
}

StepOutput AliAd::forward_train(const ViewBatch& batch, nn::Rng& rng) const {
  const auto& ab = cfg_.ablations;
  const std::size_t V = views_.size(), N = batch.size, C = cfg_.embed_dim;
  const Embeddings emb = embed(batch, true);
  StepOutput out;
  out.weights = emb.weights;

  std::vector<std::size_t> labeled;
  std::vector<int> labels;
  for (std::size_t n = 0; n < N; ++n) {
    if (batch.labels[n] < 0) continue;
    labeled.push_back(n);
    labels.push_back(batch.labels[n]);
  }
  out.labeled = labeled.size();

  out.l_lb = Tensor::scalar(0.0);
  if (labeled.empty()) {
    std::clog << "warning: batch has no labeled samples; classification loss is 0\n";
    out.l_cls = Tensor::scalar(0.0);
  } else {
    const Tensor fused_tokens = diff::index_select(emb.fused, 0, labeled);
    std::vector<std::size_t> flat, owner;
    if (!ab.no_individual_views) {
      for (std::size_t i = 0; i < labeled.size(); ++i)
        for (std::size_t v = 0; v < V; ++v)
          if (batch.present(labeled[i], v)) {
            flat.push_back(v * N + labeled[i]);
            owner.push_back(i);
          }
    }
    Tensor view_tokens;
    if (!flat.empty()) view_tokens = diff::index_select(diff::reshape(emb.views.z, {V * N, C}), 0, flat);

    moe::GateOutput g_view, g_fused;
    if (view_tokens.defined() && ab.no_separate_load && !ab.no_moe) {
      // One pooled gate call over both token groups.
      const Tensor logits = head(diff::concat({view_tokens, fused_tokens}, 0), true, &rng, &g_view);
      std::vector<std::size_t> vi(flat.size()), fi(labeled.size());
      std::iota(vi.begin(), vi.end(), 0);
      std::iota(fi.begin(), fi.end(), flat.size());
      out.view_logits = diff::index_select(logits, 0, vi);
      out.fused_logits = diff::index_select(logits, 0, fi);
      out.l_lb = moe::load_balancing_loss(&g_view, nullptr);
    } else {
      if (view_tokens.defined()) out.view_logits = head(view_tokens, true, &rng, &g_view);
      out.fused_logits = head(fused_tokens, true, &rng, &g_fused);
      if (!ab.no_moe) {
        out.l_lb = moe::load_balancing_loss(view_tokens.defined() ? &g_view : nullptr, &g_fused);
      }
    }
    out.l_cls = classification_loss(out.fused_logits, labels, out.view_logits, owner);
  }

  if (ab.no_contrast || V < 2) {
    out.l_ac = Tensor::scalar(0.0);
  } else if (ab.full_graph) {
    out.l_ac = contrastive::full_graph_loss(emb.views, cfg_.tau);
  } else {
    out.l_ac = contrastive::adjusted_center_loss(emb.views, emb.weights, cfg_.tau);
  }

  out.total = diff::mul_scalar(out.l_cls, cfg_.w_cls);
  if (!ab.no_contrast) out.total = diff::add(out.total, diff::mul_scalar(out.l_ac, cfg_.w_ac));
  if (!ab.no_moe) out.total = diff::add(out.total, diff::mul_scalar(out.l_lb, cfg_.w_lb));
  return out;
}

Tensor AliAd::predict_logits(const ViewBatch& batch) const {
  for (std::size_t n = 0; n < batch.size; ++n) {
    bool any = false;
    for (std::size_t v = 0; v < views_.size() && !any; ++v) any = batch.present(n, v);
    if (!any) throw DataError("sample " + std::to_string(n) + " has no view inside the requested subset");
  }
  return head(embed(batch).fused, false, nullptr, nullptr);
}

std::vector<int> AliAd::predict(const ViewBatch& batch) const {
  const Tensor logits = predict_logits(batch);
  const std::size_t M = classes_;
  std::vector<int> out(batch.size);
  for (std::size_t n = 0; n < batch.size; ++n) {
    const auto row = logits.values().subspan(n * M, M);
    out[n] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

moe::GateOutput AliAd::gate(const Tensor& tokens) const {
  if (cfg_.ablations.no_moe) throw ConfigError("model was trained without experts; there is no gate to analyze");
  return moe::noisy_topk_gate(tokens, moe_.gate(), false);
}

}  // namespace aliad::model

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "aliad/contrastive.hpp"
#include "aliad/data.hpp"
#include "aliad/fusion.hpp"
#include "aliad/layers.hpp"
#include "aliad/moe.hpp"

namespace aliad::model {

// Each flag removes one component; all combinations are legal.
struct Ablations {
  bool no_moe = false;
  bool no_contrast = false;
  bool no_attention = false;
  bool no_magnorm = false;
  bool no_individual_views = false;
  bool no_separate_load = false;
  bool no_stop_grad = false;
  bool full_graph = false;

  static const std::vector<std::string>& names();
  bool& flag(const std::string& name);
  bool get(const std::string& name) const;
  // Comma-separated flag names; empty string gives no flags.
  static Ablations parse(const std::string& csv);
  std::string to_string() const;
};

struct EncoderConfig {
  std::size_t in_channels = 3;
  std::vector<std::size_t> hidden_widths = {32, 64, 64};  // one per block before the last
  std::size_t embed_dim = 64;                             // width of the last block
  std::size_t kernel = 5;

  void validate() const;
};

struct AliAdConfig {
  std::size_t embed_dim = 64;
  std::vector<std::size_t> hidden_widths = {32, 64, 64};
  std::size_t kernel = 5;
  moe::GateConfig gate;
  double w_cls = 1.0;
  double w_ac = 1.0;
  double w_lb = 1e-2;
  double tau = 0.1;
  double lr = 1e-3;
  std::size_t batch_labeled = 16;
  std::size_t batch_unlabeled = 16;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  bool share_homogeneous = true;
  bool augment = true;
  double val_fraction = 0.2;
  Ablations ablations;

  void validate() const;
  EncoderConfig encoder(std::size_t in_channels) const;
};

// Missing keys keep their defaults; unknown keys are rejected.
AliAdConfig parse_config(const std::string& json_text);
AliAdConfig load_config(const std::filesystem::path& file);
std::string config_to_json(const AliAdConfig& cfg);

// Residual 1-D CNN: each block is conv(k, stride 2) -> BN -> ReLU -> conv(k)
// -> BN plus a 1x1 stride-2 conv -> BN shortcut, then ReLU (skipped after the
// last block). Global average pooling over time.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, nn::Rng& rng);

  // [B, in_channels, T] -> [B, embed_dim], before magnitude normalisation.
  // `train` selects batch statistics in the norm layers (and updates their
  // running averages).
  diff::Tensor forward(const diff::Tensor& x, bool train = false) const;
  void collect(const std::string& prefix, nn::NamedParams& out) const;
  void collect_buffers(const std::string& prefix, nn::NamedParams& out) const;
  const EncoderConfig& config() const { return cfg_; }

 private:
  struct Block {
    nn::Conv1d conv1, conv2, shortcut;
    nn::BatchNorm1d bn1, bn2, bn_shortcut;
  };
  EncoderConfig cfg_;
  std::vector<Block> blocks_;
};

// Rows of a dataset as doubles, one [size, channels, window] block per view.
struct ViewBatch {
  std::size_t size = 0;
  std::vector<std::vector<double>> x;
  std::vector<std::uint8_t> mask;  // [size, V]
  std::vector<int> labels;         // -1 for unlabeled

  bool present(std::size_t n, std::size_t v) const { return mask[n * x.size() + v] != 0; }
};

// `view_subset` (one flag per view) hides views outside the subset; with
// `augment_rng` every present window is augmented.
ViewBatch make_batch(const data::Dataset& ds, std::span<const std::size_t> indices,
                     const std::vector<std::uint8_t>* view_subset = nullptr, std::mt19937_64* augment_rng = nullptr);

struct Embeddings {
  contrastive::EmbeddingSet views;  // [V, N, C], zeros on absent views
  diff::Tensor weights;             // [V, N]
  diff::Tensor fused;               // [N, C]
};

struct StepOutput {
  diff::Tensor total;
  diff::Tensor l_cls, l_ac, l_lb;
  diff::Tensor weights;        // [V, N]
  diff::Tensor fused_logits;   // [labeled, M]
  diff::Tensor view_logits;    // [present labeled views, M]; undefined when unused
  std::size_t labeled = 0;
};

class AliAd {
 public:
  AliAd(const AliAdConfig& cfg, std::vector<data::ViewInfo> views, std::size_t window, std::size_t num_classes);

  const AliAdConfig& config() const { return cfg_; }
  const std::vector<data::ViewInfo>& views() const { return views_; }
  std::size_t window() const { return window_; }
  std::size_t num_classes() const { return classes_; }
  std::size_t encoder_of_view(std::size_t v) const { return encoder_of_view_[v]; }

  // Parameters in a fixed order with stable names.
  nn::NamedParams parameters() const;
  // Norm-layer running statistics; part of the model state, not trained.
  nn::NamedParams buffers() const;
  // parameters() followed by buffers().
  nn::NamedParams state() const;

  // Per-view embedding (magnitude-normalised unless ablated) of one view's
  // [B, channels, T] input.
  diff::Tensor encode(std::size_t view, const diff::Tensor& x, bool train = false) const;
  // In training mode the labeled and unlabeled rows of each view are
  // normalised with separate batch statistics, so unlabeled rows cannot reach
  // the classification loss.
  Embeddings embed(const ViewBatch& batch, bool train = false) const;

  // Cross-entropy of fused and per-view logits averaged per sample over
  // (present views + 1), then over samples.
  static diff::Tensor classification_loss(const diff::Tensor& fused_logits, std::span<const int> labels,
                                          const diff::Tensor& view_logits, std::span<const std::size_t> view_owner);

  StepOutput forward_train(const ViewBatch& batch, nn::Rng& rng) const;

  // Class logits from the fused token only, gate noise off.
  diff::Tensor predict_logits(const ViewBatch& batch) const;
  std::vector<int> predict(const ViewBatch& batch) const;

  // Noise-free gate on arbitrary tokens; throws for models without experts.
  moe::GateOutput gate(const diff::Tensor& tokens) const;

 private:
  diff::Tensor head(const diff::Tensor& tokens, bool train, nn::Rng* rng, moe::GateOutput* gate_out) const;

  AliAdConfig cfg_;
  std::vector<data::ViewInfo> views_;
  std::size_t window_, classes_;
  std::vector<Encoder> encoders_;
  std::vector<std::size_t> encoder_of_view_;
  fusion::AttentionNet attention_;
  moe::MoeHead moe_;
  nn::Mlp mlp_head_;
};

class Adam {
 public:
  Adam(nn::NamedParams params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void zero_grad();
  void step();

 private:
  nn::NamedParams params_;
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EpochLog {
  std::size_t epoch = 0;
  double l_cls = 0, l_ac = 0, l_lb = 0, val_f1 = 0, total = 0;
  // Mean attention weight per view over all samples seen in the epoch
  // (absent views count as 0), so the entries sum to 1.
  std::vector<double> w_mean;
  // Total loss of the first step, for reproducibility checks.
  double first_step_total = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_val_f1 = -1;
};

// Each step draws one labeled and one unlabeled batch; the contrastive loss
// sees both, classification only the labeled one. The parameters of the
// epoch with the best validation macro-F1 are restored at the end. An empty
// `val` scores on the labeled training rows.
TrainResult train(AliAd& model, const data::Dataset& train_set, const data::Dataset& val,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// Train/validation split of labeled rows (unlabeled rows stay in training).
std::pair<data::Dataset, data::Dataset> split_train_val(const data::Dataset& ds, double val_fraction,
                                                        std::uint64_t seed);

void write_log_csv(const std::vector<EpochLog>& log, std::size_t views, bool with_ac,
                   const std::filesystem::path& file);

void save_checkpoint(const AliAd& model, const std::filesystem::path& dir, std::size_t epoch, double val_f1);
AliAd load_checkpoint(const std::filesystem::path& dir);

}  // namespace aliad::model

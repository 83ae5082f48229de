// Command-line front end: data generation, view dropping, training,
// evaluation, loss benchmarks and post-hoc analyses. Outputs are CSV.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "aliad/contrastive.hpp"
#include "aliad/data.hpp"
#include "aliad/error.hpp"
#include "aliad/eval.hpp"
#include "aliad/model.hpp"

namespace fs = std::filesystem;
using namespace aliad;

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::size_t to_size(const std::string& s) {
  std::size_t pos = 0;
  const auto v = std::stoull(s, &pos);
  if (pos != s.size()) throw ConfigError("not an integer: '" + s + "'");
  return static_cast<std::size_t>(v);
}

// "2..9" or "16,32,64".
std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& part : split(s, ',')) {
    const auto dots = part.find("..");
    if (dots == std::string::npos) {
      out.push_back(to_size(part));
      continue;
    }
    const auto lo = to_size(part.substr(0, dots)), hi = to_size(part.substr(dots + 2));
    if (lo > hi) throw ConfigError("empty range '" + part + "'");
    for (auto v = lo; v <= hi; ++v) out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty list '" + s + "'");
  return out;
}

std::ofstream open_out(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file);
  if (!os) throw Error("cannot write " + file.string());
  return os;
}

std::string combo_name(const data::Dataset& ds, const std::vector<std::size_t>& combo) {
  std::string s;
  for (auto v : combo) s += (s.empty() ? "" : "+") + ds.views[v].name;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiview classification under missing views"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multiview dataset");
  std::string spec_file, out_dir;
  gen->add_option("--spec", spec_file, "Synthetic spec JSON")->required();
  gen->add_option("--out", out_dir, "Output dataset directory")->required();

  auto* drop = app.add_subcommand("drop-views", "Simulate missing views");
  std::string in_dir, rates_file;
  std::uint64_t drop_seed = 0;
  bool uniform = false;
  drop->add_option("--in", in_dir)->required();
  drop->add_option("--out", out_dir)->required();
  auto* uni_opt = drop->add_flag("--uniform", uniform, "Drop each view with p = 10^(-3/V)");
  auto* rates_opt = drop->add_option("--rates", rates_file, "Per-view drop rates JSON");
  uni_opt->excludes(rates_opt);
  drop->add_option("--seed", drop_seed)->required();

  auto* train = app.add_subcommand("train", "Train a model");
  std::string data_dir, config_file, ablation;
  train->add_option("--data", data_dir)->required();
  train->add_option("--config", config_file)->required();
  train->add_option("--out", out_dir, "Run directory")->required();
  train->add_option("--ablation", ablation, "Comma-separated ablation flags");

  auto* ev = app.add_subcommand("eval", "Subset-sweep macro-F1");
  std::string model_dir, seeds = "0";
  std::size_t k = 1, max_combos = 0;
  std::string out_file;
  ev->add_option("--model", model_dir)->required();
  ev->add_option("--data", data_dir)->required();
  ev->add_option("--k", k)->required();
  ev->add_option("--max-combos", max_combos, "Cap on evaluated subsets (seeded sample)");
  ev->add_option("--seeds", seeds, "Comma-separated seeds");
  ev->add_option("--out", out_file)->required();

  auto* bench = app.add_subcommand("bench-loss", "Time contrastive losses");
  std::string losses = "full_graph,adjusted_center", views = "2..9", batches = "16,32,64,128";
  std::size_t channels = 64, trials = 20, warmup = 3;
  bench->add_option("--losses", losses);
  bench->add_option("--views", views);
  bench->add_option("--batch", batches);
  bench->add_option("--channels", channels);
  bench->add_option("--trials", trials);
  bench->add_option("--warmup", warmup);
  bench->add_option("--out", out_file)->required();

  auto* experts = app.add_subcommand("analyze-experts", "Expert usage per view combination");
  experts->add_option("--model", model_dir)->required();
  experts->add_option("--data", data_dir)->required();
  experts->add_option("--out", out_file)->required();

  auto* weights = app.add_subcommand("analyze-weights", "Attention weights and contrastive loss per epoch");
  std::string log_file;
  weights->add_option("--log", log_file)->required();
  weights->add_option("--out", out_file)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      data::save_dataset(data::gen_synthetic(data::load_synthetic_spec(spec_file)), out_dir);
    } else if (*drop) {
      const auto ds = data::load_dataset(in_dir);
      if (!uniform && rates_file.empty()) throw ConfigError("drop-views needs --uniform or --rates");
      const auto out = uniform ? data::drop_views_uniform(ds, drop_seed)
                               : data::drop_views_rates(ds, data::load_rates(rates_file, ds), drop_seed);
      data::save_dataset(out, out_dir);
      std::cerr << "kept " << out.size() << " of " << ds.size() << " samples\n";
    } else if (*train) {
      auto cfg = model::load_config(config_file);
      if (!ablation.empty()) {
        const auto extra = model::Ablations::parse(ablation);
        for (const auto& n : model::Ablations::names())
          if (extra.get(n)) cfg.ablations.flag(n) = true;
      }
      const auto ds = data::load_dataset(data_dir);
      auto [tr, va] = model::split_train_val(ds, cfg.val_fraction, cfg.seed);
      model::AliAd m(cfg, ds.views, ds.window, ds.num_classes);
      const auto res = model::train(m, tr, va, [](const model::EpochLog& e) {
        std::cerr << "epoch " << e.epoch << " l_cls=" << e.l_cls << " l_ac=" << e.l_ac << " l_lb=" << e.l_lb
                  << " val_f1=" << e.val_f1 << '\n';
      });
      fs::create_directories(out_dir);
      model::save_checkpoint(m, out_dir, res.best_epoch, res.best_val_f1);
      model::write_log_csv(res.log, ds.num_views(), !cfg.ablations.no_contrast, fs::path(out_dir) / "train_log.csv");
      std::cerr << "best epoch " << res.best_epoch << " val_f1=" << res.best_val_f1 << '\n';
    } else if (*ev) {
      const auto m = model::load_checkpoint(model_dir);
      const auto ds = data::load_dataset(data_dir);
      auto os = open_out(out_file);
      os.precision(10);
      os << "seed,k,combination,macro_f1\n";
      std::vector<double> means;
      for (const auto& s : split(seeds, ',')) {
        const auto seed = static_cast<std::uint64_t>(to_size(s));
        const auto r = eval::subset_sweep(m, ds, k, max_combos, seed);
        for (std::size_t c = 0; c < r.combos.size(); ++c)
          os << seed << ',' << k << ',' << combo_name(ds, r.combos[c]) << ',' << r.scores[c] << '\n';
        os << seed << ',' << k << ",mean," << r.mean << '\n';
        os << seed << ',' << k << ",std," << r.stddev << '\n';
        means.push_back(r.mean);
      }
      const double mu = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(means.size());
      double var = 0.0;
      for (double x : means) var += (x - mu) * (x - mu);
      os << "all," << k << ",mean," << mu << '\n';
      os << "all," << k << ",std," << std::sqrt(var / static_cast<double>(means.size())) << '\n';
      std::cout << "k=" << k << " macro_f1 " << mu << " +- " << std::sqrt(var / static_cast<double>(means.size()))
                << '\n';
    } else if (*bench) {
      auto os = open_out(out_file);
      os << "loss,views,batch,channels,trials,median_ns,iqr_ns,pair_evals\n";
      for (const auto& name : split(losses, ',')) {
        const auto kind = contrastive::parse_loss_kind(name);
        for (auto V : parse_sizes(views))
          for (auto N : parse_sizes(batches)) {
            const auto r = contrastive::bench_loss(kind, V, N, channels, trials, warmup);
            os << name << ',' << V << ',' << N << ',' << channels << ',' << trials << ',' << r.median_ns << ','
               << r.iqr_ns << ',' << r.pair_evals << '\n';
          }
      }
    } else if (*experts) {
      const auto m = model::load_checkpoint(model_dir);
      const auto usage = eval::analyze_experts(m, data::load_dataset(data_dir));
      if (fs::path(out_file).has_parent_path()) fs::create_directories(fs::path(out_file).parent_path());
      eval::write_usage_csv(usage, out_file);
      if (usage.rows.size() > usage.single_view_rows && usage.single_view_rows > 0)
        std::cout << "mean JS(single view, fusion) = " << eval::mean_single_to_fused_js(usage) << '\n';
    } else if (*weights) {
      const auto curves = eval::analyze_weights(log_file);
      if (fs::path(out_file).has_parent_path()) fs::create_directories(fs::path(out_file).parent_path());
      eval::write_weights_csv(curves, out_file);
    }
  } catch (const std::exception& e) {
    std::cerr << "aliad: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

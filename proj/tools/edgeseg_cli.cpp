#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "edgeseg/encode.hpp"
#include "edgeseg/error.hpp"
#include "edgeseg/harness.hpp"
#include "edgeseg/pnm.hpp"
#include "edgeseg/synth.hpp"

namespace fs = std::filesystem;
using namespace edgeseg;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<int> folds;
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::string ids;
  bool quiet = false;
};

ExperimentConfig build_config(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(o.config);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::ConfigError, "--set expects key=value, got '" + kv + "'");
    cfg.apply(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out_dir = *o.out;
  if (o.mode) cfg.mode = parse_mode(*o.mode);
  if (o.folds) cfg.folds = *o.folds;
  cfg.validate();
  return cfg;
}

EpochCallback progress(const Options& o) {
  if (o.quiet) return {};
  return [](const EpochLog& row) {
    std::fprintf(stderr, "epoch %3d  train %.6f  val %.6f\n", row.epoch, row.train_loss, row.val_loss);
  };
}

std::vector<std::string> parse_ids(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string id; std::getline(ss, id, ',');)
    if (!id.empty()) out.push_back(id);
  return out;
}

Dataset dataset_for(const ExperimentConfig& cfg) { return prepare_dataset(cfg, cfg.out_dir / "preprocessed"); }

// Loads a checkpoint and checks it matches the configured target mode.
ModelParams<float> load_model(const ExperimentConfig& cfg, const fs::path& path) {
  auto [net, params] = load_checkpoint(path);
  if (net.out_channels != cfg.network().out_channels)
    throw Error(ErrorKind::ConfigError, "checkpoint has " + std::to_string(net.out_channels) +
                                            " output channels but mode " + std::string(mode_name(cfg.mode)) +
                                            " needs " + std::to_string(cfg.network().out_channels));
  if (net.depth != cfg.unet.depth || net.base_filters != cfg.unet.base_filters)
    throw Error(ErrorKind::ConfigError, "checkpoint network shape differs from the configured one");
  return std::move(params);
}

int cmd_synth(const Options& o) {
  const auto cfg = build_config(o);
  SynthConfig sc = cfg.synth;
  sc.seed = cfg.effective_synth_seed();
  const auto dir = cfg.out_dir / "synth";
  write_dataset(dir, sc, generate_dataset(sc, cfg.synth_count), cfg.mapping);
  write_run_manifest(dir / "run_manifest.txt", cfg, "synth", {dir / "manifest.tsv"});
  std::cout << "wrote " << cfg.synth_count << " samples to " << dir.string() << '\n';
  return 0;
}

int cmd_preprocess(const Options& o) {
  const auto cfg = build_config(o);
  const auto dir = cfg.out_dir / "preprocessed";
  const auto data = preprocess(cfg, dir);
  write_run_manifest(dir / "run_manifest.txt", cfg, "preprocess", {dir / "manifest.tsv"});
  std::cout << "preprocessed " << data.items.size() << " items (" << mode_name(cfg.mode) << ") into "
            << dir.string() << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  const auto cfg = build_config(o);
  const auto data = dataset_for(cfg);
  const auto s = split(data.ids(), cfg.split, cfg.seed);
  const auto dir = cfg.out_dir / "train";
  fs::create_directories(dir);
  const auto result = train(cfg, data, s.train, s.val, progress(o));
  save_checkpoint(dir / "final.ckpt", result.network, result.final_params);
  save_checkpoint(dir / "best.ckpt", result.network, result.best_params);
  write_checkpoint_manifest(dir / "checkpoint_manifest.txt", result.final_params);
  write_loss_log(dir / "loss_log.csv", result.log);
  write_split_csv(dir / "split.csv", s);
  {
    std::ofstream info(dir / "train_info.txt", std::ios::trunc);
    info << "init_checksum=" << hex64(result.init_checksum) << '\n'
         << "trunk_checksum=" << hex64(result.trunk_checksum) << '\n'
         << "best_epoch=" << result.best_epoch << '\n'
         << "steps=" << result.steps << '\n';
  }
  write_run_manifest(dir / "run_manifest.txt", cfg, "train",
                     {dir / "final.ckpt", dir / "best.ckpt", dir / "checkpoint_manifest.txt", dir / "loss_log.csv",
                      dir / "split.csv", dir / "train_info.txt"});
  std::cout << "trained " << result.steps << " steps, best epoch " << result.best_epoch << ", checkpoints in "
            << dir.string() << '\n';
  return 0;
}

int cmd_eval(const Options& o) {
  const auto cfg = build_config(o);
  const auto data = dataset_for(cfg);
  const fs::path ckpt = o.checkpoint.empty() ? cfg.out_dir / "train" / "best.ckpt" : fs::path(o.checkpoint);
  const auto params = load_model(cfg, ckpt);
  auto ids = parse_ids(o.ids);
  if (ids.empty()) ids = split(data.ids(), cfg.split, cfg.seed).test;
  const auto result = evaluate(cfg, params, data, ids);
  const auto dir = cfg.out_dir / "eval";
  write_eval_outputs(dir, result);
  write_run_manifest(dir / "run_manifest.txt", cfg, "eval",
                     {ckpt, dir / "metrics.csv", dir / "summary.csv", dir / "flags.csv"});
  const auto& m = result.summary.mean;
  std::printf("mean dice disc %.4f cup %.4f  hausdorff disc %.3f cup %.3f  (%zu images at %dx%d)\n", m.dice_disc,
              m.dice_cup, m.hausdorff_disc, m.hausdorff_cup, result.records.size(), result.eval_height,
              result.eval_width);
  return 0;
}

int cmd_crossval(const Options& o) {
  const auto cfg = build_config(o);
  const auto data = dataset_for(cfg);
  const auto result = crossval(cfg, data, cfg.folds, progress(o));
  const auto dir = cfg.out_dir / "crossval";
  fs::create_directories(dir);
  write_crossval_csv(dir / "crossval.csv", cfg.mode, result);
  {
    std::ofstream folds(dir / "folds.csv", std::ios::trunc);
    folds << "image_id,fold\n";
    for (int f = 0; f < result.plan.k; ++f)
      for (const auto& id : result.plan.folds[f]) folds << id << ',' << f + 1 << '\n';
  }
  write_run_manifest(dir / "run_manifest.txt", cfg, "crossval", {dir / "crossval.csv", dir / "folds.csv"});
  std::printf("%d-fold disc dice average %.4f median %.4f\n", result.plan.k, result.average, result.median);
  return 0;
}

int cmd_compare(const Options& o) {
  const auto cfg = build_config(o);
  const auto result = compare(cfg, progress(o));
  const auto dir = cfg.out_dir / "compare";
  fs::create_directories(dir);
  write_compare_csv(dir / "compare.csv", result);
  write_split_csv(dir / "split.csv", result.split);
  std::vector<fs::path> artifacts{dir / "compare.csv", dir / "split.csv"};
  for (const ArmResult* arm : {&result.regions, &result.edges}) {
    const auto arm_dir = dir / std::string(mode_name(arm->mode));
    write_eval_outputs(arm_dir, arm->eval);
    write_loss_log(arm_dir / "loss_log.csv", arm->training.log);
    save_checkpoint(arm_dir / "best.ckpt", arm->training.network, arm->training.best_params);
    artifacts.push_back(arm_dir / "summary.csv");
    artifacts.push_back(arm_dir / "best.ckpt");
  }
  {
    std::ofstream m(dir / "arms.txt", std::ios::trunc);
    for (const ArmResult* arm : {&result.regions, &result.edges})
      m << mode_name(arm->mode) << " init_checksum=" << hex64(arm->training.init_checksum)
        << " trunk_checksum=" << hex64(arm->training.trunk_checksum) << " best_epoch=" << arm->training.best_epoch
        << '\n';
    artifacts.push_back(dir / "arms.txt");
  }
  write_run_manifest(dir / "run_manifest.txt", cfg, "compare", artifacts);
  std::ifstream in(dir / "compare.csv");
  std::cout << in.rdbuf();
  return 0;
}

int cmd_activations(const Options& o) {
  const auto cfg = build_config(o);
  const auto data = dataset_for(cfg);
  const fs::path ckpt = o.checkpoint.empty() ? cfg.out_dir / "train" / "best.ckpt" : fs::path(o.checkpoint);
  const auto params = load_model(cfg, ckpt);
  auto ids = parse_ids(o.ids);
  if (ids.empty()) ids = split(data.ids(), cfg.split, cfg.seed).test;
  const auto dir = cfg.out_dir / "activations";
  auto files = export_activation_maps(cfg.network(), params, data, ids, dir);
  files.insert(files.begin(), ckpt);
  write_run_manifest(dir / "run_manifest.txt", cfg, "activations", files);
  std::cout << "wrote " << files.size() - 1 << " activation maps to " << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Edge-integrated optic disc/cup segmentation toolkit"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "flat key=value config file");
    sub->add_option("--seed", o.seed, "experiment seed");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--mode", o.mode, "target mode")->check(CLI::IsMember({"regions", "edges"}));
    sub->add_option("--folds", o.folds, "cross-validation folds");
    sub->add_option("--set", o.overrides, "extra key=value config entries");
    sub->add_flag("--quiet", o.quiet, "no per-epoch progress");
  };

  struct Entry {
    const char* name;
    const char* help;
    int (*fn)(const Options&);
    bool model;
  };
  const Entry entries[] = {
      {"synth", "write a synthetic image/mask dataset", cmd_synth, false},
      {"preprocess", "build training-resolution images and targets", cmd_preprocess, false},
      {"train", "train on the train split, keep best and final checkpoints", cmd_train, false},
      {"eval", "score a checkpoint on the test split", cmd_eval, true},
      {"crossval", "k-fold cross-validation of disc dice", cmd_crossval, false},
      {"compare", "regions-only vs edge-integrated targets on one split", cmd_compare, false},
      {"activations", "export per-channel probability heatmaps", cmd_activations, true},
  };
  int (*chosen)(const Options&) = nullptr;
  for (const auto& e : entries) {
    auto* sub = app.add_subcommand(e.name, e.help);
    common(sub);
    if (e.model) {
      sub->add_option("--checkpoint", o.checkpoint, "checkpoint (default <out>/train/best.ckpt)");
      sub->add_option("--ids", o.ids, "comma-separated image ids (default: test split)");
    }
    sub->callback([&chosen, fn = e.fn] { chosen = fn; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    return chosen(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.is_config_error() ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

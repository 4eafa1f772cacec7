#pragma once

// Experiment orchestration: preprocessing, splits, training, evaluation,
// cross-validation, the regions-vs-edges comparison and activation maps.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "edgeseg/imgrid.hpp"
#include "edgeseg/lossmetrics.hpp"
#include "edgeseg/nnseg.hpp"
#include "edgeseg/synth.hpp"

namespace edgeseg {

enum class TargetMode { Regions, Edges };
enum class DataSource { Synthetic, Directory };

std::string_view mode_name(TargetMode mode);
TargetMode parse_mode(std::string_view text);

struct ExperimentConfig {
  DataSource source = DataSource::Synthetic;
  SynthConfig synth;
  int synth_count = 200;
  std::optional<std::uint64_t> synth_seed;  // defaults to `seed`
  std::filesystem::path data_dir;
  LabelMapping mapping = LabelMapping::default_mapping();

  TargetMode mode = TargetMode::Edges;
  std::array<double, 3> split{0.7, 0.1, 0.2};
  int epochs = 30;
  int batch_size = 8;
  double learning_rate = 0.01;
  bool adam_fan_in_scaled = true;  // see AdamState::fan_in_scaled
  FocalConfig focal = FocalConfig::defaults();
  UNetConfig unet;  // out_channels follows `mode`
  int resolution = 128;
  std::uint64_t seed = 1;
  int folds = 5;
  HausdorffMode hausdorff_mode = HausdorffMode::Region;
  bool eval_native_resolution = false;
  std::filesystem::path out_dir = "out";

  /// Parses flat "key=value" text; '#' starts a comment. Unknown keys throw ConfigError.
  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  void apply(const std::string& key, const std::string& value);

  void validate() const;
  /// Network config with out_channels matching the target mode.
  UNetConfig network() const;
  std::vector<ChannelRole> target_roles() const;
  std::uint64_t effective_synth_seed() const { return synth_seed.value_or(seed); }
  /// Canonical key=value text; hash() is FNV-1a of it.
  std::string to_text() const;
  std::uint64_t hash() const;
};

// ---------------------------------------------------------------- data

struct DataItem {
  std::string id;
  Image2D image;          // training resolution, 3 channels
  LabelMask mask;         // training resolution
  LabelMask native_mask;  // source resolution
  ChannelStack target;    // 3 or 5 channels per mode
};

struct Dataset {
  TargetMode mode = TargetMode::Edges;
  std::vector<DataItem> items;  // sorted by id

  std::vector<std::string> ids() const;
  const DataItem& at(const std::string& id) const;
};

ChannelStack make_target(const LabelMask& mask, TargetMode mode);

/// Loads and resizes the source data, builds targets. When `write_dir` is given
/// also materializes images, masks, target stacks and manifest.tsv there.
Dataset preprocess(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& write_dir = {});
Dataset load_preprocessed(const std::filesystem::path& dir);
/// Reuses `dir` when its manifest matches the config hash, otherwise rebuilds it.
Dataset prepare_dataset(const ExperimentConfig& cfg, const std::filesystem::path& dir);

// ---------------------------------------------------------------- splits

struct SplitIds {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

/// Seeded shuffle then contiguous cut. Throws TooFewSamples when a part would be empty.
SplitIds split(const std::vector<std::string>& ids, const std::array<double, 3>& fractions, std::uint64_t seed);

struct FoldPlan {
  int k = 5;
  std::vector<std::vector<std::string>> folds;  // test ids per fold

  std::vector<std::string> training_ids(int fold) const;
};

/// Seeded shuffle, then round-robin assignment: fold sizes differ by at most one.
FoldPlan make_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed);

// ---------------------------------------------------------------- training

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN without a validation set
};

struct TrainResult {
  UNetConfig network;
  ModelParams<float> final_params;
  ModelParams<float> best_params;
  int best_epoch = 0;
  std::vector<EpochLog> log;
  std::uint64_t init_checksum = 0;
  std::uint64_t trunk_checksum = 0;  // every layer except the head
  std::int64_t steps = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// epochs x ceil(n / batch) Adam steps over per-epoch reshuffled batches. The
/// best-validation-loss parameters are kept alongside the final ones (the
/// training loss decides when `val_ids` is empty). Throws Diverged on a
/// non-finite loss.
TrainResult train(const ExperimentConfig& cfg, const Dataset& data, const std::vector<std::string>& train_ids,
                  const std::vector<std::string>& val_ids, const EpochCallback& on_epoch = {});

/// Mean focal loss of the network over `ids`.
double dataset_loss(const ExperimentConfig& cfg, const ModelParams<float>& params, const Dataset& data,
                    const std::vector<std::string>& ids);

void write_loss_log(const std::filesystem::path& path, const std::vector<EpochLog>& log);
std::vector<EpochLog> read_loss_log(const std::filesystem::path& path);

// ---------------------------------------------------------------- evaluation

struct ScoreOptions {
  HausdorffMode hausdorff_mode = HausdorffMode::Region;
  bool native_resolution = false;
};

/// Decodes a prediction and scores it against the mask. Metric failures are
/// recorded as NaN plus a flag instead of propagating.
MetricsRecord score_prediction(const std::string& id, const ChannelStack& pred, const DataItem& truth,
                               const ScoreOptions& options);

struct EvalResult {
  std::vector<MetricsRecord> records;
  MetricsSummary summary;
  int eval_height = 0;
  int eval_width = 0;
};

EvalResult evaluate(const ExperimentConfig& cfg, const ModelParams<float>& params, const Dataset& data,
                    const std::vector<std::string>& ids);
/// Scores externally supplied predictions (one per id, same order).
EvalResult evaluate_predictions(const ExperimentConfig& cfg, const Dataset& data,
                                const std::vector<std::string>& ids, const std::vector<ChannelStack>& predictions);

/// statistic,dice_disc,hausdorff_disc,dice_cup,hausdorff_cup,cdr,n,eval_height,eval_width
void write_summary_csv(const std::filesystem::path& path, const EvalResult& result);
void write_eval_outputs(const std::filesystem::path& dir, const EvalResult& result);

// ---------------------------------------------------------------- experiments

struct CrossvalResult {
  FoldPlan plan;
  std::vector<double> fold_disc_dice;
  double average = 0.0;
  double median = 0.0;
};

CrossvalResult crossval(const ExperimentConfig& cfg, const Dataset& data, int k,
                        const EpochCallback& on_epoch = {});
/// model,fold_1..fold_k,average,median
void write_crossval_csv(const std::filesystem::path& path, TargetMode mode, const CrossvalResult& result);

struct ArmResult {
  TargetMode mode;
  TrainResult training;
  EvalResult eval;
};

struct CompareResult {
  SplitIds split;
  ArmResult regions;
  ArmResult edges;
};

/// Full pipeline twice with the same seed and split, differing only in target mode.
CompareResult compare(const ExperimentConfig& cfg, const EpochCallback& on_epoch = {});
/// structure,mode,mean_dice,median_dice,mean_hausdorff,median_hausdorff
void write_compare_csv(const std::filesystem::path& path, const CompareResult& result);

/// One PGM per (id, channel) named {id}_{role}.pgm, probability scaled to 0-255.
std::vector<std::filesystem::path> export_activation_maps(const UNetConfig& network,
                                                          const ModelParams<float>& params, const Dataset& data,
                                                          const std::vector<std::string>& ids,
                                                          const std::filesystem::path& out_dir);

/// id,split lines.
void write_split_csv(const std::filesystem::path& path, const SplitIds& split);

/// config_hash, seed, command and artifact paths (relative to the manifest); no
/// timestamps, so reruns match byte for byte.
void write_run_manifest(const std::filesystem::path& path, const ExperimentConfig& cfg, const std::string& command,
                        const std::vector<std::filesystem::path>& artifacts);

std::string hex64(std::uint64_t v);

}  // namespace edgeseg

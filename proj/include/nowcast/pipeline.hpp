#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nowcast/config.hpp"
#include "nowcast/dataset.hpp"
#include "nowcast/metrics.hpp"
#include "nowcast/nn/unet.hpp"
#include "nowcast/optflow.hpp"
#include "nowcast/synth.hpp"
#include "nowcast/training.hpp"

// Stages shared by the CLI, the Python module and the acceptance suite.
namespace nowcast {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// Output directories must not exist yet or be empty.
void prepare_out_dir(const std::filesystem::path& dir);

struct RunManifest {
  std::string command;
  std::string config_snapshot;
  std::uint64_t seed = 0;
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;
  double wall_seconds = 0;
};
/// Text form. Wall-clock time is left out when include_wall_clock is false,
/// which keeps the file byte-stable across identical runs.
std::string manifest_text(const RunManifest& m, bool include_wall_clock = true);
void write_run_manifest(const std::filesystem::path& dir, const RunManifest& m);

// ---- stacks ---------------------------------------------------------------

StackSet stacks_from_synth(const SynthStacks& s);
void write_stacks(const std::filesystem::path& dir, const StackSet& stacks);
/// Reads crf.pgs and, when present, u.pgs and v.pgs (aligned onto the radar
/// grid when their mesh or cadence differs).
StackSet read_stacks(const std::filesystem::path& dir);

// ---- dataset --------------------------------------------------------------

struct DatasetOptions {
  int lead_steps = 6;
  bool use_wind = true;
  double eta = 0.9;
  double train_fraction = 2.0 / 3.0;
  std::uint64_t seed = 1;

  /// Keys dataset.lead_minutes, dataset.use_wind, dataset.eta,
  /// dataset.train_fraction, seed.
  static DatasetOptions from_config(const Config& c);
};

/// Accepted sequences split by week. The training list is not oversampled.
struct PreparedDataset {
  DatasetOptions options;
  ClassScheme scheme;
  NormStats stats;
  SplitPolicy policy;
  DatasetSplit split;
};

/// Start of the day containing first + fraction * (last - first).
std::int64_t train_end_for(const GridStack& crf, double train_fraction);

PreparedDataset prepare_dataset(const StackSet& stacks, const DatasetOptions& opts);

/// Training split oversampled to opts.eta with opts.seed.
DatasetSplit oversampled_split(const PreparedDataset& ds, OversampleReport* report = nullptr);

// ---- models ---------------------------------------------------------------

nn::UNetConfig unet_config_from(const Config& c, int in_channels, int n_classes);

/// Class decisions: probability >= 0.5.
ClassMap decide(const ProbMap& probs);

/// Predictions of every baseline/model over a list of samples.
std::vector<ProbMap> predict_persistence(std::span<const SamplePtr> samples,
                                         const PreparedDataset& ds);
std::vector<ProbMap> predict_optflow(std::span<const SamplePtr> samples, const PreparedDataset& ds,
                                     const FlowConfig& cfg);

struct ModelEvaluation {
  std::string name;
  std::vector<ProbMap> predictions;
  std::vector<ConfusionCounts> per_sample;
  ConfusionCounts pooled;
  BootstrapResult bootstrap;
};

ModelEvaluation evaluate_predictions(const std::string& name, std::vector<ProbMap> predictions,
                                     std::span<const SamplePtr> samples, int n_boot,
                                     std::uint64_t seed);

/// Trains a fresh U-Net on the oversampled training split.
struct TrainedModel {
  nn::UNet<float> model;
  TrainResult result;
  OversampleReport oversampling;
};
TrainedModel train_model(const PreparedDataset& ds, const Config& c, bool use_wind,
                         const EpochCallback& on_epoch = {});

// ---- commands -------------------------------------------------------------

void cmd_synth(const Config& c, const std::filesystem::path& out_dir);
void cmd_dataset(const Config& c, const std::filesystem::path& stacks_dir,
                 const std::filesystem::path& out_dir);
/// Reloads a dataset directory written by cmd_dataset.
PreparedDataset load_dataset(const std::filesystem::path& dataset_dir, StackSet* stacks = nullptr);
void cmd_train(const Config& c, const std::filesystem::path& dataset_dir,
               const std::filesystem::path& out_dir);
void cmd_eval(const Config& c, const std::filesystem::path& dataset_dir,
              const std::vector<std::filesystem::path>& checkpoints,
              const std::vector<std::string>& baselines, const std::filesystem::path& out_dir);
void cmd_leadsweep(const Config& c, const std::filesystem::path& stacks_dir,
                   const std::vector<int>& lead_minutes, const std::filesystem::path& out_dir);

}  // namespace nowcast

// nowcast: synthetic data, datasets, training and evaluation from the shell.
#include <CLI11.hpp>

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "nowcast/error.hpp"
#include "nowcast/pipeline.hpp"

namespace {

int exit_code(const std::string& category) {
  static const std::map<std::string, int> codes{
      {"contract", 3}, {"domain", 4},  {"shape", 5}, {"ingestion", 6},
      {"numerical", 7}, {"io", 8},     {"format", 9}, {"config", 10}};
  auto it = codes.find(category);
  return it == codes.end() ? 1 : it->second;
}

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out_dir;
  long long seed = -1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "key=value configuration file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "Override a configuration key (key=value), repeatable");
  cmd->add_option("--seed", c.seed, "Random seed")->check(CLI::NonNegativeNumber);
  cmd->add_option("--out-dir", c.out_dir, "Fresh output directory")->required();
}

nowcast::Config build_config(const Common& c) {
  nowcast::Config cfg;
  if (!c.config_file.empty()) cfg = nowcast::Config::from_file(c.config_file);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw nowcast::ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed >= 0) cfg.set("seed", std::to_string(c.seed));
  return cfg;
}

std::string number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Precipitation nowcasting toolkit"};
  app.require_subcommand(1);

  Common common;
  std::string stacks, dataset;
  std::vector<std::string> checkpoints, baselines;
  std::vector<int> leads{10, 20, 30, 40, 50, 60};
  int lead_minutes = 0;
  double eta = -1;
  bool no_wind = false;

  auto* synth = app.add_subcommand("synth", "Generate synthetic rain and wind stacks");
  add_common(synth, common);

  auto* ds = app.add_subcommand("dataset", "Build sequences, splits and normalization");
  add_common(ds, common);
  ds->add_option("--stacks", stacks, "Directory with crf.pgs [u.pgs v.pgs]")->required();
  ds->add_option("--lead-minutes", lead_minutes, "Forecast lead time in minutes");
  ds->add_option("--eta", eta, "Target positive proportion after oversampling");
  ds->add_flag("--no-wind", no_wind, "Rain-only sequences (12 channels)");

  auto* tr = app.add_subcommand("train", "Train a U-Net on a dataset");
  add_common(tr, common);
  tr->add_option("--dataset", dataset, "Directory written by 'dataset'")->required();
  tr->add_option("--eta", eta, "Override the dataset's oversampling target");
  tr->add_flag("--no-wind", no_wind, "Train on the rain channels only");

  auto* ev = app.add_subcommand("eval", "Score models and baselines on the test split");
  add_common(ev, common);
  ev->add_option("--dataset", dataset, "Directory written by 'dataset'")->required();
  ev->add_option("--checkpoint", checkpoints, "PNC1 checkpoint, repeatable");
  ev->add_option("--baseline", baselines, "persistence or optflow, repeatable")
      ->check(CLI::IsMember({"persistence", "optflow"}));

  auto* ls = app.add_subcommand("leadsweep", "F1 against lead time for every model");
  add_common(ls, common);
  ls->add_option("--stacks", stacks, "Directory with crf.pgs [u.pgs v.pgs]")->required();
  ls->add_option("--leads", leads, "Lead times in minutes, increasing");
  ls->add_option("--eta", eta, "Target positive proportion after oversampling");
  ls->add_flag("--no-wind", no_wind, "Rain-only sequences and model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    // Bad command lines are configuration errors like any other.
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return exit_code("config");
  }

  try {
    nowcast::Config cfg = build_config(common);
    if (lead_minutes != 0) cfg.set("dataset.lead_minutes", std::to_string(lead_minutes));
    if (eta >= 0) cfg.set("dataset.eta", number(eta));

    if (synth->parsed()) {
      nowcast::cmd_synth(cfg, common.out_dir);
    } else if (ds->parsed()) {
      if (no_wind) cfg.set("dataset.use_wind", "false");
      nowcast::cmd_dataset(cfg, stacks, common.out_dir);
    } else if (tr->parsed()) {
      if (no_wind) cfg.set("model.use_wind", "false");
      nowcast::cmd_train(cfg, dataset, common.out_dir);
    } else if (ev->parsed()) {
      std::vector<std::filesystem::path> paths(checkpoints.begin(), checkpoints.end());
      nowcast::cmd_eval(cfg, dataset, paths, baselines, common.out_dir);
    } else if (ls->parsed()) {
      if (no_wind) cfg.set("dataset.use_wind", "false");
      nowcast::cmd_leadsweep(cfg, stacks, leads, common.out_dir);
    }
  } catch (const nowcast::Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.category().c_str(), e.what());
    return exit_code(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: io: %s\n", e.what());
    return exit_code("io");
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}

#include "nowcast/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <set>

#include "nowcast/binary_io.hpp"
#include "nowcast/error.hpp"
#include "nowcast/nn/checkpoint.hpp"
#include "nowcast/png_panel.hpp"

namespace nowcast {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int lead_steps_from_minutes(long long minutes) {
  if (minutes <= 0 || minutes % 5 != 0)
    throw ConfigError("lead time must be a positive multiple of 5 minutes, got " +
                      std::to_string(minutes));
  return static_cast<int>(minutes / 5);
}

}  // namespace

void prepare_out_dir(const fs::path& dir) {
  std::error_code ec;
  if (fs::exists(dir, ec)) {
    if (!fs::is_directory(dir)) throw IoError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) throw IoError("output directory " + dir.string() + " is not empty");
    return;
  }
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string manifest_text(const RunManifest& m, bool include_wall_clock) {
  std::string out = "command=" + m.command + "\n";
  out += "toolkit_version=" + std::string(kToolkitVersion) + "\n";
  out += "seed=" + std::to_string(m.seed) + "\n";
  for (const auto& p : m.inputs) out += "input=" + p.string() + "\n";
  for (const auto& p : m.outputs) out += "output=" + p.filename().string() + "\n";
  if (include_wall_clock) out += "wall_seconds=" + fmt("%.3f", m.wall_seconds) + "\n";
  out += "[config]\n" + m.config_snapshot;
  return out;
}

void write_run_manifest(const fs::path& dir, const RunManifest& m) {
  io::write_text(dir / "run_manifest.txt", manifest_text(m));
}

// ---- stacks ---------------------------------------------------------------

StackSet stacks_from_synth(const SynthStacks& s) {
  StackSet out;
  out.crf = s.crf;
  out.u = s.u;
  out.v = s.v;
  return out;
}

void write_stacks(const fs::path& dir, const StackSet& stacks) {
  write_pgs(dir / "crf.pgs", stacks.crf);
  if (stacks.u) write_pgs(dir / "u.pgs", *stacks.u);
  if (stacks.v) write_pgs(dir / "v.pgs", *stacks.v);
}

StackSet read_stacks(const fs::path& dir) {
  StackSet out;
  out.crf = read_pgs(dir / "crf.pgs");
  if (out.crf.variable != Variable::CRF) throw IngestionError("crf.pgs does not hold CRF");
  const bool has_u = fs::exists(dir / "u.pgs"), has_v = fs::exists(dir / "v.pgs");
  if (has_u != has_v) throw IngestionError("wind needs both u.pgs and v.pgs");
  if (!has_u) return out;
  auto load = [&](const char* name, Variable var) {
    GridStack s = read_pgs(dir / name);
    if (s.variable != var) throw IngestionError(std::string(name) + " holds the wrong variable");
    if (!s.spec.same_mesh(out.crf.spec) || s.timestamps != out.crf.timestamps)
      s = align_to_radar(s, out.crf);
    return s;
  };
  out.u = load("u.pgs", Variable::U);
  out.v = load("v.pgs", Variable::V);
  return out;
}

// ---- dataset --------------------------------------------------------------

DatasetOptions DatasetOptions::from_config(const Config& c) {
  DatasetOptions o;
  o.lead_steps = lead_steps_from_minutes(c.get_int("dataset.lead_minutes", 5LL * o.lead_steps));
  o.use_wind = c.get_bool("dataset.use_wind", o.use_wind);
  o.eta = c.get_double("dataset.eta", o.eta);
  o.train_fraction = c.get_double("dataset.train_fraction", o.train_fraction);
  o.seed = c.get_u64("seed", o.seed);
  if (!(o.eta >= 0 && o.eta < 1)) throw ConfigError("dataset.eta must be in [0, 1)");
  if (!(o.train_fraction > 0 && o.train_fraction < 1))
    throw ConfigError("dataset.train_fraction must be in (0, 1)");
  return o;
}

std::int64_t train_end_for(const GridStack& crf, double train_fraction) {
  if (crf.timestamps.empty()) throw IngestionError("rain stack has no frames");
  const std::int64_t first = crf.timestamps.front(), last = crf.timestamps.back();
  const auto t = first + static_cast<std::int64_t>(train_fraction * static_cast<double>(last - first));
  std::int64_t day = t - t % 86400;
  if (t < 0 && t % 86400 != 0) day -= 86400;
  return day;
}

PreparedDataset prepare_dataset(const StackSet& stacks, const DatasetOptions& opts) {
  if (opts.use_wind && !stacks.has_wind())
    throw IngestionError("wind channels requested but no wind stacks are available");
  PreparedDataset ds;
  ds.options = opts;
  ds.policy.train_end = train_end_for(stacks.crf, opts.train_fraction);

  std::vector<WindowRef> kept, train_windows;
  for (const auto& w : candidate_windows(stacks, opts.lead_steps)) {
    if (check_window(stacks, w, opts.lead_steps, opts.use_wind, ds.scheme) != RejectReason::None)
      continue;
    const auto kind = assign_split(w.t_last, opts.lead_steps, ds.policy);
    if (!kind) continue;
    kept.push_back(w);
    if (*kind == SplitKind::Train) train_windows.push_back(w);
  }
  if (train_windows.empty()) throw DomainError("no accepted sequence falls in the training period");
  ds.stats = compute_norm_stats(stacks, train_windows, opts.lead_steps);

  std::vector<SamplePtr> samples;
  samples.reserve(kept.size());
  for (const auto& w : kept) {
    samples.push_back(std::make_shared<const SequenceSample>(
        make_sample(stacks, w, ds.scheme, ds.stats, opts.lead_steps, opts.use_wind)));
  }
  ds.split = split_weeks(samples, ds.policy);
  ds.split.eta = 0.0;
  return ds;
}

DatasetSplit oversampled_split(const PreparedDataset& ds, OversampleReport* report) {
  return oversample(ds.split, ds.options.eta, ds.options.seed, report);
}

// ---- models ---------------------------------------------------------------

nn::UNetConfig unet_config_from(const Config& c, int in_channels, int n_classes) {
  nn::UNetConfig u;
  u.in_channels = in_channels;
  u.n_classes = n_classes;
  u.base_width = static_cast<int>(c.get_int("model.base_width", u.base_width));
  u.depth = static_cast<int>(c.get_int("model.depth", u.depth));
  u.validate();
  return u;
}

ClassMap decide(const ProbMap& probs) {
  ClassMap out(probs.n_classes, probs.height, probs.width);
  for (std::size_t i = 0; i < probs.probs.size(); ++i) out.labels[i] = probs.probs[i] >= 0.5f;
  return out;
}

namespace {

std::vector<float> physical_channel(const SequenceSample& s, int c, const NormStats& stats) {
  const auto plane = s.channel(c);
  std::vector<float> out(plane.size());
  for (std::size_t i = 0; i < plane.size(); ++i) out[i] = denormalize_crf_value(plane[i], stats);
  return out;
}

}  // namespace

std::vector<ProbMap> predict_persistence(std::span<const SamplePtr> samples,
                                         const PreparedDataset& ds) {
  std::vector<ProbMap> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    const auto last = physical_channel(*s, kFramesPerSequence - 1, ds.stats);
    out.push_back(to_prob_map(threshold_classes(last, s->height, s->width, ds.scheme)));
  }
  return out;
}

std::vector<ProbMap> predict_optflow(std::span<const SamplePtr> samples, const PreparedDataset& ds,
                                     const FlowConfig& cfg) {
  std::vector<ProbMap> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    std::vector<std::vector<float>> frames;
    const int first = kFramesPerSequence - 1 - cfg.pairs;
    for (int c = std::max(first, 0); c < kFramesPerSequence; ++c)
      frames.push_back(physical_channel(*s, c, ds.stats));
    const FlowForecast f =
        of_forecast(frames, s->height, s->width, cfg, s->lead_steps, ds.scheme, ds.stats);
    out.push_back(f.probs);
  }
  return out;
}

ModelEvaluation evaluate_predictions(const std::string& name, std::vector<ProbMap> predictions,
                                     std::span<const SamplePtr> samples, int n_boot,
                                     std::uint64_t seed) {
  if (predictions.size() != samples.size())
    throw ShapeMismatch("one prediction per sample required");
  if (samples.empty()) throw DomainError("nothing to evaluate: the sample list is empty");
  ModelEvaluation e;
  e.name = name;
  e.pooled = ConfusionCounts(samples.front()->target.n_classes);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    e.per_sample.push_back(confusion(predictions[i], samples[i]->target));
    e.pooled.merge(e.per_sample.back());
  }
  e.bootstrap = bootstrap_stats(e.per_sample, n_boot, seed);
  e.predictions = std::move(predictions);
  return e;
}

TrainedModel train_model(const PreparedDataset& ds, const Config& c, bool use_wind,
                         const EpochCallback& on_epoch) {
  if (use_wind && !ds.options.use_wind)
    throw ContractViolation("dataset was built without wind channels");
  TrainConfig tc = TrainConfig::from_config(c);
  OversampleReport report;
  const DatasetSplit split = oversampled_split(ds, &report);
  const int channels = use_wind ? 3 * kFramesPerSequence : kFramesPerSequence;
  TrainedModel out{nn::UNet<float>(unet_config_from(c, channels, ds.scheme.n_classes()), tc.seed),
                   {}, report};
  out.result = train(out.model, split, tc, on_epoch);
  return out;
}

// ---- commands -------------------------------------------------------------

void cmd_synth(const Config& c, const fs::path& out_dir) {
  const auto t0 = Clock::now();
  const SynthConfig sc = SynthConfig::from_config(c);
  prepare_out_dir(out_dir);
  write_stacks(out_dir, stacks_from_synth(synth_generate(sc)));
  write_run_manifest(out_dir, {"synth", c.snapshot(), sc.seed, {},
                               {out_dir / "crf.pgs", out_dir / "u.pgs", out_dir / "v.pgs"},
                               seconds_since(t0)});
}

namespace {

std::string dataset_cfg_text(const fs::path& stacks_dir, const DatasetOptions& o) {
  return "dataset.stacks=" + fs::absolute(stacks_dir).lexically_normal().string() + "\n" +
         "dataset.lead_minutes=" + std::to_string(5 * o.lead_steps) + "\n" +
         "dataset.use_wind=" + (o.use_wind ? "true" : "false") + "\n" +
         "dataset.eta=" + fmt("%.17g", o.eta) + "\n" +
         "dataset.train_fraction=" + fmt("%.17g", o.train_fraction) + "\n" +
         "seed=" + std::to_string(o.seed) + "\n";
}

std::string oversampling_text(const OversampleReport& r, double eta) {
  std::string out = "eta=" + fmt("%.6f", eta) + "\n";
  out += "positives_before=" + std::to_string(r.positives_before) + "\n";
  out += "total_before=" + std::to_string(r.total_before) + "\n";
  out += "fraction_before=" + fmt("%.6f", r.fraction_before()) + "\n";
  out += "positives_after=" + std::to_string(r.positives_after) + "\n";
  out += "total_after=" + std::to_string(r.total_after) + "\n";
  out += "fraction_after=" + fmt("%.6f", r.fraction_after()) + "\n";
  if (!r.warning.empty()) out += "warning=" + r.warning + "\n";
  return out;
}

}  // namespace

void cmd_dataset(const Config& c, const fs::path& stacks_dir, const fs::path& out_dir) {
  const auto t0 = Clock::now();
  const DatasetOptions opts = DatasetOptions::from_config(c);
  StackSet stacks = read_stacks(stacks_dir);
  if (!opts.use_wind) {
    stacks.u.reset();
    stacks.v.reset();
  }
  const PreparedDataset ds = prepare_dataset(stacks, opts);
  OversampleReport report;
  oversampled_split(ds, &report);

  prepare_out_dir(out_dir);
  io::write_text(out_dir / "dataset.cfg", dataset_cfg_text(stacks_dir, opts));
  io::write_text(out_dir / "normstats.txt", norm_stats_text(ds.stats));
  io::write_text(out_dir / "manifest.csv", manifest_csv(ds.split));
  io::write_text(out_dir / "oversampling.txt", oversampling_text(report, opts.eta));
  write_run_manifest(out_dir, {"dataset", c.snapshot(), opts.seed, {stacks_dir},
                               {out_dir / "dataset.cfg", out_dir / "normstats.txt",
                                out_dir / "manifest.csv", out_dir / "oversampling.txt"},
                               seconds_since(t0)});
}

PreparedDataset load_dataset(const fs::path& dataset_dir, StackSet* stacks_out) {
  const Config dc = Config::from_file(dataset_dir / "dataset.cfg");
  const DatasetOptions opts = DatasetOptions::from_config(dc);
  const std::string stacks_dir = dc.get_string("dataset.stacks", "");
  if (stacks_dir.empty()) throw FormatError("dataset.cfg lacks dataset.stacks");
  StackSet stacks = read_stacks(stacks_dir);
  if (!opts.use_wind) {
    stacks.u.reset();
    stacks.v.reset();
  }
  PreparedDataset ds = prepare_dataset(stacks, opts);
  if (norm_stats_text(ds.stats) != io::read_text(dataset_dir / "normstats.txt") ||
      manifest_csv(ds.split) != io::read_text(dataset_dir / "manifest.csv"))
    throw FormatError("dataset " + dataset_dir.string() +
                      " no longer matches its stacks; rebuild it");
  if (stacks_out) *stacks_out = std::move(stacks);
  return ds;
}

void cmd_train(const Config& c, const fs::path& dataset_dir, const fs::path& out_dir) {
  const auto t0 = Clock::now();
  PreparedDataset ds = load_dataset(dataset_dir);
  if (c.has("dataset.eta")) ds.options.eta = c.get_double("dataset.eta", ds.options.eta);
  const bool use_wind = ds.options.use_wind && c.get_bool("model.use_wind", true);
  const bool compare_natural = c.get_bool("train.compare_natural", false);
  prepare_out_dir(out_dir);

  const TrainedModel tm = train_model(ds, c, use_wind);
  nn::save_checkpoint(out_dir / "model.pnc", tm.model);
  io::write_text(out_dir / "history.csv", history_csv(tm.result));
  std::string summary = "best_epoch=" + std::to_string(tm.result.best_epoch) + "\n" +
                        "steps=" + std::to_string(tm.result.steps) + "\n" +
                        "in_channels=" + std::to_string(tm.model.config().in_channels) + "\n" +
                        oversampling_text(tm.oversampling, ds.options.eta);
  std::vector<fs::path> outputs{out_dir / "model.pnc", out_dir / "history.csv",
                                out_dir / "summary.txt"};
  if (compare_natural) {
    PreparedDataset natural = ds;
    natural.options.eta = 0.0;
    const TrainedModel tn = train_model(natural, c, use_wind);
    io::write_text(out_dir / "history_natural.csv", history_csv(tn.result));
    outputs.push_back(out_dir / "history_natural.csv");
  }
  io::write_text(out_dir / "summary.txt", summary);
  const TrainConfig tc = TrainConfig::from_config(c);
  write_run_manifest(out_dir, {"train", c.snapshot(), tc.seed, {dataset_dir}, outputs,
                               seconds_since(t0)});
}

void cmd_eval(const Config& c, const fs::path& dataset_dir, const std::vector<fs::path>& checkpoints,
              const std::vector<std::string>& baselines, const fs::path& out_dir) {
  const auto t0 = Clock::now();
  if (checkpoints.empty() && baselines.empty())
    throw ConfigError("nothing to evaluate: pass --checkpoint and/or --baseline");
  const PreparedDataset ds = load_dataset(dataset_dir);
  const std::span<const SamplePtr> test = ds.split.test;
  if (test.empty()) throw DomainError("the test split is empty");
  const int n_boot = static_cast<int>(c.get_int("eval.n_boot", 1000));
  const std::uint64_t seed = c.get_u64("seed", 1);
  const int n_panels = static_cast<int>(c.get_int("eval.panels", 4));
  const int lead_minutes = 5 * ds.options.lead_steps;
  const int batch = static_cast<int>(c.get_int("train.batch_size", 16));
  const FlowConfig fc = FlowConfig::from_config(c);

  // Resolve everything before writing anything.
  std::vector<std::pair<std::string, std::function<std::vector<ProbMap>()>>> jobs;
  std::set<std::string> names;
  auto unique = [&](std::string name) {
    std::string n = name;
    for (int k = 2; names.count(n); ++k) n = name + "#" + std::to_string(k);
    names.insert(n);
    return n;
  };
  for (const auto& ck : checkpoints) {
    auto model = std::make_shared<nn::UNet<float>>(nn::load_checkpoint(ck));
    const int ch = model->config().in_channels;
    if (ch != kFramesPerSequence && ch != 3 * kFramesPerSequence)
      throw ShapeMismatch("checkpoint expects " + std::to_string(ch) + " input channels");
    if (ch > test.front()->channels)
      throw ShapeMismatch("checkpoint needs wind channels the dataset does not have");
    jobs.emplace_back(unique(ch == kFramesPerSequence ? "NN/R" : "NN"),
                      [model, test, batch] { return predict(*model, test, batch); });
  }
  for (const auto& b : baselines) {
    if (b == "persistence") {
      jobs.emplace_back(unique("PER"), [&] { return predict_persistence(test, ds); });
    } else if (b == "optflow") {
      jobs.emplace_back(unique("OF"), [&] { return predict_optflow(test, ds, fc); });
    } else {
      throw ConfigError("unknown baseline '" + b + "' (expected persistence or optflow)");
    }
  }

  prepare_out_dir(out_dir);
  fs::create_directories(out_dir / "panels");
  std::vector<ScoreRow> rows;
  std::vector<fs::path> outputs{out_dir / "scores.csv"};
  for (auto& [name, run] : jobs) {
    const ModelEvaluation e = evaluate_predictions(name, run(), test, n_boot, seed);
    const auto r = score_rows(name, lead_minutes, e.bootstrap);
    rows.insert(rows.end(), r.begin(), r.end());
    std::string stem = name;
    std::replace(stem.begin(), stem.end(), '/', '_');
    std::replace(stem.begin(), stem.end(), '#', '_');
    for (int k = 0; k < n_panels && k < static_cast<int>(test.size()); ++k) {
      const fs::path p = out_dir / "panels" / (stem + "_" + std::to_string(k) + ".png");
      write_png(p, render_panel(test[static_cast<std::size_t>(k)]->target,
                                decide(e.predictions[static_cast<std::size_t>(k)])));
    }
  }
  io::write_text(out_dir / "scores.csv", score_csv(rows));
  std::vector<fs::path> inputs{dataset_dir};
  inputs.insert(inputs.end(), checkpoints.begin(), checkpoints.end());
  write_run_manifest(out_dir, {"eval", c.snapshot(), seed, inputs, outputs, seconds_since(t0)});
}

void cmd_leadsweep(const Config& c, const fs::path& stacks_dir, const std::vector<int>& lead_minutes,
                   const fs::path& out_dir) {
  const auto t0 = Clock::now();
  if (lead_minutes.empty()) throw ConfigError("lead list is empty");
  for (std::size_t i = 0; i < lead_minutes.size(); ++i) {
    lead_steps_from_minutes(lead_minutes[i]);
    if (i > 0 && lead_minutes[i] <= lead_minutes[i - 1])
      throw ConfigError("lead times must be strictly increasing");
  }
  DatasetOptions base = DatasetOptions::from_config(c);
  StackSet stacks = read_stacks(stacks_dir);
  if (!base.use_wind) {
    stacks.u.reset();
    stacks.v.reset();
  }
  const int n_boot = static_cast<int>(c.get_int("eval.n_boot", 1000));
  const FlowConfig fc = FlowConfig::from_config(c);
  const int batch = static_cast<int>(c.get_int("train.batch_size", 16));
  prepare_out_dir(out_dir);

  std::string csv = "model,lead_minutes,class,f1_mean,f1_std\n";
  for (int lead : lead_minutes) {
    DatasetOptions opts = base;
    opts.lead_steps = lead_steps_from_minutes(lead);
    const PreparedDataset ds = prepare_dataset(stacks, opts);
    const std::span<const SamplePtr> test = ds.split.test;
    if (test.empty()) throw DomainError("empty test split at lead " + std::to_string(lead));
    TrainedModel tm = train_model(ds, c, opts.use_wind);
    std::vector<ModelEvaluation> evals;
    evals.push_back(evaluate_predictions(opts.use_wind ? "NN" : "NN/R",
                                         predict(tm.model, test, batch), test, n_boot, opts.seed));
    evals.push_back(evaluate_predictions("PER", predict_persistence(test, ds), test, n_boot,
                                         opts.seed));
    evals.push_back(evaluate_predictions("OF", predict_optflow(test, ds, fc), test, n_boot,
                                         opts.seed));
    for (const auto& e : evals) {
      for (int m = 0; m < ds.scheme.n_classes(); ++m) {
        const ScoreSummary& s = e.bootstrap.at(m, Metric::F1);
        csv += e.name + "," + std::to_string(lead) + "," + std::to_string(m + 1) + "," +
               (s.mean ? fmt("%.6f", *s.mean) : "NA") + "," + (s.std ? fmt("%.6f", *s.std) : "NA") +
               "\n";
      }
    }
  }
  io::write_text(out_dir / "leadsweep.csv", csv);
  write_run_manifest(out_dir, {"leadsweep", c.snapshot(), base.seed, {stacks_dir},
                               {out_dir / "leadsweep.csv"}, seconds_since(t0)});
}

}  // namespace nowcast

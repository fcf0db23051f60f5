#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nowcast/grid.hpp"

namespace nowcast {

struct ClassCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  ClassCounts& operator+=(const ClassCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ClassCounts&) const = default;
};

/// Per-class contingency tables. Merging is associative and commutative.
struct ConfusionCounts {
  std::vector<ClassCounts> classes;

  ConfusionCounts() = default;
  explicit ConfusionCounts(int n_classes) : classes(static_cast<std::size_t>(n_classes)) {}

  int n_classes() const { return static_cast<int>(classes.size()); }
  ConfusionCounts& merge(const ConfusionCounts& other);
  bool operator==(const ConfusionCounts&) const = default;
};

/// A pixel is predicted positive iff P >= 0.5. Pixels invalid in the
/// target are skipped.
void accumulate(const ProbMap& pred, const ClassMap& target, ConfusionCounts& counts);
ConfusionCounts confusion(const ProbMap& pred, const ClassMap& target);

/// Scores are std::nullopt when their denominator vanishes.
using Score = std::optional<double>;

Score threat_score(const ConfusionCounts& c, int m);
Score bias(const ConfusionCounts& c, int m);
Score precision(const ConfusionCounts& c, int m);
Score recall(const ConfusionCounts& c, int m);
Score f1_score(const ConfusionCounts& c, int m);

struct PrecisionRecallF1 {
  Score precision;
  Score recall;
  Score f1;
};
PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& c, int m);

enum class Metric { F1, TS, BIAS };
std::string_view to_string(Metric m);
Score compute_metric(Metric metric, const ConfusionCounts& c, int m);

struct ScoreSummary {
  Score mean;
  Score std;  // population standard deviation over replicates
  int n_defined = 0;
};

/// Per class, per metric (indexed [class][Metric]).
struct BootstrapResult {
  std::vector<std::vector<ScoreSummary>> summary;

  const ScoreSummary& at(int m, Metric metric) const {
    return summary[static_cast<std::size_t>(m)][static_cast<std::size_t>(metric)];
  }
};

/// Resamples whole sequences with replacement, pools their counts per
/// replicate and summarizes the scores across replicates. Replicates where
/// a score is undefined are left out of that score's summary.
BootstrapResult bootstrap_stats(std::span<const ConfusionCounts> per_sample, int n_boot,
                                std::uint64_t seed);

/// Same summary over all n^n ordered resamples; only for tiny n.
BootstrapResult bootstrap_exhaustive(std::span<const ConfusionCounts> per_sample);

/// Rows of the score table: model,lead_minutes,class,metric,mean,std.
struct ScoreRow {
  std::string model;
  int lead_minutes = 0;
  int class_index = 1;  // 1-based, as reported
  Metric metric = Metric::F1;
  ScoreSummary value;
};

std::vector<ScoreRow> score_rows(const std::string& model, int lead_minutes,
                                 const BootstrapResult& result);
std::string score_csv(std::span<const ScoreRow> rows);

}  // namespace nowcast

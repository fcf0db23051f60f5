#include "nowcast/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include "nowcast/error.hpp"

namespace nowcast {

ConfusionCounts& ConfusionCounts::merge(const ConfusionCounts& other) {
  if (classes.empty()) classes.resize(other.classes.size());
  if (other.classes.size() != classes.size()) throw ShapeMismatch("class counts differ");
  for (std::size_t m = 0; m < classes.size(); ++m) classes[m] += other.classes[m];
  return *this;
}

void accumulate(const ProbMap& pred, const ClassMap& target, ConfusionCounts& counts) {
  if (pred.n_classes != target.n_classes || pred.height != target.height ||
      pred.width != target.width)
    throw ShapeMismatch("prediction and target shapes differ");
  if (counts.classes.empty()) counts.classes.resize(static_cast<std::size_t>(target.n_classes));
  if (counts.n_classes() != target.n_classes) throw ShapeMismatch("counts have wrong class count");

  const std::size_t plane = target.plane();
  for (int m = 0; m < target.n_classes; ++m) {
    ClassCounts& c = counts.classes[static_cast<std::size_t>(m)];
    const float* p = pred.probs.data() + m * plane;
    const std::uint8_t* t = target.labels.data() + m * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      if (!target.valid[i]) continue;
      const bool yes = p[i] >= 0.5f;
      if (t[i]) {
        yes ? ++c.tp : ++c.fn;
      } else {
        yes ? ++c.fp : ++c.tn;
      }
    }
  }
}

ConfusionCounts confusion(const ProbMap& pred, const ClassMap& target) {
  ConfusionCounts c(target.n_classes);
  accumulate(pred, target, c);
  return c;
}

namespace {

Score ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

const ClassCounts& pick(const ConfusionCounts& c, int m) {
  if (m < 0 || m >= c.n_classes()) throw ContractViolation("class index out of range");
  return c.classes[static_cast<std::size_t>(m)];
}

}  // namespace

Score threat_score(const ConfusionCounts& c, int m) {
  const auto& k = pick(c, m);
  return ratio(k.tp, k.tp + k.fp + k.fn);
}

Score bias(const ConfusionCounts& c, int m) {
  const auto& k = pick(c, m);
  return ratio(k.tp + k.fp, k.tp + k.fn);
}

Score precision(const ConfusionCounts& c, int m) {
  const auto& k = pick(c, m);
  return ratio(k.tp, k.tp + k.fp);
}

Score recall(const ConfusionCounts& c, int m) {
  const auto& k = pick(c, m);
  return ratio(k.tp, k.tp + k.fn);
}

Score f1_score(const ConfusionCounts& c, int m) {
  const auto p = precision(c, m);
  const auto r = recall(c, m);
  if (!p || !r) return std::nullopt;
  // Both defined but zero (tp = 0): the harmonic mean tends to 0.
  if (*p + *r == 0.0) return 0.0;
  return 2.0 * *p * *r / (*p + *r);
}

PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& c, int m) {
  return {precision(c, m), recall(c, m), f1_score(c, m)};
}

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::F1: return "F1";
    case Metric::TS: return "TS";
    case Metric::BIAS: return "BIAS";
  }
  return "?";
}

Score compute_metric(Metric metric, const ConfusionCounts& c, int m) {
  switch (metric) {
    case Metric::F1: return f1_score(c, m);
    case Metric::TS: return threat_score(c, m);
    case Metric::BIAS: return bias(c, m);
  }
  return std::nullopt;
}

namespace {

constexpr Metric kMetrics[] = {Metric::F1, Metric::TS, Metric::BIAS};

// Collects replicate scores into per-class, per-metric summaries. Two-pass
// moments keep the spread of identical replicates at exactly zero.
class Summarizer {
 public:
  explicit Summarizer(int n_classes)
      : values_(static_cast<std::size_t>(n_classes) * 3), n_classes_(n_classes) {}

  void add(const ConfusionCounts& pooled) {
    for (int m = 0; m < n_classes_; ++m) {
      for (std::size_t k = 0; k < 3; ++k) {
        const auto s = compute_metric(kMetrics[k], pooled, m);
        if (s) values_[static_cast<std::size_t>(m) * 3 + k].push_back(*s);
      }
    }
  }

  BootstrapResult finish() const {
    BootstrapResult r;
    r.summary.assign(static_cast<std::size_t>(n_classes_), std::vector<ScoreSummary>(3));
    for (int m = 0; m < n_classes_; ++m) {
      for (std::size_t k = 0; k < 3; ++k) {
        const auto& v = values_[static_cast<std::size_t>(m) * 3 + k];
        ScoreSummary& s = r.summary[static_cast<std::size_t>(m)][k];
        s.n_defined = static_cast<int>(v.size());
        if (v.empty()) continue;
        double sum = 0.0;
        for (double x : v) sum += x;
        const double mean = sum / static_cast<double>(v.size());
        double sq = 0.0;
        for (double x : v) sq += (x - mean) * (x - mean);
        s.mean = mean;
        s.std = std::sqrt(sq / static_cast<double>(v.size()));
      }
    }
    return r;
  }

 private:
  std::vector<std::vector<double>> values_;
  int n_classes_;
};

}  // namespace

BootstrapResult bootstrap_stats(std::span<const ConfusionCounts> per_sample, int n_boot,
                                std::uint64_t seed) {
  if (per_sample.empty()) throw ContractViolation("bootstrap needs at least one sample");
  if (n_boot < 1) throw ContractViolation("n_boot must be >= 1");
  const int n_classes = per_sample.front().n_classes();
  Summarizer summary(n_classes);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, per_sample.size() - 1);
  for (int b = 0; b < n_boot; ++b) {
    ConfusionCounts pooled(n_classes);
    for (std::size_t i = 0; i < per_sample.size(); ++i) pooled.merge(per_sample[pick(rng)]);
    summary.add(pooled);
  }
  return summary.finish();
}

BootstrapResult bootstrap_exhaustive(std::span<const ConfusionCounts> per_sample) {
  const std::size_t n = per_sample.size();
  if (n == 0) throw ContractViolation("bootstrap needs at least one sample");
  if (n > 8) throw ContractViolation("exhaustive bootstrap is limited to 8 samples");
  const int n_classes = per_sample.front().n_classes();
  Summarizer summary(n_classes);
  std::vector<std::size_t> idx(n, 0);
  while (true) {
    ConfusionCounts pooled(n_classes);
    for (std::size_t i : idx) pooled.merge(per_sample[i]);
    summary.add(pooled);
    std::size_t d = 0;
    while (d < n && ++idx[d] == n) idx[d++] = 0;
    if (d == n) break;
  }
  return summary.finish();
}

std::vector<ScoreRow> score_rows(const std::string& model, int lead_minutes,
                                 const BootstrapResult& result) {
  std::vector<ScoreRow> rows;
  for (std::size_t m = 0; m < result.summary.size(); ++m) {
    for (Metric metric : kMetrics) {
      rows.push_back({model, lead_minutes, static_cast<int>(m) + 1, metric,
                      result.at(static_cast<int>(m), metric)});
    }
  }
  return rows;
}

std::string score_csv(std::span<const ScoreRow> rows) {
  std::string out = "model,lead_minutes,class,metric,mean,std\n";
  char buf[64];
  auto fmt = [&](const Score& s) -> std::string {
    if (!s) return "NA";
    std::snprintf(buf, sizeof buf, "%.6f", *s);
    return buf;
  };
  for (const auto& r : rows) {
    out += r.model + "," + std::to_string(r.lead_minutes) + "," + std::to_string(r.class_index) +
           "," + std::string(to_string(r.metric)) + "," + fmt(r.value.mean) + "," +
           fmt(r.value.std) + "\n";
  }
  return out;
}

}  // namespace nowcast

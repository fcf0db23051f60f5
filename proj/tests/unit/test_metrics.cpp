#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "nowcast/error.hpp"
#include "nowcast/metrics.hpp"

using namespace nowcast;

namespace {

ConfusionCounts counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn, std::uint64_t tn = 0) {
  ConfusionCounts c(1);
  c.classes[0] = {tp, tn, fp, fn};
  return c;
}

ProbMap probs(int h, int w, std::vector<float> p) {
  ProbMap m(1, h, w);
  m.probs = std::move(p);
  return m;
}

ClassMap labels(int h, int w, std::vector<std::uint8_t> l) {
  ClassMap m(1, h, w);
  m.labels = std::move(l);
  return m;
}

}  // namespace

TEST_CASE("accumulate examples") {
  const ConfusionCounts c = confusion(probs(2, 2, {1, 1, 0, 0}), labels(2, 2, {1, 0, 1, 0}));
  CHECK(c.classes[0] == ClassCounts{1, 1, 1, 1});

  const ConfusionCounts half = confusion(probs(1, 1, {0.5f}), labels(1, 1, {1}));
  CHECK(half.classes[0].tp == 1);
  const ConfusionCounts below = confusion(probs(1, 1, {0.4999999f}), labels(1, 1, {1}));
  CHECK(below.classes[0].fn == 1);

  const ClassMap t = labels(2, 2, {1, 0, 1, 1});
  const ConfusionCounts same = confusion(to_prob_map(t), t);
  CHECK(same.classes[0].fp == 0);
  CHECK(same.classes[0].fn == 0);

  ClassMap masked = labels(1, 2, {1, 1});
  masked.valid[1] = 0;
  CHECK(confusion(probs(1, 2, {1, 1}), masked).classes[0].total() == 1);
  CHECK_THROWS_AS(confusion(probs(1, 2, {1, 1}), labels(2, 1, {1, 1})), ShapeMismatch);
}

TEST_CASE("score formulas") {
  const ConfusionCounts c = counts(3, 1, 2);
  CHECK(*threat_score(c, 0) == doctest::Approx(0.5));
  CHECK(*bias(c, 0) == doctest::Approx(0.8));
  const auto prf = precision_recall_f1(c, 0);
  CHECK(*prf.precision == doctest::Approx(0.75));
  CHECK(*prf.recall == doctest::Approx(0.6));
  CHECK(*prf.f1 == doctest::Approx(2 * 0.45 / 1.35));

  const ConfusionCounts perfect = counts(5, 0, 0, 7);
  CHECK(*threat_score(perfect, 0) == 1.0);
  CHECK(*bias(perfect, 0) == 1.0);
  CHECK(*precision(perfect, 0) == 1.0);
  CHECK(*recall(perfect, 0) == 1.0);
  CHECK(*f1_score(perfect, 0) == 1.0);

  const ConfusionCounts empty = counts(0, 0, 0, 9);
  CHECK_FALSE(threat_score(empty, 0).has_value());
  CHECK_FALSE(bias(empty, 0).has_value());
  CHECK_FALSE(f1_score(empty, 0).has_value());

  CHECK(*f1_score(counts(0, 2, 3), 0) == 0.0);
  CHECK_FALSE(precision(counts(0, 0, 3), 0).has_value());
  CHECK_FALSE(f1_score(counts(0, 0, 3), 0).has_value());
}

TEST_CASE("bias with no observed positives is undefined") {
  CHECK_FALSE(bias(counts(0, 4, 0), 0).has_value());
}

TEST_CASE("score identities on random counters") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::uint64_t> d(0, 50);
  for (int i = 0; i < 2000; ++i) {
    const ConfusionCounts c = counts(d(rng), d(rng), d(rng), d(rng));
    const auto ts = threat_score(c, 0);
    const auto p = precision(c, 0), r = recall(c, 0);
    if (ts && p) CHECK(*ts <= *p + 1e-15);
    if (ts && r) CHECK(*ts <= *r + 1e-15);

    ConfusionCounts more = c;
    ++more.classes[0].tp;
    for (auto f : {threat_score, precision, recall, f1_score}) {
      const auto before = f(c, 0), after = f(more, 0);
      REQUIRE(after.has_value());
      if (before) CHECK(*after >= *before - 1e-15);
    }
  }
  for (std::uint64_t tp = 0; tp < 20; ++tp)
    for (std::uint64_t e = 0; e < 20; ++e) {
      const ConfusionCounts c = counts(tp, e, e);
      const auto ts = threat_score(c, 0), f1 = f1_score(c, 0);
      if (ts && f1) CHECK(*f1 == doctest::Approx(2 * *ts / (1 + *ts)).epsilon(1e-12));
    }
}

TEST_CASE("pooling is linear and merge is associative") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0, 1);
  std::bernoulli_distribution b(0.4);
  ConfusionCounts pooled(3), a(3), bsum(3);
  for (int k = 0; k < 20; ++k) {
    ProbMap p(3, 4, 5);
    ClassMap t(3, 4, 5);
    for (auto& x : p.probs) x = u(rng);
    for (auto& x : t.labels) x = b(rng);
    accumulate(p, t, pooled);
    accumulate(p, t, k < 7 ? a : bsum);
  }
  ConfusionCounts merged = a;
  merged.merge(bsum);
  CHECK(merged == pooled);
  ConfusionCounts other = bsum;
  other.merge(a);
  CHECK(other == pooled);
}

TEST_CASE("bootstrap: identical samples give zero spread") {
  std::vector<ConfusionCounts> xs(6, counts(3, 1, 2));
  const BootstrapResult r = bootstrap_stats(xs, 100, 1);
  CHECK(*r.at(0, Metric::F1).mean == doctest::Approx(2 * 0.45 / 1.35).epsilon(1e-12));
  CHECK(*r.at(0, Metric::F1).std == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(*r.at(0, Metric::TS).mean == doctest::Approx(0.5));
  CHECK(*r.at(0, Metric::BIAS).mean == doctest::Approx(0.8));
  CHECK(r.at(0, Metric::F1).n_defined == 100);
}

TEST_CASE("bootstrap is seed-deterministic") {
  std::vector<ConfusionCounts> xs{counts(3, 1, 2), counts(0, 4, 1), counts(7, 0, 0), counts(1, 1, 5)};
  const BootstrapResult a = bootstrap_stats(xs, 100, 9), b = bootstrap_stats(xs, 100, 9);
  const BootstrapResult c = bootstrap_stats(xs, 100, 10);
  CHECK(*a.at(0, Metric::F1).mean == *b.at(0, Metric::F1).mean);
  CHECK(*a.at(0, Metric::TS).std == *b.at(0, Metric::TS).std);
  CHECK(*a.at(0, Metric::F1).mean != *c.at(0, Metric::F1).mean);
  CHECK_THROWS_AS(bootstrap_stats({}, 10, 1), ContractViolation);
}

TEST_CASE("exhaustive bootstrap on two samples matches hand enumeration") {
  const ConfusionCounts x = counts(3, 1, 2), y = counts(1, 3, 0);
  // Resamples (x,x), (x,y), (y,x), (y,y).
  auto f1 = [](double tp, double fp, double fn) { return 2 * tp / (2 * tp + fp + fn); };
  const double vals[] = {f1(6, 2, 4), f1(4, 4, 2), f1(4, 4, 2), f1(2, 6, 0)};
  double mean = 0;
  for (double v : vals) mean += v / 4;
  double var = 0;
  for (double v : vals) var += (v - mean) * (v - mean) / 4;
  const BootstrapResult r = bootstrap_exhaustive(std::vector{x, y});
  CHECK(std::abs(*r.at(0, Metric::F1).mean - mean) < 1e-12);
  CHECK(std::abs(*r.at(0, Metric::F1).std - std::sqrt(var)) < 1e-12);
  CHECK_THROWS_AS(bootstrap_exhaustive(std::vector<ConfusionCounts>(9, x)), ContractViolation);
}

TEST_CASE("undefined replicates are left out of the summary") {
  const ConfusionCounts dry = counts(0, 0, 0, 4), hit = counts(2, 0, 0, 2);
  const BootstrapResult r = bootstrap_exhaustive(std::vector{dry, hit});
  // Only (dry, dry) is undefined.
  CHECK(r.at(0, Metric::F1).n_defined == 3);
  CHECK(*r.at(0, Metric::F1).mean == doctest::Approx(1.0));
  const BootstrapResult all_dry = bootstrap_exhaustive(std::vector{dry});
  CHECK_FALSE(all_dry.at(0, Metric::F1).mean.has_value());
}

TEST_CASE("score table CSV") {
  ConfusionCounts c(3);
  c.classes[0] = {3, 0, 1, 2};
  c.classes[1] = {1, 0, 0, 0};
  const BootstrapResult r = bootstrap_stats(std::vector{c}, 10, 1);
  const auto rows = score_rows("PER", 30, r);
  CHECK(rows.size() == 9);  // classes x metrics
  const std::string csv = score_csv(rows);
  CHECK(csv.rfind("model,lead_minutes,class,metric,mean,std\n", 0) == 0);
  CHECK(csv.find("PER,30,1,F1,0.666667,0.000000\n") != std::string::npos);
  CHECK(csv.find("PER,30,3,F1,NA,NA\n") != std::string::npos);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>

#include "nowcast/dataset.hpp"
#include "nowcast/error.hpp"

using namespace nowcast;

namespace {

constexpr std::int64_t kT0 = 1451606400;
const float kNaN = std::numeric_limits<float>::quiet_NaN();

GridStack stack(Variable var, int frames, float value, int h = 4, int w = 4,
                std::int64_t t0 = kT0) {
  GridStack s;
  s.variable = var;
  s.spec = GridSpec{h, w, 0, 0, 0.01, 0.01};
  for (int k = 0; k < frames; ++k) s.timestamps.push_back(t0 + 300 * k);
  s.values.assign(static_cast<std::size_t>(frames) * h * w, value);
  return s;
}

StackSet rainy(int frames, bool wind = true) {
  StackSet s;
  s.crf = stack(Variable::CRF, frames, 0.3f);
  if (wind) {
    s.u = stack(Variable::U, frames, 1.0f);
    s.v = stack(Variable::V, frames, -1.0f);
  }
  return s;
}

NormStats unit_stats() {
  NormStats n;
  n.max_crf = 1.0;
  return n;
}

SamplePtr sample_at(std::int64_t t_last, bool positive, int lead = 6) {
  auto s = std::make_shared<SequenceSample>();
  s->channels = 12;
  s->height = s->width = 2;
  s->input.assign(12 * 4, 0.5f);
  s->target = ClassMap(3, 2, 2);
  s->target.labels[0] = 1;
  if (positive) s->target.labels[2 * 4] = s->target.labels[4] = 1;
  s->t_last = t_last;
  s->lead_steps = lead;
  return s;
}

}  // namespace

TEST_CASE("24 frames plus target frames at lead 6 give two sequences") {
  const StackSet s = rainy(24 + 6);
  CHECK(candidate_windows(s, 6).size() == 2);
  const auto seqs = build_sequences(s, ClassScheme{}, unit_stats(), 6, true);
  REQUIRE(seqs.size() == 2);
  CHECK(seqs[0].channels == 36);
  CHECK(seqs[0].t_last == kT0 + 11 * 300);
  CHECK(seqs[1].t_last == kT0 + 23 * 300);
  // Without the trailing target frames only the first hour qualifies.
  CHECK(candidate_windows(rainy(24), 6).size() == 1);
}

TEST_CASE("sequence count is floor((F - p) / 12) without rejections") {
  for (int frames : {12, 17, 18, 29, 30, 31, 54, 60}) {
    for (int lead : {0, 1, 6, 12}) {
      const std::size_t expected = frames >= lead ? static_cast<std::size_t>((frames - lead) / 12) : 0;
      CHECK(build_sequences(rainy(frames), ClassScheme{}, unit_stats(), lead, true).size() ==
            expected);
    }
  }
}

TEST_CASE("inputs are normalized, targets are thresholded physical values") {
  StackSet s = rainy(18);
  s.crf.values[static_cast<std::size_t>(17) * 16 + 5] = 0.0f;  // target frame pixel 5 dry
  NormStats st = unit_stats();
  st.max_crf = 0.6;
  st.mu_u = 0.5;
  st.sigma_u = 2.0;
  const auto seqs = build_sequences(s, ClassScheme{}, st, 6, true);
  REQUIRE(seqs.size() == 1);
  const auto& q = seqs[0];
  CHECK(q.input[0] == doctest::Approx(std::log1p(0.3) / std::log1p(0.6)));
  CHECK(q.channel(12)[0] == doctest::Approx(0.25));  // (1 - 0.5) / 2
  CHECK(q.channel(24)[0] == doctest::Approx(-1.0));
  CHECK(q.target.at(2, 0, 0) == 1);
  CHECK(q.target.at(0, 1, 1) == 0);
}

TEST_CASE("rain-only sequences have 12 channels") {
  const auto seqs = build_sequences(rainy(18, false), ClassScheme{}, unit_stats(), 6, false);
  REQUIRE(seqs.size() == 1);
  CHECK(seqs[0].channels == 12);
  CHECK(seqs[0].input.size() == 12u * 16u);
  CHECK_FALSE(seqs[0].has_wind());
}

TEST_CASE("windows with undefined data or a dry last frame are rejected") {
  SUBCASE("NaN in frame 3 of the first window") {
    StackSet s = rainy(30);
    s.crf.values[3 * 16 + 2] = kNaN;
    const auto seqs = build_sequences(s, ClassScheme{}, unit_stats(), 6, true);
    REQUIRE(seqs.size() == 1);
    CHECK(seqs[0].t_last == kT0 + 23 * 300);
  }
  SUBCASE("NaN in wind only matters when wind is used") {
    StackSet s = rainy(18);
    s.u->values[5] = kNaN;
    CHECK(build_sequences(s, ClassScheme{}, unit_stats(), 6, true).empty());
    CHECK(build_sequences(s, ClassScheme{}, unit_stats(), 6, false).size() == 1);
  }
  SUBCASE("last input frame all zero") {
    StackSet s = rainy(18);
    std::fill_n(s.crf.values.begin() + 11 * 16, 16, 0.0f);
    CHECK(check_window(s, candidate_windows(s, 6)[0], 6, true, ClassScheme{}) ==
          RejectReason::ClearLastFrame);
    CHECK(build_sequences(s, ClassScheme{}, unit_stats(), 6, true).empty());
  }
  SUBCASE("last frame below the first cutoff counts as dry") {
    StackSet s = rainy(18);
    std::fill_n(s.crf.values.begin() + 11 * 16, 16, 0.005f);
    CHECK(build_sequences(s, ClassScheme{}, unit_stats(), 6, true).empty());
  }
}

TEST_CASE("validate_sequence reasons") {
  const auto seqs = build_sequences(rainy(18), ClassScheme{}, unit_stats(), 6, true);
  REQUIRE(seqs.size() == 1);
  SequenceSample ok = seqs[0];
  CHECK(validate_sequence(ok, ClassScheme{}, unit_stats()).accepted);

  SequenceSample bad_target = ok;
  bad_target.target.valid[0] = 0;
  const auto r1 = validate_sequence(bad_target, ClassScheme{}, unit_stats());
  CHECK_FALSE(r1.accepted);
  CHECK(to_string(r1.reason) == "undefined-data");

  SequenceSample dry = ok;
  for (float& x : std::span<float>(dry.input).subspan(11 * 16, 16)) x = 0.0f;
  const auto r2 = validate_sequence(dry, ClassScheme{}, unit_stats());
  CHECK_FALSE(r2.accepted);
  CHECK(to_string(r2.reason) == "clear-last-frame");
}

TEST_CASE("misaligned or off-cadence stacks raise ingestion errors") {
  StackSet s = rainy(18);
  s.u->timestamps[3] += 300;
  CHECK_THROWS_AS(candidate_windows(s, 6), IngestionError);
  StackSet t = rainy(18, false);
  t.crf.timestamps[5] += 17;
  for (std::size_t k = 6; k < t.crf.timestamps.size(); ++k) t.crf.timestamps[k] += 17;
  CHECK_THROWS_AS(candidate_windows(t, 6), IngestionError);
}

TEST_CASE("a time gap breaks the run") {
  StackSet s = rainy(36, false);
  for (std::size_t k = 15; k < 36; ++k) s.crf.timestamps[k] += 3600;
  // Runs of 15 and 21 frames: one window each at lead 3.
  CHECK(candidate_windows(s, 3).size() == 2);
}

TEST_CASE("norm stats use the given windows only") {
  StackSet s = rainy(36);
  s.crf.values[static_cast<std::size_t>(20) * 16] = 9.0f;  // input of the second window only
  s.u->values[0] = 3.0f;
  const auto windows = candidate_windows(s, 6);
  REQUIRE(windows.size() == 2);
  const NormStats first = compute_norm_stats(s, std::span(windows).first(1), 6);
  CHECK(first.max_crf == doctest::Approx(0.3));
  // U over 12 frames * 16 cells with one 3.0 among 1.0s.
  const double n = 192.0, mu = (191.0 + 3.0) / n;
  CHECK(first.mu_u == doctest::Approx(mu));
  const double var = (191.0 * 1.0 + 9.0) / n - mu * mu;
  CHECK(first.sigma_u == doctest::Approx(std::sqrt(var)));
  CHECK(first.sigma_v == 1.0);  // constant component falls back to unit scale
  const NormStats both = compute_norm_stats(s, windows, 6);
  CHECK(both.max_crf == doctest::Approx(9.0));
}

TEST_CASE("wind alignment: spatial then temporal") {
  GridStack radar = stack(Variable::CRF, 3, 0.0f, 4, 4);
  GridStack wind;
  wind.variable = Variable::U;
  wind.spec = GridSpec{3, 3, -0.01, -0.01, 0.025, 0.025};
  wind.timestamps = {kT0 - 600, kT0 + 600};
  wind.values.resize(18);
  for (int k = 0; k < 2; ++k)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        wind.values[k * 9 + r * 3 + c] = static_cast<float>(10 * k + (-0.01 + c * 0.025) * 100);
  const GridStack a = align_to_radar(wind, radar);
  CHECK(a.timestamps == radar.timestamps);
  CHECK(a.spec.same_mesh(radar.spec));
  // Radar frame at t0 is halfway: 5 + 100 * lon.
  for (int c = 0; c < 4; ++c) CHECK(a.plane(0)[c] == doctest::Approx(5.0 + c * 1.0).epsilon(1e-5));
  CHECK(a.plane(2)[0] == doctest::Approx(10.0).epsilon(1e-5));  // exactly the second wind frame
}

TEST_CASE("split_weeks: training period, alternating weeks, buffers") {
  SplitPolicy p;
  p.train_end = kT0 + 14 * 86400;
  const std::int64_t week = 7 * 86400;
  const std::int64_t day = 86400;
  std::vector<SamplePtr> xs{
      sample_at(kT0 + 3 * day, false),                 // train
      sample_at(p.train_end - 1800, false),            // straddles the first cut
      sample_at(p.train_end + 3600 + 1800, false),     // inside the buffer
      sample_at(p.train_end + 2 * day, false),         // validation (week 1)
      sample_at(p.train_end + week + 2 * day, false),  // test (week 2)
      sample_at(p.train_end + 2 * week - 600, false),  // target crosses into week 3
      sample_at(p.train_end + 2 * week + day, false)}; // validation (week 3)
  const DatasetSplit s = split_weeks(xs, p);
  REQUIRE(s.train.size() == 1);
  REQUIRE(s.validation.size() == 2);
  REQUIRE(s.test.size() == 1);
  CHECK(s.validation[0] == xs[3]);
  CHECK(s.test[0] == xs[4]);
  CHECK(s.validation[1] == xs[6]);
  CHECK_THROWS(split_weeks({}, p));
}

TEST_CASE("split segments are disjoint with at least an hour between them") {
  SplitPolicy p;
  p.train_end = kT0 + 10 * 86400;
  std::vector<SamplePtr> xs;
  for (std::int64_t t = kT0 + 3600; t < kT0 + 40 * 86400; t += 900) xs.push_back(sample_at(t, false));
  const DatasetSplit s = split_weeks(xs, p);
  std::vector<std::tuple<std::int64_t, std::int64_t, int>> spans;
  for (auto [list, id] : {std::pair{&s.train, 0}, {&s.validation, 1}, {&s.test, 2}})
    for (const auto& x : *list) {
      const auto [b, e] = sample_span(x->t_last, x->lead_steps);
      spans.emplace_back(b, e, id);
    }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) {
    const auto& [b0, e0, id0] = spans[i - 1];
    const auto& [b1, e1, id1] = spans[i];
    if (id0 != id1) CHECK(b1 - e0 >= 3600);
  }
  // Everything before the cut is training, nothing else.
  SplitPolicy all = p;
  all.train_end = kT0 + 100 * 86400;
  const DatasetSplit t = split_weeks(xs, all);
  CHECK(t.validation.empty());
  CHECK(t.test.empty());
  CHECK(t.train.size() == xs.size());
}

TEST_CASE("oversampling counts") {
  CHECK(oversampled_positive_count(30, 70, 0.9) == 630);
  CHECK(oversampled_positive_count(30, 70, 0.3) == 30);
  CHECK(oversampled_positive_count(30, 70, 0.1) == 30);
  CHECK(oversampled_positive_count(5, 0, 0.9) == 5);
  CHECK_THROWS_AS(oversampled_positive_count(0, 10, 0.5), DomainError);
  CHECK_THROWS_AS(oversampled_positive_count(3, 10, 1.0), DomainError);
  // Minimality against a brute-force search.
  for (std::size_t pos = 1; pos < 25; ++pos)
    for (std::size_t neg = 0; neg < 25; ++neg)
      for (double eta : {0.0, 0.25, 0.5, 0.75, 0.9, 0.95}) {
        std::size_t p = pos;
        while (static_cast<double>(p) / static_cast<double>(p + neg) < eta) ++p;
        CHECK(oversampled_positive_count(pos, neg, eta) == p);
      }
}

TEST_CASE("oversample duplicates positives round-robin and leaves other splits alone") {
  DatasetSplit d;
  for (int i = 0; i < 100; ++i) d.train.push_back(sample_at(kT0 + 3600 * i, i % 10 < 3));
  d.validation.push_back(sample_at(kT0 + 1000 * 3600, true));
  d.test.push_back(sample_at(kT0 + 2000 * 3600, false));
  OversampleReport rep;
  const DatasetSplit o = oversample(d, 0.9, 5, &rep);
  CHECK(rep.applied);
  CHECK(rep.positives_after == 630);
  CHECK(rep.total_after == 700);
  CHECK(o.train.size() == 700);
  CHECK(rep.fraction_after() == doctest::Approx(0.9));
  CHECK(o.validation == d.validation);
  CHECK(o.test == d.test);

  // Every duplicate points at an original; distinct set unchanged; each
  // positive copied 21 times (630 / 30).
  std::map<const SequenceSample*, int> count;
  for (const auto& s : o.train) ++count[s.get()];
  CHECK(count.size() == 100);
  for (const auto& s : d.train) CHECK(count[s.get()] == (is_positive(*s) ? 21 : 1));

  const DatasetSplit again = oversample(d, 0.9, 5);
  CHECK(again.train == o.train);
  const DatasetSplit other = oversample(d, 0.9, 6);
  CHECK(other.train != o.train);
}

TEST_CASE("eta at the natural proportion is a no-op with a warning") {
  DatasetSplit d;
  for (int i = 0; i < 10; ++i) d.train.push_back(sample_at(kT0 + 3600 * i, i < 3));
  OversampleReport rep;
  const DatasetSplit o = oversample(d, 0.3, 1, &rep);
  CHECK_FALSE(rep.applied);
  CHECK_FALSE(rep.warning.empty());
  auto sorted = [](std::vector<SamplePtr> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  CHECK(sorted(o.train) == sorted(d.train));
}

TEST_CASE("manifest and norm stats text round trip") {
  DatasetSplit d;
  d.train.push_back(sample_at(kT0, true));
  d.test.push_back(sample_at(kT0 + 7200, false, 3));
  const auto rows = parse_manifest(manifest_csv(d));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].split == SplitKind::Train);
  CHECK(rows[0].class_flags == "111");
  CHECK(rows[1].split == SplitKind::Test);
  CHECK(rows[1].lead_steps == 3);
  CHECK(rows[1].class_flags == "100");
  CHECK_THROWS_AS(parse_manifest("bogus\n"), FormatError);

  NormStats n;
  n.max_crf = 1.0 / 3.0;
  n.mu_u = -2.5;
  n.sigma_v = 0.1;
  const NormStats back = parse_norm_stats(norm_stats_text(n));
  CHECK(back.max_crf == n.max_crf);
  CHECK(back.mu_u == n.mu_u);
  CHECK(back.sigma_v == n.sigma_v);
  CHECK_THROWS_AS(parse_norm_stats("max_crf=1\n"), FormatError);
}

#include "nowcast/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "nowcast/config.hpp"
#include "nowcast/error.hpp"

namespace nowcast {

namespace {

constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

bool any_nan(std::span<const float> xs) {
  return std::any_of(xs.begin(), xs.end(), [](float x) { return std::isnan(x); });
}

void check_aligned(const GridStack& a, const GridStack& b) {
  if (!a.spec.same_mesh(b.spec)) throw IngestionError("stacks are on different grids");
  if (a.timestamps != b.timestamps) throw IngestionError("stacks have misaligned timestamps");
}

}  // namespace

GridStack align_to_radar(const GridStack& wind, const GridStack& radar) {
  wind.validate();
  radar.validate();
  if (wind.variable == Variable::CRF) throw ContractViolation("align_to_radar expects a wind stack");
  if (wind.n_frames() == 0) throw IngestionError("empty wind stack");

  std::vector<GridFrame> resampled;
  resampled.reserve(wind.n_frames());
  for (std::size_t k = 0; k < wind.n_frames(); ++k) {
    resampled.push_back(bilinear_resample(wind.frame(k), radar.spec));
  }

  GridStack out;
  out.variable = wind.variable;
  out.spec = radar.spec;
  out.timestamps = radar.timestamps;
  out.values.assign(radar.n_frames() * radar.spec.cells(), kNaN);
  for (std::size_t k = 0; k < radar.n_frames(); ++k) {
    const std::int64_t t = radar.timestamps[k];
    const auto it = std::lower_bound(wind.timestamps.begin(), wind.timestamps.end(), t);
    if (it == wind.timestamps.end()) continue;
    const auto j1 = static_cast<std::size_t>(it - wind.timestamps.begin());
    const GridFrame* frame = nullptr;
    std::optional<GridFrame> blended;
    if (*it == t) {
      frame = &resampled[j1];
    } else if (j1 > 0) {
      blended = temporal_interpolate(resampled[j1 - 1], resampled[j1], t);
      frame = &*blended;
    } else {
      continue;
    }
    std::copy(frame->values().begin(), frame->values().end(),
              out.values.begin() + static_cast<std::ptrdiff_t>(k * radar.spec.cells()));
  }
  return out;
}

std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::None: return "accepted";
    case RejectReason::UndefinedData: return "undefined-data";
    case RejectReason::ClearLastFrame: return "clear-last-frame";
  }
  return "?";
}

SequenceCheck validate_sequence(const SequenceSample& s, const ClassScheme& scheme,
                                const NormStats& stats) {
  if (any_nan(s.input) ||
      std::any_of(s.target.valid.begin(), s.target.valid.end(), [](auto v) { return v == 0; })) {
    return {false, RejectReason::UndefinedData};
  }
  const float cutoff = normalize_crf_value(static_cast<float>(scheme.cutoffs().front()), stats);
  const auto last = s.last_crf();
  if (std::none_of(last.begin(), last.end(), [&](float x) { return x >= cutoff; })) {
    return {false, RejectReason::ClearLastFrame};
  }
  return {true, RejectReason::None};
}

std::vector<WindowRef> candidate_windows(const StackSet& stacks, int lead_steps) {
  if (lead_steps < 0) throw ContractViolation("lead_steps must be >= 0");
  stacks.crf.validate();
  if (stacks.crf.variable != Variable::CRF) throw IngestionError("rain stack does not hold CRF");
  for (const auto* w : {&stacks.u, &stacks.v}) {
    if (w->has_value()) {
      (*w)->validate();
      check_aligned(stacks.crf, **w);
    }
  }

  const auto& ts = stacks.crf.timestamps;
  std::vector<WindowRef> out;
  const std::size_t span = kFramesPerSequence + static_cast<std::size_t>(lead_steps);
  std::size_t run_start = 0;
  for (std::size_t k = 0; k <= ts.size(); ++k) {
    const bool run_ends =
        k == ts.size() || (k > run_start && ts[k] - ts[k - 1] != kFrameStepSeconds);
    if (k < ts.size() && k > 0 && (ts[k] - ts[k - 1]) % kFrameStepSeconds != 0) {
      throw IngestionError("timestamps are not on the 5-minute cadence");
    }
    if (!run_ends) continue;
    // Run [run_start, k) of consecutive frames; non-overlapping hours.
    const std::size_t len = k - run_start;
    for (std::size_t first = run_start; len >= span && first + span <= k;
         first += kFramesPerSequence) {
      out.push_back({first, ts[first + kFramesPerSequence - 1]});
    }
    run_start = k;
  }
  return out;
}

RejectReason check_window(const StackSet& stacks, const WindowRef& w, int lead_steps,
                          bool use_wind, const ClassScheme& scheme) {
  const std::size_t last = w.first_frame + kFramesPerSequence - 1;
  const std::size_t target = last + static_cast<std::size_t>(lead_steps);
  for (std::size_t k = w.first_frame; k <= last; ++k) {
    if (any_nan(stacks.crf.plane(k))) return RejectReason::UndefinedData;
    if (use_wind && (any_nan(stacks.u->plane(k)) || any_nan(stacks.v->plane(k))))
      return RejectReason::UndefinedData;
  }
  if (any_nan(stacks.crf.plane(target))) return RejectReason::UndefinedData;
  const double cutoff = scheme.cutoffs().front();
  const auto plane = stacks.crf.plane(last);
  if (std::none_of(plane.begin(), plane.end(), [&](float x) { return x >= cutoff; }))
    return RejectReason::ClearLastFrame;
  return RejectReason::None;
}

SequenceSample make_sample(const StackSet& stacks, const WindowRef& w, const ClassScheme& scheme,
                           const NormStats& stats, int lead_steps, bool use_wind) {
  if (use_wind && !stacks.has_wind()) throw ContractViolation("wind requested but not provided");
  stats.validate();
  SequenceSample s;
  s.height = stacks.crf.spec.height;
  s.width = stacks.crf.spec.width;
  s.channels = kFramesPerSequence * (use_wind ? 3 : 1);
  s.t_last = w.t_last;
  s.lead_steps = lead_steps;
  const std::size_t plane = s.plane();
  s.input.resize(static_cast<std::size_t>(s.channels) * plane);

  float* dst = s.input.data();
  for (int f = 0; f < kFramesPerSequence; ++f, dst += plane) {
    const auto src = stacks.crf.plane(w.first_frame + f);
    for (std::size_t i = 0; i < plane; ++i) dst[i] = normalize_crf_value(src[i], stats);
  }
  if (use_wind) {
    for (const GridStack* wind : {&*stacks.u, &*stacks.v}) {
      for (int f = 0; f < kFramesPerSequence; ++f, dst += plane) {
        const auto src = wind->plane(w.first_frame + f);
        for (std::size_t i = 0; i < plane; ++i)
          dst[i] = standardize_wind_value(src[i], wind->variable, stats);
      }
    }
  }
  const std::size_t target = w.first_frame + kFramesPerSequence - 1 + lead_steps;
  s.target = threshold_classes(stacks.crf.plane(target), s.height, s.width, scheme);
  return s;
}

std::vector<SequenceSample> build_sequences(const StackSet& stacks, const ClassScheme& scheme,
                                            const NormStats& stats, int lead_steps,
                                            bool use_wind) {
  if (use_wind && !stacks.has_wind()) throw ContractViolation("wind requested but not provided");
  std::vector<SequenceSample> out;
  for (const auto& w : candidate_windows(stacks, lead_steps)) {
    auto s = make_sample(stacks, w, scheme, stats, lead_steps, use_wind);
    if (validate_sequence(s, scheme, stats).accepted) out.push_back(std::move(s));
  }
  return out;
}

NormStats compute_norm_stats(const StackSet& stacks, std::span<const WindowRef> windows,
                             int lead_steps) {
  std::vector<std::uint8_t> input_frame(stacks.crf.n_frames(), 0);
  std::vector<std::uint8_t> any_frame(stacks.crf.n_frames(), 0);
  for (const auto& w : windows) {
    for (int f = 0; f < kFramesPerSequence; ++f) {
      input_frame[w.first_frame + f] = 1;
      any_frame[w.first_frame + f] = 1;
    }
    any_frame[w.first_frame + kFramesPerSequence - 1 + lead_steps] = 1;
  }

  NormStats stats;
  double max_crf = 0.0;
  for (std::size_t k = 0; k < any_frame.size(); ++k) {
    if (!any_frame[k]) continue;
    for (float x : stacks.crf.plane(k))
      if (!std::isnan(x)) max_crf = std::max(max_crf, static_cast<double>(x));
  }
  stats.max_crf = max_crf > 0.0 ? max_crf : 1.0;

  auto moments = [&](const GridStack& s, double& mu, double& sigma) {
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < input_frame.size(); ++k) {
      if (!input_frame[k]) continue;
      for (float x : s.plane(k)) {
        if (std::isnan(x)) continue;
        sum += x;
        sum2 += static_cast<double>(x) * x;
        ++n;
      }
    }
    if (n == 0) return;
    mu = sum / n;
    const double var = std::max(0.0, sum2 / n - mu * mu);
    // A constant wind field carries no standardizable signal; keep unit scale.
    sigma = std::sqrt(var) > 1e-6 ? std::sqrt(var) : 1.0;
  };
  if (stacks.has_wind()) {
    moments(*stacks.u, stats.mu_u, stats.sigma_u);
    moments(*stacks.v, stats.mu_v, stats.sigma_v);
  }
  return stats;
}

std::string_view to_string(SplitKind k) {
  switch (k) {
    case SplitKind::Train: return "train";
    case SplitKind::Validation: return "validation";
    case SplitKind::Test: return "test";
  }
  return "?";
}

std::pair<std::int64_t, std::int64_t> sample_span(std::int64_t t_last, int lead_steps) {
  // The first input frame accumulates rain from one step before its stamp.
  const std::int64_t begin = t_last - kFramesPerSequence * kFrameStepSeconds;
  const std::int64_t end = t_last + lead_steps * kFrameStepSeconds;
  return {begin, end};
}

std::optional<SplitKind> assign_split(std::int64_t t_last, int lead_steps,
                                      const SplitPolicy& policy) {
  if (policy.week_seconds <= 0 || policy.buffer_seconds < 0 ||
      policy.buffer_seconds >= policy.week_seconds)
    throw ContractViolation("invalid split policy");
  const auto [begin, end] = sample_span(t_last, lead_steps);
  if (end < policy.train_end) return SplitKind::Train;
  if (begin < policy.train_end) return std::nullopt;  // straddles the first cut

  const std::int64_t offset = begin - policy.train_end;
  const std::int64_t week = offset / policy.week_seconds;
  const std::int64_t cut = policy.train_end + week * policy.week_seconds;
  if (begin < cut + policy.buffer_seconds) return std::nullopt;
  if (end >= cut + policy.week_seconds) return std::nullopt;
  return week % 2 == 0 ? SplitKind::Validation : SplitKind::Test;
}

DatasetSplit split_weeks(std::span<const SamplePtr> samples, const SplitPolicy& policy) {
  if (samples.empty()) throw ContractViolation("split_weeks needs at least one sample");
  DatasetSplit out;
  std::int64_t prev = std::numeric_limits<std::int64_t>::min();
  for (const auto& s : samples) {
    if (s->t_last < prev) throw ContractViolation("samples must be sorted by timestamp");
    prev = s->t_last;
    const auto kind = assign_split(s->t_last, s->lead_steps, policy);
    if (!kind) continue;
    switch (*kind) {
      case SplitKind::Train: out.train.push_back(s); break;
      case SplitKind::Validation: out.validation.push_back(s); break;
      case SplitKind::Test: out.test.push_back(s); break;
    }
  }
  return out;
}

bool is_positive(const SequenceSample& s) {
  const int top = s.target.n_classes - 1;
  const std::size_t plane = s.target.plane();
  const auto* first = s.target.labels.data() + top * plane;
  return std::any_of(first, first + plane, [](std::uint8_t x) { return x != 0; });
}

double OversampleReport::fraction_before() const {
  return total_before ? static_cast<double>(positives_before) / total_before : 0.0;
}

double OversampleReport::fraction_after() const {
  return total_after ? static_cast<double>(positives_after) / total_after : 0.0;
}

std::size_t oversampled_positive_count(std::size_t positives, std::size_t negatives, double eta) {
  auto reaches = [&](std::size_t p) {
    return static_cast<double>(p) / static_cast<double>(p + negatives) >= eta;
  };
  if (reaches(positives)) return positives;
  if (positives == 0) throw DomainError("no positive sequences to duplicate");
  if (eta >= 1.0) throw DomainError("eta = 1 is unreachable with negative sequences present");
  // Closed form, then settle the rounding at the boundary.
  auto p = static_cast<std::size_t>(std::ceil(eta * negatives / (1.0 - eta)));
  p = std::max(p, positives);
  while (p > positives && reaches(p - 1)) --p;
  while (!reaches(p)) ++p;
  return p;
}

DatasetSplit oversample(const DatasetSplit& split, double eta, std::uint64_t seed,
                        OversampleReport* report) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ContractViolation("eta must lie in [0, 1]");
  DatasetSplit out = split;
  out.eta = eta;

  std::vector<SamplePtr> positives;
  for (const auto& s : split.train)
    if (is_positive(*s)) positives.push_back(s);
  const std::size_t negatives = split.train.size() - positives.size();

  OversampleReport rep;
  rep.positives_before = positives.size();
  rep.total_before = split.train.size();
  const std::size_t target = oversampled_positive_count(positives.size(), negatives, eta);
  if (target == positives.size()) {
    rep.warning = "eta does not exceed the natural positive proportion; no duplication";
  } else {
    rep.applied = true;
    for (std::size_t i = 0; positives.size() + i < target; ++i) {
      out.train.push_back(positives[i % positives.size()]);
    }
  }
  rep.positives_after = target;
  rep.total_after = out.train.size();

  std::mt19937_64 rng(seed);
  std::shuffle(out.train.begin(), out.train.end(), rng);
  if (report) *report = rep;
  return out;
}

std::string manifest_csv(const DatasetSplit& split) {
  std::ostringstream os;
  os << "split,t_last,lead_steps,class_flags\n";
  auto emit = [&](SplitKind kind, const std::vector<SamplePtr>& list) {
    for (const auto& s : list) {
      std::string flags;
      const std::size_t plane = s->target.plane();
      for (int m = 0; m < s->target.n_classes; ++m) {
        const auto* p = s->target.labels.data() + m * plane;
        flags += std::any_of(p, p + plane, [](std::uint8_t x) { return x != 0; }) ? '1' : '0';
      }
      os << to_string(kind) << ',' << s->t_last << ',' << s->lead_steps << ',' << flags << '\n';
    }
  };
  emit(SplitKind::Train, split.train);
  emit(SplitKind::Validation, split.validation);
  emit(SplitKind::Test, split.test);
  return os.str();
}

std::vector<ManifestEntry> parse_manifest(const std::string& csv) {
  std::vector<ManifestEntry> out;
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "split,t_last,lead_steps,class_flags")
    throw FormatError("manifest header missing");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string split, t_last, lead, flags;
    if (!std::getline(row, split, ',') || !std::getline(row, t_last, ',') ||
        !std::getline(row, lead, ',') || !std::getline(row, flags))
      throw FormatError("malformed manifest row: " + line);
    ManifestEntry e;
    if (split == "train") {
      e.split = SplitKind::Train;
    } else if (split == "validation") {
      e.split = SplitKind::Validation;
    } else if (split == "test") {
      e.split = SplitKind::Test;
    } else {
      throw FormatError("unknown split '" + split + "'");
    }
    try {
      e.t_last = std::stoll(t_last);
      e.lead_steps = std::stoi(lead);
    } catch (const std::exception&) {
      throw FormatError("malformed manifest row: " + line);
    }
    e.class_flags = flags;
    out.push_back(std::move(e));
  }
  return out;
}

std::string norm_stats_text(const NormStats& s) {
  std::ostringstream os;
  os.precision(17);
  os << "max_crf=" << s.max_crf << "\nmu_u=" << s.mu_u << "\nsigma_u=" << s.sigma_u
     << "\nmu_v=" << s.mu_v << "\nsigma_v=" << s.sigma_v << "\n";
  return os.str();
}

NormStats parse_norm_stats(const std::string& text) {
  const Config c = Config::parse(text);
  for (const char* key : {"max_crf", "mu_u", "sigma_u", "mu_v", "sigma_v"}) {
    if (!c.has(key)) throw FormatError(std::string("norm stats missing '") + key + "'");
  }
  NormStats s;
  s.max_crf = c.get_double("max_crf", 0.0);
  s.mu_u = c.get_double("mu_u", 0.0);
  s.sigma_u = c.get_double("sigma_u", 0.0);
  s.mu_v = c.get_double("mu_v", 0.0);
  s.sigma_v = c.get_double("sigma_v", 0.0);
  s.validate();
  return s;
}

}  // namespace nowcast

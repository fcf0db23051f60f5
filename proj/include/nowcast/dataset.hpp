#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nowcast/grid.hpp"
#include "nowcast/pgs.hpp"

namespace nowcast {

inline constexpr int kFramesPerSequence = 12;
inline constexpr std::int64_t kFrameStepSeconds = 300;

/// One network example: an hour of inputs and the class map p steps later.
///
/// Input channels are ordered as 12 normalized CRF frames, then (when wind
/// is used) 12 standardized U frames and 12 standardized V frames, oldest
/// first within each group.
struct SequenceSample {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> input;
  ClassMap target;
  std::int64_t t_last = 0;
  int lead_steps = 0;

  bool has_wind() const { return channels == 3 * kFramesPerSequence; }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::span<const float> channel(int c) const {
    return std::span<const float>(input).subspan(c * plane(), plane());
  }
  /// Normalized CRF of the most recent input frame.
  std::span<const float> last_crf() const { return channel(kFramesPerSequence - 1); }
};

using SamplePtr = std::shared_ptr<const SequenceSample>;

/// Samples are shared, so duplicated entries point at the same storage.
struct DatasetSplit {
  std::vector<SamplePtr> train;
  std::vector<SamplePtr> validation;
  std::vector<SamplePtr> test;
  double eta = 0.0;
};

/// Co-registered input stacks. Wind stacks are optional (rain-only runs).
struct StackSet {
  GridStack crf;
  std::optional<GridStack> u;
  std::optional<GridStack> v;

  bool has_wind() const { return u.has_value() && v.has_value(); }
};

/// Brings wind stacks onto the radar mesh and cadence: bilinear resampling
/// in space first, then linear interpolation in time.
GridStack align_to_radar(const GridStack& wind, const GridStack& radar);

enum class RejectReason { None, UndefinedData, ClearLastFrame };
std::string_view to_string(RejectReason r);

struct SequenceCheck {
  bool accepted = true;
  RejectReason reason = RejectReason::None;
};

/// Accepts a sample unless it holds undefined data or its last rain frame
/// has no pixel reaching the lowest class cutoff.
SequenceCheck validate_sequence(const SequenceSample& sample, const ClassScheme& scheme,
                                const NormStats& stats);

/// Start frame indices of the non-overlapping windows (before filtering).
struct WindowRef {
  std::size_t first_frame = 0;
  std::int64_t t_last = 0;
};
std::vector<WindowRef> candidate_windows(const StackSet& stacks, int lead_steps);
/// Same filtering rules as validate_sequence, applied on raw stacks.
RejectReason check_window(const StackSet& stacks, const WindowRef& w, int lead_steps,
                          bool use_wind, const ClassScheme& scheme);

SequenceSample make_sample(const StackSet& stacks, const WindowRef& w, const ClassScheme& scheme,
                           const NormStats& stats, int lead_steps, bool use_wind);

/// All accepted windows as samples, in time order.
std::vector<SequenceSample> build_sequences(const StackSet& stacks, const ClassScheme& scheme,
                                            const NormStats& stats, int lead_steps,
                                            bool use_wind);

/// Maximum CRF and wind moments over the frames touched by the given windows.
NormStats compute_norm_stats(const StackSet& stacks, std::span<const WindowRef> windows,
                             int lead_steps);

/// Training period first, then weeks alternating validation/test, with a
/// buffer of discarded data after every cut.
struct SplitPolicy {
  std::int64_t train_end = 0;
  std::int64_t week_seconds = 7 * 86400;
  std::int64_t buffer_seconds = 3600;
};

enum class SplitKind { Train, Validation, Test };
std::string_view to_string(SplitKind k);

/// Time interval [begin, end] of data a sample depends on.
std::pair<std::int64_t, std::int64_t> sample_span(std::int64_t t_last, int lead_steps);
std::optional<SplitKind> assign_split(std::int64_t t_last, int lead_steps, const SplitPolicy& policy);

DatasetSplit split_weeks(std::span<const SamplePtr> samples, const SplitPolicy& policy);

bool is_positive(const SequenceSample& sample);

struct OversampleReport {
  std::size_t positives_before = 0;
  std::size_t total_before = 0;
  std::size_t positives_after = 0;
  std::size_t total_after = 0;
  bool applied = false;
  std::string warning;

  double fraction_before() const;
  double fraction_after() const;
};

/// Duplicates training sequences containing the highest class until they
/// make up at least eta of the training set, then shuffles it.
DatasetSplit oversample(const DatasetSplit& split, double eta, std::uint64_t seed,
                        OversampleReport* report = nullptr);

/// Smallest positive count P' >= positives with P' / (P' + negatives) >= eta.
std::size_t oversampled_positive_count(std::size_t positives, std::size_t negatives, double eta);

struct ManifestEntry {
  SplitKind split = SplitKind::Train;
  std::int64_t t_last = 0;
  int lead_steps = 0;
  std::string class_flags;  // one '0'/'1' per class: class present in target
};

std::string manifest_csv(const DatasetSplit& split);
std::vector<ManifestEntry> parse_manifest(const std::string& csv);

std::string norm_stats_text(const NormStats& stats);
NormStats parse_norm_stats(const std::string& text);

}  // namespace nowcast

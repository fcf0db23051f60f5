#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nowcast {

enum class Variable { CRF, U, V };

std::string_view to_string(Variable v);
Variable parse_variable(std::string_view name);

/// Whether a frame holds physical values or the network-ready transform.
enum class Scale { Physical, Normalized };

/// Regular lon/lat raster. (lon0, lat0) is the center of cell (row 0, col 0);
/// columns advance eastward by dlon, rows advance northward by dlat.
struct GridSpec {
  int height = 0;
  int width = 0;
  double lon0 = 0.0;
  double lat0 = 0.0;
  double dlon = 0.01;
  double dlat = 0.01;

  std::size_t cells() const { return static_cast<std::size_t>(height) * width; }
  void validate() const;
  bool same_mesh(const GridSpec& other) const;
};

/// One 2-D field at one instant. Values are immutable after construction.
/// Invalid cells hold NaN and are flagged false in the mask.
class GridFrame {
 public:
  /// Mask derived from the values: NaN means missing.
  GridFrame(GridSpec spec, Variable variable, std::int64_t timestamp,
            std::vector<float> values, Scale scale = Scale::Physical);
  GridFrame(GridSpec spec, Variable variable, std::int64_t timestamp,
            std::vector<float> values, std::vector<std::uint8_t> mask,
            Scale scale = Scale::Physical);

  const GridSpec& spec() const { return spec_; }
  Variable variable() const { return variable_; }
  Scale scale() const { return scale_; }
  std::int64_t timestamp() const { return timestamp_; }
  int height() const { return spec_.height; }
  int width() const { return spec_.width; }

  std::span<const float> values() const { return values_; }
  std::span<const std::uint8_t> mask() const { return mask_; }

  float at(int row, int col) const { return values_[index(row, col)]; }
  bool valid(int row, int col) const { return mask_[index(row, col)] != 0; }
  bool fully_valid() const;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * spec_.width + col;
  }
  void check_invariants();

  GridSpec spec_;
  Variable variable_;
  Scale scale_;
  std::int64_t timestamp_;
  std::vector<float> values_;
  std::vector<std::uint8_t> mask_;
};

/// Training-split statistics used by the input transforms.
struct NormStats {
  double max_crf = 1.0;
  double mu_u = 0.0;
  double sigma_u = 1.0;
  double mu_v = 0.0;
  double sigma_v = 1.0;

  void validate() const;
};

/// Nested exceedance classes C_m = {CRF >= L_m}. Thresholds are rates in
/// mm/h; cutoffs() converts them to the accumulation window of the data.
struct ClassScheme {
  std::vector<double> thresholds_mm_per_h{0.1, 1.0, 2.5};
  double accumulation_minutes = 5.0;

  int n_classes() const { return static_cast<int>(thresholds_mm_per_h.size()); }
  std::vector<double> cutoffs() const;
  void validate() const;
};

/// Per-pixel binary membership for each class, channel-major (m, row, col).
struct ClassMap {
  int n_classes = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> valid;  // H*W, shared by all channels

  ClassMap() = default;
  ClassMap(int n, int h, int w)
      : n_classes(n), height(h), width(w),
        labels(static_cast<std::size_t>(n) * h * w, 0),
        valid(static_cast<std::size_t>(h) * w, 1) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::uint8_t at(int m, int row, int col) const {
    return labels[m * plane() + static_cast<std::size_t>(row) * width + col];
  }
  bool operator==(const ClassMap&) const = default;
};

/// Per-pixel class probabilities, channel-major (m, row, col).
struct ProbMap {
  int n_classes = 0;
  int height = 0;
  int width = 0;
  std::vector<float> probs;

  ProbMap() = default;
  ProbMap(int n, int h, int w)
      : n_classes(n), height(h), width(w), probs(static_cast<std::size_t>(n) * h * w, 0.0f) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
};

/// Casts a binary class map to {0, 1} probabilities.
ProbMap to_prob_map(const ClassMap& classes);

// Scalar transforms shared by the frame-level operations and the dataset
// builder, which works on raw stacks.
float normalize_crf_value(float x, const NormStats& stats);
float denormalize_crf_value(float y, const NormStats& stats);
float standardize_wind_value(float x, Variable component, const NormStats& stats);

GridFrame normalize_crf(const GridFrame& frame, const NormStats& stats);
GridFrame denormalize_crf(const GridFrame& frame, const NormStats& stats);
GridFrame standardize_wind(const GridFrame& frame, const NormStats& stats);

ClassMap threshold_classes(const GridFrame& frame, const ClassScheme& scheme);
/// Same as above on a raw physical CRF plane with no mask.
ClassMap threshold_classes(std::span<const float> crf, int height, int width,
                           const ClassScheme& scheme);

GridFrame bilinear_resample(const GridFrame& frame, const GridSpec& target);
GridFrame temporal_interpolate(const GridFrame& frame_t0, const GridFrame& frame_t1,
                               std::int64_t t);

}  // namespace nowcast

#include "nowcast/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "nowcast/error.hpp"

namespace nowcast {

namespace {

constexpr float kNaN = std::numeric_limits<float>::quiet_NaN();

}  // namespace

std::string_view to_string(Variable v) {
  switch (v) {
    case Variable::CRF: return "CRF";
    case Variable::U: return "U";
    case Variable::V: return "V";
  }
  return "?";
}

Variable parse_variable(std::string_view name) {
  if (name == "CRF") return Variable::CRF;
  if (name == "U") return Variable::U;
  if (name == "V") return Variable::V;
  throw FormatError("unknown variable '" + std::string(name) + "'");
}

void GridSpec::validate() const {
  if (height <= 0 || width <= 0) throw ContractViolation("grid must have H, W > 0");
  if (!(dlon > 0.0) || !(dlat > 0.0)) throw ContractViolation("grid spacing must be > 0");
}

bool GridSpec::same_mesh(const GridSpec& o) const {
  constexpr double tol = 1e-9;
  return height == o.height && width == o.width && std::abs(lon0 - o.lon0) < tol &&
         std::abs(lat0 - o.lat0) < tol && std::abs(dlon - o.dlon) < tol &&
         std::abs(dlat - o.dlat) < tol;
}

GridFrame::GridFrame(GridSpec spec, Variable variable, std::int64_t timestamp,
                     std::vector<float> values, Scale scale)
    : spec_(spec), variable_(variable), scale_(scale), timestamp_(timestamp),
      values_(std::move(values)) {
  mask_.resize(values_.size());
  for (std::size_t i = 0; i < values_.size(); ++i) mask_[i] = std::isnan(values_[i]) ? 0 : 1;
  check_invariants();
}

GridFrame::GridFrame(GridSpec spec, Variable variable, std::int64_t timestamp,
                     std::vector<float> values, std::vector<std::uint8_t> mask, Scale scale)
    : spec_(spec), variable_(variable), scale_(scale), timestamp_(timestamp),
      values_(std::move(values)), mask_(std::move(mask)) {
  if (mask_.size() != values_.size()) throw ShapeMismatch("mask and values differ in size");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!mask_[i]) {
      values_[i] = kNaN;
    } else if (std::isnan(values_[i])) {
      throw ContractViolation("valid cell holds NaN");
    }
  }
  check_invariants();
}

void GridFrame::check_invariants() {
  spec_.validate();
  if (values_.size() != spec_.cells()) throw ShapeMismatch("values do not match H*W");
  if (variable_ == Variable::CRF) {
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (mask_[i] && values_[i] < 0.0f) throw ContractViolation("negative rainfall in valid cell");
    }
  }
}

bool GridFrame::fully_valid() const {
  return std::all_of(mask_.begin(), mask_.end(), [](std::uint8_t m) { return m != 0; });
}

void NormStats::validate() const {
  if (!(max_crf > 0.0)) throw ContractViolation("max_crf must be > 0");
  if (!(sigma_u > 0.0) || !(sigma_v > 0.0)) throw ContractViolation("wind sigma must be > 0");
}

std::vector<double> ClassScheme::cutoffs() const {
  // Divide by the number of windows per hour so that the 5-minute case is
  // exactly L / 12.
  const double windows_per_hour = 60.0 / accumulation_minutes;
  std::vector<double> out;
  out.reserve(thresholds_mm_per_h.size());
  for (double l : thresholds_mm_per_h) out.push_back(l / windows_per_hour);
  return out;
}

void ClassScheme::validate() const {
  if (thresholds_mm_per_h.empty()) throw ContractViolation("class scheme needs at least one threshold");
  if (!(accumulation_minutes > 0.0)) throw ContractViolation("accumulation window must be > 0");
  for (std::size_t i = 0; i < thresholds_mm_per_h.size(); ++i) {
    if (!(thresholds_mm_per_h[i] > 0.0)) throw ContractViolation("thresholds must be > 0");
    if (i > 0 && !(thresholds_mm_per_h[i] > thresholds_mm_per_h[i - 1]))
      throw ContractViolation("thresholds must be strictly increasing");
  }
}

ProbMap to_prob_map(const ClassMap& classes) {
  ProbMap out(classes.n_classes, classes.height, classes.width);
  for (std::size_t i = 0; i < classes.labels.size(); ++i) out.probs[i] = classes.labels[i] ? 1.0f : 0.0f;
  return out;
}

float normalize_crf_value(float x, const NormStats& stats) {
  const double y = std::log1p(static_cast<double>(x)) / std::log1p(stats.max_crf);
  return static_cast<float>(std::min(y, 1.0));
}

float denormalize_crf_value(float y, const NormStats& stats) {
  return static_cast<float>(std::expm1(static_cast<double>(y) * std::log1p(stats.max_crf)));
}

float standardize_wind_value(float x, Variable component, const NormStats& stats) {
  const bool is_u = component == Variable::U;
  const double mu = is_u ? stats.mu_u : stats.mu_v;
  const double sigma = is_u ? stats.sigma_u : stats.sigma_v;
  return static_cast<float>((static_cast<double>(x) - mu) / sigma);
}

GridFrame normalize_crf(const GridFrame& frame, const NormStats& stats) {
  if (frame.variable() != Variable::CRF) throw ContractViolation("normalize_crf expects a CRF frame");
  if (frame.scale() != Scale::Physical) throw ContractViolation("frame is already normalized");
  stats.validate();
  std::vector<float> out(frame.values().begin(), frame.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (frame.mask()[i]) out[i] = normalize_crf_value(out[i], stats);
  }
  return GridFrame(frame.spec(), Variable::CRF, frame.timestamp(), std::move(out),
                   std::vector<std::uint8_t>(frame.mask().begin(), frame.mask().end()),
                   Scale::Normalized);
}

GridFrame denormalize_crf(const GridFrame& frame, const NormStats& stats) {
  if (frame.variable() != Variable::CRF) throw ContractViolation("denormalize_crf expects a CRF frame");
  stats.validate();
  std::vector<float> out(frame.values().begin(), frame.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!frame.mask()[i]) continue;
    if (out[i] < 0.0f || out[i] > 1.0f) throw ContractViolation("normalized CRF outside [0,1]");
    out[i] = denormalize_crf_value(out[i], stats);
  }
  return GridFrame(frame.spec(), Variable::CRF, frame.timestamp(), std::move(out),
                   std::vector<std::uint8_t>(frame.mask().begin(), frame.mask().end()),
                   Scale::Physical);
}

GridFrame standardize_wind(const GridFrame& frame, const NormStats& stats) {
  if (frame.variable() == Variable::CRF) throw ContractViolation("standardize_wind expects U or V");
  stats.validate();
  std::vector<float> out(frame.values().begin(), frame.values().end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (frame.mask()[i]) out[i] = standardize_wind_value(out[i], frame.variable(), stats);
  }
  return GridFrame(frame.spec(), frame.variable(), frame.timestamp(), std::move(out),
                   std::vector<std::uint8_t>(frame.mask().begin(), frame.mask().end()),
                   Scale::Normalized);
}

ClassMap threshold_classes(std::span<const float> crf, int height, int width,
                           const ClassScheme& scheme) {
  scheme.validate();
  const auto cutoffs = scheme.cutoffs();
  ClassMap out(scheme.n_classes(), height, width);
  const std::size_t plane = out.plane();
  if (crf.size() != plane) throw ShapeMismatch("CRF plane size does not match H*W");
  for (std::size_t i = 0; i < plane; ++i) {
    if (std::isnan(crf[i])) {
      out.valid[i] = 0;
      continue;
    }
    const double x = crf[i];
    for (std::size_t m = 0; m < cutoffs.size(); ++m) {
      if (x < cutoffs[m]) break;
      out.labels[m * plane + i] = 1;
    }
  }
  return out;
}

ClassMap threshold_classes(const GridFrame& frame, const ClassScheme& scheme) {
  if (frame.variable() != Variable::CRF) throw ContractViolation("threshold_classes expects CRF");
  if (frame.scale() != Scale::Physical)
    throw ContractViolation("threshold_classes expects physical units");
  return threshold_classes(frame.values(), frame.height(), frame.width(), scheme);
}

namespace {

// Locates a fractional source index in [0, n-1]; returns false when the
// coordinate falls outside the source extent.
bool bracket(double f, int n, int& i0, int& i1, double& w) {
  constexpr double eps = 1e-9;
  if (f < -eps || f > (n - 1) + eps) return false;
  f = std::clamp(f, 0.0, static_cast<double>(n - 1));
  if (n == 1) {
    i0 = i1 = 0;
    w = 0.0;
    return true;
  }
  i0 = std::min(static_cast<int>(std::floor(f)), n - 2);
  i1 = i0 + 1;
  w = f - i0;
  return true;
}

}  // namespace

GridFrame bilinear_resample(const GridFrame& frame, const GridSpec& target) {
  target.validate();
  const GridSpec& src = frame.spec();

  const double src_lon_max = src.lon0 + (src.width - 1) * src.dlon;
  const double src_lat_max = src.lat0 + (src.height - 1) * src.dlat;
  const double tgt_lon_max = target.lon0 + (target.width - 1) * target.dlon;
  const double tgt_lat_max = target.lat0 + (target.height - 1) * target.dlat;
  if (tgt_lon_max < src.lon0 || target.lon0 > src_lon_max || tgt_lat_max < src.lat0 ||
      target.lat0 > src_lat_max) {
    throw DomainError("source and target grids do not overlap");
  }

  std::vector<float> out(target.cells(), kNaN);
  std::vector<std::uint8_t> mask(target.cells(), 0);
  for (int r = 0; r < target.height; ++r) {
    const double fy = (target.lat0 + r * target.dlat - src.lat0) / src.dlat;
    int y0, y1;
    double wy;
    if (!bracket(fy, src.height, y0, y1, wy)) continue;
    for (int c = 0; c < target.width; ++c) {
      const double fx = (target.lon0 + c * target.dlon - src.lon0) / src.dlon;
      int x0, x1;
      double wx;
      if (!bracket(fx, src.width, x0, x1, wx)) continue;
      if (!frame.valid(y0, x0) || !frame.valid(y0, x1) || !frame.valid(y1, x0) ||
          !frame.valid(y1, x1))
        continue;
      const double top = (1.0 - wx) * frame.at(y0, x0) + wx * frame.at(y0, x1);
      const double bottom = (1.0 - wx) * frame.at(y1, x0) + wx * frame.at(y1, x1);
      const std::size_t k = static_cast<std::size_t>(r) * target.width + c;
      out[k] = static_cast<float>((1.0 - wy) * top + wy * bottom);
      mask[k] = 1;
    }
  }
  return GridFrame(target, frame.variable(), frame.timestamp(), std::move(out), std::move(mask),
                   frame.scale());
}

GridFrame temporal_interpolate(const GridFrame& f0, const GridFrame& f1, std::int64_t t) {
  if (!f0.spec().same_mesh(f1.spec())) throw ShapeMismatch("frames are on different grids");
  if (f0.variable() != f1.variable()) throw ContractViolation("frames hold different variables");
  const std::int64_t t0 = f0.timestamp();
  const std::int64_t t1 = f1.timestamp();
  if (t1 < t0 || t < t0 || t > t1) throw DomainError("interpolation time outside [t0, t1]");
  const double w = t1 == t0 ? 0.0 : static_cast<double>(t - t0) / static_cast<double>(t1 - t0);

  const auto a = f0.values();
  const auto b = f1.values();
  std::vector<float> out(a.size(), kNaN);
  std::vector<std::uint8_t> mask(a.size(), 0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!f0.mask()[i] || !f1.mask()[i]) continue;
    out[i] = static_cast<float>((1.0 - w) * a[i] + w * b[i]);
    mask[i] = 1;
  }
  return GridFrame(f0.spec(), f0.variable(), t, std::move(out), std::move(mask), f0.scale());
}

}  // namespace nowcast

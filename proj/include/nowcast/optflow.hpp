#pragma once

#include <span>
#include <vector>

#include "nowcast/config.hpp"
#include "nowcast/grid.hpp"

namespace nowcast {

/// Dense apparent velocity in pixels per frame step; u along columns
/// (east), v along rows (north).
struct FlowField {
  int height = 0;
  int width = 0;
  std::vector<float> u;
  std::vector<float> v;

  FlowField() = default;
  FlowField(int h, int w, float u0 = 0.0f, float v0 = 0.0f)
      : height(h), width(w),
        u(static_cast<std::size_t>(h) * w, u0),
        v(static_cast<std::size_t>(h) * w, v0) {}

  std::size_t cells() const { return u.size(); }
  float max_speed() const;
};

struct FlowConfig {
  double alpha = 0.1;
  int max_iters = 2000;
  double tol = 1e-7;
  double cfl_max = 1.0;
  /// Number of trailing frame pairs whose flows are averaged by of_forecast.
  int pairs = 1;

  void validate() const;
  static FlowConfig from_config(const Config& cfg);
};

/// Energy after every solver sweep, starting with the zero-flow energy.
struct FlowTrace {
  std::vector<double> energy;
};

/// Minimizes the Horn-Schunck energy
///   sum_p (Ix u + Iy v + It)^2 + alpha * sum_{4-neighbour edges} |W_p - W_q|^2
/// with red-black Gauss-Seidel sweeps. Each half-sweep solves its pixels
/// exactly given their neighbours, so the energy never increases.
FlowField estimate_flow(std::span<const float> prev, std::span<const float> next, int height,
                        int width, const FlowConfig& cfg, FlowTrace* trace = nullptr);
FlowField estimate_flow(const GridFrame& prev, const GridFrame& next, const FlowConfig& cfg,
                        FlowTrace* trace = nullptr);

/// Discrete energy minimized by estimate_flow.
double flow_energy(std::span<const float> prev, std::span<const float> next, int height,
                   int width, const FlowField& flow, double alpha);

enum class Boundary {
  ZeroInflow,  // departure points outside the domain read 0
  Clamp        // departure points are clamped onto the domain
};

/// Semi-Lagrangian transport over dt_steps frame steps: each output pixel
/// traces its characteristic back through `flow` in sub-steps no longer than
/// cfl_max pixels, then samples the input bilinearly at the departure point.
std::vector<float> advect(std::span<const float> field, int height, int width,
                          const FlowField& flow, double dt_steps, double cfl_max,
                          Boundary boundary);
GridFrame advect(const GridFrame& field, const FlowField& flow, double dt_steps, double cfl_max);
FlowField advect(const FlowField& field, const FlowField& flow, double dt_steps, double cfl_max);

struct FlowForecast {
  ClassMap classes;
  ProbMap probs;
  FlowField flow;
  std::vector<float> rain;  // advected last frame, physical units
};

/// Optical-flow nowcast: estimates the flow on normalized intensities from
/// the trailing frame pairs, then integrates rain and velocity transported
/// by the velocity for lead_steps Euler steps and thresholds the result.
FlowForecast of_forecast(std::span<const GridFrame> frames, const FlowConfig& cfg, int lead_steps,
                         const ClassScheme& scheme, const NormStats& stats);

/// Raw-plane variant on physical CRF planes, oldest first.
FlowForecast of_forecast(std::span<const std::vector<float>> frames, int height, int width,
                         const FlowConfig& cfg, int lead_steps, const ClassScheme& scheme,
                         const NormStats& stats);

/// The last observation, unchanged, whatever the lead time.
ClassMap persistence_forecast(const GridFrame& last_frame, const ClassScheme& scheme,
                              int lead_steps);

}  // namespace nowcast

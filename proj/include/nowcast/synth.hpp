#pragma once

#include <cstdint>

#include "nowcast/config.hpp"
#include "nowcast/grid.hpp"
#include "nowcast/pgs.hpp"

namespace nowcast {

enum class VelocityKind { Uniform, Rotational };

/// Synthetic advection scenes standing in for radar + wind archives.
///
/// The calendar is a series of independent episodes of n_frames consecutive
/// 5-minute frames, one episode every episode_spacing_s seconds. Each
/// episode draws its own blobs and its own velocity, so the wind channels
/// carry information the rain history only reveals indirectly.
struct SynthConfig {
  int height = 32;
  int width = 32;
  int n_frames = 24;
  int n_episodes = 1;
  std::int64_t episode_spacing_s = 6 * 3600;
  std::int64_t start_time = 1451606400;  // 2016-01-01T00:00:00Z
  std::int64_t frame_step_s = 300;

  int n_blobs = 12;
  double amp_min = 0.05;  // mm per 5 min
  double amp_max = 0.6;
  double sigma_min = 2.0;  // px
  double sigma_max = 4.0;

  VelocityKind velocity = VelocityKind::Uniform;
  double u = 1.0;  // px per frame, eastward (columns)
  double v = 0.0;  // px per frame, northward (rows)
  double omega = 0.02;  // rad per frame, rotational scenes
  double velocity_jitter = 0.0;  // per-episode U(-j, j) added to u, v (or omega)
  double turn_rate_max = 0.0;  // per-episode U(-r, r) turning of the uniform velocity, rad/frame
  // Uniform scenes only. Every regime_frames frames (0 = never) the wind
  // takes a new value, the previous one plus U(-s, s) per component. Rain
  // moves with the wind of wind_lead frames earlier, so recent wind tells
  // where the rain goes next.
  int regime_frames = 0;
  double velocity_shift = 0.0;
  int wind_lead = 0;

  double noise = 0.0;  // std of additive noise, clipped at 0
  std::uint64_t seed = 1;

  GridSpec geo{0, 0, 0.0, 0.0, 0.01, 0.01};

  void validate() const;
  GridSpec grid() const;
  static SynthConfig from_config(const Config& cfg);
};

struct SynthStacks {
  GridStack crf;
  GridStack u;
  GridStack v;
};

SynthStacks synth_generate(const SynthConfig& cfg);

}  // namespace nowcast

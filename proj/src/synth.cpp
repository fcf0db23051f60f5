#include "nowcast/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <utility>

#include "nowcast/error.hpp"

namespace nowcast {

void SynthConfig::validate() const {
  if (height <= 0 || width <= 0) throw ConfigError("synth grid must be non-empty");
  if (n_frames <= 0 || n_episodes <= 0) throw ConfigError("synth needs frames and episodes");
  if (frame_step_s <= 0) throw ConfigError("frame step must be > 0");
  if (episode_spacing_s < static_cast<std::int64_t>(n_frames) * frame_step_s)
    throw ConfigError("episodes would overlap in time");
  if (n_blobs < 0) throw ConfigError("n_blobs must be >= 0");
  if (amp_min < 0.0 || amp_max < amp_min) throw ConfigError("bad amplitude range");
  if (!(sigma_min > 0.0) || sigma_max < sigma_min) throw ConfigError("bad sigma range");
  if (noise < 0.0 || velocity_jitter < 0.0 || turn_rate_max < 0.0 || velocity_shift < 0.0)
    throw ConfigError("noise, jitter, shift and turn rate must be >= 0");
  if (regime_frames < 0 || wind_lead < 0) throw ConfigError("regime_frames and wind_lead must be >= 0");
}

GridSpec SynthConfig::grid() const {
  GridSpec g = geo;
  g.height = height;
  g.width = width;
  return g;
}

SynthConfig SynthConfig::from_config(const Config& c) {
  SynthConfig s;
  s.height = static_cast<int>(c.get_int("synth.height", s.height));
  s.width = static_cast<int>(c.get_int("synth.width", s.width));
  s.n_frames = static_cast<int>(c.get_int("synth.n_frames", s.n_frames));
  s.n_episodes = static_cast<int>(c.get_int("synth.n_episodes", s.n_episodes));
  s.episode_spacing_s = c.get_int("synth.episode_spacing_s", s.episode_spacing_s);
  s.start_time = c.get_int("synth.start_time", s.start_time);
  s.n_blobs = static_cast<int>(c.get_int("synth.n_blobs", s.n_blobs));
  s.amp_min = c.get_double("synth.amp_min", s.amp_min);
  s.amp_max = c.get_double("synth.amp_max", s.amp_max);
  s.sigma_min = c.get_double("synth.sigma_min", s.sigma_min);
  s.sigma_max = c.get_double("synth.sigma_max", s.sigma_max);
  const std::string kind = c.get_string("synth.velocity", "uniform");
  if (kind == "uniform") {
    s.velocity = VelocityKind::Uniform;
  } else if (kind == "rotational") {
    s.velocity = VelocityKind::Rotational;
  } else {
    throw ConfigError("synth.velocity must be 'uniform' or 'rotational'");
  }
  s.u = c.get_double("synth.u", s.u);
  s.v = c.get_double("synth.v", s.v);
  s.omega = c.get_double("synth.omega", s.omega);
  s.velocity_jitter = c.get_double("synth.velocity_jitter", s.velocity_jitter);
  s.turn_rate_max = c.get_double("synth.turn_rate_max", s.turn_rate_max);
  s.regime_frames = static_cast<int>(c.get_int("synth.regime_frames", s.regime_frames));
  s.velocity_shift = c.get_double("synth.velocity_shift", s.velocity_shift);
  s.wind_lead = static_cast<int>(c.get_int("synth.wind_lead", s.wind_lead));
  s.noise = c.get_double("synth.noise", s.noise);
  s.seed = c.get_u64("seed", s.seed);
  s.validate();
  return s;
}

namespace {

struct Blob {
  double x0, y0, amp, sigma;
};

void splat(std::vector<float>& plane, int h, int w, double cx, double cy, double amp,
           double sigma) {
  const double reach = 4.0 * sigma;
  const int r0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
  const int r1 = std::min(h - 1, static_cast<int>(std::ceil(cy + reach)));
  const int c0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
  const int c1 = std::min(w - 1, static_cast<int>(std::ceil(cx + reach)));
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const double d2 = (c - cx) * (c - cx) + (r - cy) * (r - cy);
      if (d2 > reach * reach) continue;
      plane[static_cast<std::size_t>(r) * w + c] += static_cast<float>(amp * std::exp(-d2 * inv));
    }
  }
}

double wrap(double x, double lo, double period) {
  double t = std::fmod(x - lo, period);
  if (t < 0) t += period;
  return lo + t;
}

}  // namespace

SynthStacks synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const GridSpec grid = cfg.grid();
  const int h = cfg.height;
  const int w = cfg.width;
  const std::size_t cells = grid.cells();
  const std::size_t total = static_cast<std::size_t>(cfg.n_frames) * cfg.n_episodes;

  SynthStacks out;
  for (auto* s : {&out.crf, &out.u, &out.v}) {
    s->spec = grid;
    s->timestamps.reserve(total);
    s->values.assign(total * cells, 0.0f);
  }
  out.crf.variable = Variable::CRF;
  out.u.variable = Variable::U;
  out.v.variable = Variable::V;

  // Blobs live on a canvas larger than the view so that the number of
  // visible blobs is stationary: they wrap around outside the view.
  const double margin = std::ceil(4.0 * cfg.sigma_max) + 1.0;
  const double cx = 0.5 * (w - 1);
  const double cy = 0.5 * (h - 1);
  const double orbit_max = std::hypot(0.5 * w, 0.5 * h) + margin;

  for (int e = 0; e < cfg.n_episodes; ++e) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(e)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto sym = [&](double a) { return a * (2.0 * unit(rng) - 1.0); };

    std::vector<Blob> blobs(static_cast<std::size_t>(cfg.n_blobs));
    for (auto& b : blobs) {
      if (cfg.velocity == VelocityKind::Uniform) {
        b.x0 = -margin + unit(rng) * (w + 2 * margin);
        b.y0 = -margin + unit(rng) * (h + 2 * margin);
      } else {
        const double rad = orbit_max * std::sqrt(unit(rng));
        const double ang = 2.0 * std::numbers::pi * unit(rng);
        b.x0 = cx + rad * std::cos(ang);
        b.y0 = cy + rad * std::sin(ang);
      }
      b.amp = cfg.amp_min + unit(rng) * (cfg.amp_max - cfg.amp_min);
      b.sigma = cfg.sigma_min + unit(rng) * (cfg.sigma_max - cfg.sigma_min);
    }
    const double omega = cfg.omega + sym(cfg.velocity_jitter);
    const double turn = sym(cfg.turn_rate_max);
    // Piecewise-constant wind regimes; each new regime perturbs the last.
    const int n_regimes =
        cfg.regime_frames > 0 ? (cfg.n_frames + cfg.regime_frames - 1) / cfg.regime_frames : 1;
    std::vector<double> reg_u(static_cast<std::size_t>(n_regimes)), reg_v(reg_u.size());
    reg_u[0] = cfg.u + sym(cfg.velocity_jitter);
    reg_v[0] = cfg.v + sym(cfg.velocity_jitter);
    for (std::size_t k = 1; k < reg_u.size(); ++k) {
      reg_u[k] = reg_u[k - 1] + sym(cfg.velocity_shift);
      reg_v[k] = reg_v[k - 1] + sym(cfg.velocity_shift);
    }
    auto regime = [&](int frame) {
      if (cfg.regime_frames <= 0 || frame < 0) return std::size_t{0};
      return std::min(static_cast<std::size_t>(frame / cfg.regime_frames), reg_u.size() - 1);
    };
    // Integral of the heading rotation over [a, b]: (int cos, int sin).
    auto rot_integral = [&](double a, double b) {
      if (std::abs(turn) <= 1e-12) return std::pair{b - a, 0.0};
      return std::pair{(std::sin(turn * b) - std::sin(turn * a)) / turn,
                       (std::cos(turn * a) - std::cos(turn * b)) / turn};
    };
    std::normal_distribution<double> noise(0.0, cfg.noise > 0.0 ? cfg.noise : 1.0);
    // Rain moves with the wind of wind_lead frames earlier.
    double dx = 0.0, dy = 0.0;

    for (int f = 0; f < cfg.n_frames; ++f) {
      const std::size_t k = static_cast<std::size_t>(e) * cfg.n_frames + f;
      const std::int64_t ts = cfg.start_time + e * cfg.episode_spacing_s + f * cfg.frame_step_s;
      out.crf.timestamps.push_back(ts);
      out.u.timestamps.push_back(ts);
      out.v.timestamps.push_back(ts);

      std::vector<float> rain(cells, 0.0f);
      float* uu = out.u.values.data() + k * cells;
      float* vv = out.v.values.data() + k * cells;

      if (cfg.velocity == VelocityKind::Uniform) {
        if (f > 0) {
          const int src = f - 1 - cfg.wind_lead;
          const auto [ci, si] = rot_integral(src, src + 1);
          const std::size_t g = regime(src);
          dx += ci * reg_u[g] - si * reg_v[g];
          dy += si * reg_u[g] + ci * reg_v[g];
        }
        for (const auto& b : blobs) {
          const double bx = wrap(b.x0 + dx, -margin, w + 2 * margin);
          const double by = wrap(b.y0 + dy, -margin, h + 2 * margin);
          splat(rain, h, w, bx, by, b.amp, b.sigma);
        }
        const double ang = turn * f;
        const std::size_t g = regime(f);
        const double uf = std::cos(ang) * reg_u[g] - std::sin(ang) * reg_v[g];
        const double vf = std::sin(ang) * reg_u[g] + std::cos(ang) * reg_v[g];
        std::fill(uu, uu + cells, static_cast<float>(uf));
        std::fill(vv, vv + cells, static_cast<float>(vf));
      } else {
        const double ang = omega * f;
        const double ca = std::cos(ang), sa = std::sin(ang);
        for (const auto& b : blobs) {
          const double rx = b.x0 - cx, ry = b.y0 - cy;
          splat(rain, h, w, cx + ca * rx - sa * ry, cy + sa * rx + ca * ry, b.amp, b.sigma);
        }
        for (int r = 0; r < h; ++r) {
          for (int c = 0; c < w; ++c) {
            uu[r * w + c] = static_cast<float>(-omega * (r - cy));
            vv[r * w + c] = static_cast<float>(omega * (c - cx));
          }
        }
      }

      float* dst = out.crf.values.data() + k * cells;
      for (std::size_t i = 0; i < cells; ++i) {
        double x = rain[i];
        if (cfg.noise > 0.0) x += noise(rng);
        dst[i] = static_cast<float>(std::max(0.0, x));
      }
    }
  }
  return out;
}

}  // namespace nowcast

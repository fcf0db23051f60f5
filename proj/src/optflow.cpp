#include "nowcast/optflow.hpp"

#include <algorithm>
#include <cmath>

#include "nowcast/error.hpp"

namespace nowcast {

float FlowField::max_speed() const {
  float s = 0.0f;
  for (std::size_t i = 0; i < u.size(); ++i) s = std::max(s, std::hypot(u[i], v[i]));
  return s;
}

void FlowConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("of.alpha must be >= 0");
  if (!(tol > 0.0)) throw ConfigError("of.tol must be > 0");
  if (max_iters < 1) throw ConfigError("of.max_iters must be >= 1");
  if (!(cfl_max > 0.0)) throw ConfigError("of.cfl_max must be > 0");
  if (pairs < 1) throw ConfigError("of.pairs must be >= 1");
}

FlowConfig FlowConfig::from_config(const Config& c) {
  FlowConfig f;
  f.alpha = c.get_double("of.alpha", f.alpha);
  f.max_iters = static_cast<int>(c.get_int("of.max_iters", f.max_iters));
  f.tol = c.get_double("of.tol", f.tol);
  f.cfl_max = c.get_double("of.cfl_max", f.cfl_max);
  f.pairs = static_cast<int>(c.get_int("of.pairs", f.pairs));
  f.validate();
  return f;
}

namespace {

// Spatial gradients of the mid-time image by central differences (one-sided
// on the border) and the two-frame temporal difference.
struct Derivatives {
  std::vector<double> ix, iy, it;
};

Derivatives derivatives(std::span<const float> prev, std::span<const float> next, int h, int w) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> mid(n);
  Derivatives d;
  d.ix.resize(n);
  d.iy.resize(n);
  d.it.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    mid[i] = 0.5 * (static_cast<double>(prev[i]) + next[i]);
    d.it[i] = static_cast<double>(next[i]) - prev[i];
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const int cl = std::max(c - 1, 0), cr = std::min(c + 1, w - 1);
      const int rd = std::max(r - 1, 0), ru = std::min(r + 1, h - 1);
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      d.ix[i] = cr > cl ? (mid[r * w + cr] - mid[r * w + cl]) / (cr - cl) : 0.0;
      d.iy[i] = ru > rd ? (mid[ru * w + c] - mid[rd * w + c]) / (ru - rd) : 0.0;
    }
  }
  return d;
}

double energy_of(const Derivatives& d, const std::vector<double>& u, const std::vector<double>& v,
                 int h, int w, double alpha) {
  double data = 0.0, smooth = 0.0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      const double res = d.ix[i] * u[i] + d.iy[i] * v[i] + d.it[i];
      data += res * res;
      if (c + 1 < w) {
        const double du = u[i + 1] - u[i], dv = v[i + 1] - v[i];
        smooth += du * du + dv * dv;
      }
      if (r + 1 < h) {
        const double du = u[i + w] - u[i], dv = v[i + w] - v[i];
        smooth += du * du + dv * dv;
      }
    }
  }
  return data + alpha * smooth;
}

void check_finite(std::span<const float> xs) {
  if (!std::all_of(xs.begin(), xs.end(), [](float x) { return std::isfinite(x); }))
    throw NumericalError("optical flow input holds non-finite values");
}

}  // namespace

double flow_energy(std::span<const float> prev, std::span<const float> next, int h, int w,
                   const FlowField& flow, double alpha) {
  const auto d = derivatives(prev, next, h, w);
  std::vector<double> u(flow.u.begin(), flow.u.end()), v(flow.v.begin(), flow.v.end());
  return energy_of(d, u, v, h, w, alpha);
}

FlowField estimate_flow(std::span<const float> prev, std::span<const float> next, int h, int w,
                        const FlowConfig& cfg, FlowTrace* trace) {
  cfg.validate();
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (h <= 0 || w <= 0 || prev.size() != n || next.size() != n)
    throw ShapeMismatch("optical flow frames must both be H*W");
  check_finite(prev);
  check_finite(next);

  const Derivatives d = derivatives(prev, next, h, w);
  std::vector<double> u(n, 0.0), v(n, 0.0);
  std::vector<double> u_keep, v_keep;
  double energy = energy_of(d, u, v, h, w, cfg.alpha);
  if (trace) trace->energy.assign(1, energy);

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    u_keep = u;
    v_keep = v;
    for (int color = 0; color < 2; ++color) {
      for (int r = 0; r < h; ++r) {
        for (int c = (r + color) % 2; c < w; c += 2) {
          const std::size_t i = static_cast<std::size_t>(r) * w + c;
          double su = 0.0, sv = 0.0;
          int nb = 0;
          if (c > 0) { su += u[i - 1]; sv += v[i - 1]; ++nb; }
          if (c + 1 < w) { su += u[i + 1]; sv += v[i + 1]; ++nb; }
          if (r > 0) { su += u[i - w]; sv += v[i - w]; ++nb; }
          if (r + 1 < h) { su += u[i + w]; sv += v[i + w]; ++nb; }
          const double ub = nb ? su / nb : u[i];
          const double vb = nb ? sv / nb : v[i];
          const double an = cfg.alpha * nb;
          const double g2 = d.ix[i] * d.ix[i] + d.iy[i] * d.iy[i];
          const double denom = an + g2;
          if (denom < 1e-300) {
            u[i] = ub;
            v[i] = vb;
            continue;
          }
          const double k = (d.ix[i] * ub + d.iy[i] * vb + d.it[i]) / denom;
          u[i] = ub - d.ix[i] * k;
          v[i] = vb - d.iy[i] * k;
        }
      }
    }
    const double next_energy = energy_of(d, u, v, h, w, cfg.alpha);
    if (next_energy > energy) {
      // Round-off at convergence; keep the better iterate.
      u.swap(u_keep);
      v.swap(v_keep);
      break;
    }
    const double decrease = energy - next_energy;
    energy = next_energy;
    if (trace) trace->energy.push_back(energy);
    if (decrease <= cfg.tol * std::max(energy, 1e-300)) break;
  }

  FlowField out(h, w);
  for (std::size_t i = 0; i < n; ++i) {
    out.u[i] = static_cast<float>(u[i]);
    out.v[i] = static_cast<float>(v[i]);
  }
  return out;
}

FlowField estimate_flow(const GridFrame& prev, const GridFrame& next, const FlowConfig& cfg,
                        FlowTrace* trace) {
  if (!prev.spec().same_mesh(next.spec())) throw ShapeMismatch("flow frames on different grids");
  return estimate_flow(prev.values(), next.values(), prev.height(), prev.width(), cfg, trace);
}

namespace {

struct Departure {
  double x, y;
};

double sample(std::span<const float> f, int h, int w, double x, double y, Boundary b) {
  constexpr double eps = 1e-9;
  if (b == Boundary::ZeroInflow) {
    if (x < -eps || y < -eps || x > w - 1 + eps || y > h - 1 + eps) return 0.0;
  }
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = std::min(static_cast<int>(std::floor(x)), std::max(w - 2, 0));
  const int y0 = std::min(static_cast<int>(std::floor(y)), std::max(h - 2, 0));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double wx = x - x0, wy = y - y0;
  const auto at = [&](int r, int c) { return static_cast<double>(f[static_cast<std::size_t>(r) * w + c]); };
  return (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
         wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
}

std::vector<Departure> departures(const FlowField& flow, double dt, double cfl_max) {
  const int h = flow.height, w = flow.width;
  const double reach = static_cast<double>(flow.max_speed()) * std::abs(dt);
  const int n_sub = std::max(1, static_cast<int>(std::ceil(reach / cfl_max - 1e-12)));
  const double step = dt / n_sub;
  std::vector<Departure> out(flow.cells());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double x = c, y = r;
      for (int s = 0; s < n_sub; ++s) {
        const double uu = sample(flow.u, h, w, x, y, Boundary::Clamp);
        const double vv = sample(flow.v, h, w, x, y, Boundary::Clamp);
        x -= uu * step;
        y -= vv * step;
      }
      out[static_cast<std::size_t>(r) * w + c] = {x, y};
    }
  }
  return out;
}

std::vector<float> resample_at(std::span<const float> f, int h, int w,
                               const std::vector<Departure>& dep, Boundary b) {
  std::vector<float> out(dep.size());
  for (std::size_t i = 0; i < dep.size(); ++i)
    out[i] = static_cast<float>(sample(f, h, w, dep[i].x, dep[i].y, b));
  return out;
}

void check_flow(const FlowField& flow, int h, int w) {
  if (flow.height != h || flow.width != w) throw ShapeMismatch("flow and field shapes differ");
  check_finite(flow.u);
  check_finite(flow.v);
}

}  // namespace

std::vector<float> advect(std::span<const float> field, int h, int w, const FlowField& flow,
                          double dt_steps, double cfl_max, Boundary boundary) {
  if (field.size() != static_cast<std::size_t>(h) * w) throw ShapeMismatch("field is not H*W");
  check_flow(flow, h, w);
  if (!(cfl_max > 0.0)) throw ContractViolation("cfl_max must be > 0");
  return resample_at(field, h, w, departures(flow, dt_steps, cfl_max), boundary);
}

GridFrame advect(const GridFrame& field, const FlowField& flow, double dt_steps, double cfl_max) {
  if (!field.fully_valid()) throw NumericalError("cannot advect a frame with missing data");
  const Boundary b = field.variable() == Variable::CRF ? Boundary::ZeroInflow : Boundary::Clamp;
  auto out = advect(field.values(), field.height(), field.width(), flow, dt_steps, cfl_max, b);
  const auto ts = field.timestamp() + static_cast<std::int64_t>(std::llround(dt_steps * 300.0));
  return GridFrame(field.spec(), field.variable(), ts, std::move(out), field.scale());
}

FlowField advect(const FlowField& field, const FlowField& flow, double dt_steps, double cfl_max) {
  check_flow(field, flow.height, flow.width);
  const auto dep = departures(flow, dt_steps, cfl_max);
  FlowField out(field.height, field.width);
  out.u = resample_at(field.u, field.height, field.width, dep, Boundary::Clamp);
  out.v = resample_at(field.v, field.height, field.width, dep, Boundary::Clamp);
  return out;
}

FlowForecast of_forecast(std::span<const std::vector<float>> frames, int h, int w,
                         const FlowConfig& cfg, int lead_steps, const ClassScheme& scheme,
                         const NormStats& stats) {
  cfg.validate();
  if (frames.size() < 2) throw ContractViolation("optical flow forecast needs at least two frames");
  if (lead_steps < 0) throw ContractViolation("lead_steps must be >= 0");
  const std::size_t n = static_cast<std::size_t>(h) * w;
  for (const auto& f : frames) {
    if (f.size() != n) throw ShapeMismatch("frames must be H*W");
    check_finite(f);
  }

  auto normalized = [&](const std::vector<float>& f) {
    std::vector<float> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = normalize_crf_value(f[i], stats);
    return out;
  };

  const int pairs = std::min<int>(cfg.pairs, static_cast<int>(frames.size()) - 1);
  FlowField flow(h, w);
  for (int p = 0; p < pairs; ++p) {
    const std::size_t k = frames.size() - 1 - static_cast<std::size_t>(p);
    const FlowField f = estimate_flow(normalized(frames[k - 1]), normalized(frames[k]), h, w, cfg);
    for (std::size_t i = 0; i < n; ++i) {
      flow.u[i] += f.u[i] / static_cast<float>(pairs);
      flow.v[i] += f.v[i] / static_cast<float>(pairs);
    }
  }

  FlowForecast out;
  out.flow = flow;
  std::vector<float> rain = frames.back();
  FlowField velocity = flow;
  for (int s = 0; s < lead_steps; ++s) {
    // Rain and velocity share the departure points of this Euler step.
    const auto dep = departures(velocity, 1.0, cfg.cfl_max);
    rain = resample_at(rain, h, w, dep, Boundary::ZeroInflow);
    FlowField next(h, w);
    next.u = resample_at(velocity.u, h, w, dep, Boundary::Clamp);
    next.v = resample_at(velocity.v, h, w, dep, Boundary::Clamp);
    velocity = std::move(next);
  }
  out.classes = threshold_classes(rain, h, w, scheme);
  out.probs = to_prob_map(out.classes);
  out.rain = std::move(rain);
  return out;
}

FlowForecast of_forecast(std::span<const GridFrame> frames, const FlowConfig& cfg, int lead_steps,
                         const ClassScheme& scheme, const NormStats& stats) {
  if (frames.size() < 2) throw ContractViolation("optical flow forecast needs at least two frames");
  std::vector<std::vector<float>> planes;
  for (const auto& f : frames) {
    if (f.variable() != Variable::CRF || f.scale() != Scale::Physical)
      throw ContractViolation("of_forecast expects physical CRF frames");
    if (!f.spec().same_mesh(frames.front().spec())) throw ShapeMismatch("frames on different grids");
    planes.emplace_back(f.values().begin(), f.values().end());
  }
  return of_forecast(planes, frames.front().height(), frames.front().width(), cfg, lead_steps,
                     scheme, stats);
}

ClassMap persistence_forecast(const GridFrame& last_frame, const ClassScheme& scheme,
                              int lead_steps) {
  if (lead_steps < 0) throw ContractViolation("lead_steps must be >= 0");
  return threshold_classes(last_frame, scheme);
}

}  // namespace nowcast

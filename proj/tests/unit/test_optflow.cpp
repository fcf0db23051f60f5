#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "nowcast/error.hpp"
#include "nowcast/optflow.hpp"

using namespace nowcast;

namespace {

std::vector<float> blob(int h, int w, double cx, double cy, double sigma, double amp = 1.0) {
  std::vector<float> out(static_cast<std::size_t>(h) * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double d2 = (c - cx) * (c - cx) + (r - cy) * (r - cy);
      out[static_cast<std::size_t>(r) * w + c] =
          static_cast<float>(amp * std::exp(-d2 / (2 * sigma * sigma)));
    }
  return out;
}

double sum(std::span<const float> xs) {
  double s = 0;
  for (float x : xs) s += x;
  return s;
}

}  // namespace

TEST_CASE("identical frames give zero flow") {
  const auto f = blob(16, 16, 7.5, 7.5, 2.5);
  const FlowField flow = estimate_flow(f, f, 16, 16, FlowConfig{});
  CHECK(flow.max_speed() == 0.0f);
}

TEST_CASE("a translated blob is recovered over its support") {
  const int h = 32, w = 32;
  const double du = 1.0, dv = 0.5;
  const auto a = blob(h, w, 14.0, 15.0, 3.0);
  const auto b = blob(h, w, 14.0 + du, 15.0 + dv, 3.0);
  const FlowField flow = estimate_flow(a, b, h, w, FlowConfig{});
  double err = 0;
  int n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < 0.1f) continue;
    err += std::hypot(flow.u[i] - du, flow.v[i] - dv);
    ++n;
  }
  CHECK(n > 20);
  CHECK(err / n < 0.2);
}

TEST_CASE("a large smoothness weight flattens the flow") {
  const auto a = blob(24, 24, 10.0, 11.0, 2.5);
  const auto b = blob(24, 24, 11.0, 11.0, 2.5);
  FlowConfig stiff;
  stiff.alpha = 1e4;
  const FlowField f = estimate_flow(a, b, 24, 24, stiff);
  float lo = f.u[0], hi = f.u[0];
  for (float x : f.u) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  CHECK(hi - lo < 0.05f * std::max(std::abs(hi), 1e-3f));
}

TEST_CASE("solver energy never increases") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<float> u01(0.0f, 1.0f);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<float> a(20 * 20), b(20 * 20);
    for (auto& x : a) x = u01(rng);
    for (auto& x : b) x = u01(rng);
    FlowTrace trace;
    FlowConfig cfg;
    cfg.max_iters = 300;
    const FlowField f = estimate_flow(a, b, 20, 20, cfg, &trace);
    REQUIRE(trace.energy.size() >= 2);
    for (std::size_t k = 1; k < trace.energy.size(); ++k)
      CHECK(trace.energy[k] <= trace.energy[k - 1]);
    CHECK(flow_energy(a, b, 20, 20, f, cfg.alpha) ==
          doctest::Approx(trace.energy.back()).epsilon(1e-4));
  }
}

TEST_CASE("flow rejects bad inputs") {
  std::vector<float> a(4, 0.0f), b(3, 0.0f);
  CHECK_THROWS_AS(estimate_flow(a, b, 2, 2, FlowConfig{}), ShapeMismatch);
  std::vector<float> c(4, 0.0f);
  c[1] = std::nanf("");
  CHECK_THROWS_AS(estimate_flow(a, c, 2, 2, FlowConfig{}), NumericalError);
  FlowConfig bad;
  bad.alpha = -1.0;
  CHECK_THROWS_AS(estimate_flow(a, a, 2, 2, bad), ConfigError);
}

TEST_CASE("advection by zero flow is the identity") {
  const auto f = blob(9, 11, 4.2, 3.7, 1.5);
  const auto out = advect(f, 9, 11, FlowField(9, 11), 5.0, 1.0, Boundary::ZeroInflow);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(out[i] == doctest::Approx(f[i]).epsilon(1e-7));
}

TEST_CASE("a delta moves one pixel per step under a unit field") {
  const int h = 9, w = 9;
  std::vector<float> f(h * w, 0.0f);
  f[4 * w + 4] = 1.0f;
  const auto east = advect(f, h, w, FlowField(h, w, 1.0f, 0.0f), 1.0, 1.0, Boundary::ZeroInflow);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      CHECK(std::abs(east[r * w + c] - ((r == 4 && c == 5) ? 1.0f : 0.0f)) < 1e-4f);

  const auto north2 = advect(f, h, w, FlowField(h, w, 0.0f, 1.0f), 2.0, 0.5, Boundary::ZeroInflow);
  CHECK(std::abs(north2[6 * w + 4] - 1.0f) < 1e-4f);
  CHECK(std::abs(sum(north2) - 1.0) < 1e-4);
}

TEST_CASE("advection is linear in the field") {
  const int h = 12, w = 10;
  const auto a = blob(h, w, 3.0, 4.0, 1.7);
  const auto b = blob(h, w, 6.0, 7.0, 2.3);
  FlowField flow(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      flow.u[r * w + c] = 0.3f + 0.05f * r;
      flow.v[r * w + c] = -0.2f + 0.04f * c;
    }
  std::vector<float> mix(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) mix[i] = 2.0f * a[i] + 0.5f * b[i];
  const auto ta = advect(a, h, w, flow, 1.5, 1.0, Boundary::ZeroInflow);
  const auto tb = advect(b, h, w, flow, 1.5, 1.0, Boundary::ZeroInflow);
  const auto tm = advect(mix, h, w, flow, 1.5, 1.0, Boundary::ZeroInflow);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(tm[i] == doctest::Approx(2.0f * ta[i] + 0.5f * tb[i]).epsilon(1e-5));
}

TEST_CASE("uniform integer shift conserves interior mass") {
  const int h = 20, w = 20;
  const auto f = blob(h, w, 8.0, 9.0, 1.5);
  const auto out = advect(f, h, w, FlowField(h, w, 2.0f, -1.0f), 1.0, 1.0, Boundary::ZeroInflow);
  CHECK(sum(out) == doctest::Approx(sum(f)).epsilon(1e-5));
}

TEST_CASE("mirroring the frames mirrors the flow") {
  const int h = 18, w = 18;
  const auto a = blob(h, w, 7.0, 8.0, 2.0);
  const auto b = blob(h, w, 8.0, 8.5, 2.0);
  auto flip = [&](const std::vector<float>& f) {
    std::vector<float> out(f.size());
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) out[r * w + (w - 1 - c)] = f[r * w + c];
    return out;
  };
  const FlowField f = estimate_flow(a, b, h, w, FlowConfig{});
  const FlowField g = estimate_flow(flip(a), flip(b), h, w, FlowConfig{});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      CHECK(g.u[r * w + (w - 1 - c)] == doctest::Approx(-f.u[r * w + c]).epsilon(1e-3).scale(1e-3));
      CHECK(g.v[r * w + (w - 1 - c)] == doctest::Approx(f.v[r * w + c]).epsilon(1e-3).scale(1e-3));
    }
}

TEST_CASE("optical flow forecast at lead 0 thresholds the last frame") {
  const int h = 16, w = 16;
  std::vector<std::vector<float>> frames{blob(h, w, 6, 7, 2.0, 0.5), blob(h, w, 7, 7, 2.0, 0.5)};
  const ClassScheme scheme;
  NormStats stats;
  stats.max_crf = 0.5;
  const FlowForecast fc = of_forecast(frames, h, w, FlowConfig{}, 0, scheme, stats);
  CHECK(fc.classes == threshold_classes(frames.back(), h, w, scheme));
  CHECK_THROWS_AS(of_forecast(std::span(frames).first(1), h, w, FlowConfig{}, 1, scheme, stats),
                  ContractViolation);
}

TEST_CASE("persistence ignores the lead time") {
  const GridSpec spec{4, 4, 0, 0, 0.01, 0.01};
  const GridFrame last(spec, Variable::CRF, 0, blob(4, 4, 1, 1, 1.0, 0.5));
  const ClassScheme scheme;
  CHECK(persistence_forecast(last, scheme, 0) == persistence_forecast(last, scheme, 12));
  CHECK(persistence_forecast(last, scheme, 6) == threshold_classes(last, scheme));
}

#pragma once

// Central-difference gradient checks in double precision, shared by the unit
// tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "nowcast/nn/layers.hpp"
#include "nowcast/nn/unet.hpp"

namespace gradcheck {

using nowcast::nn::Mode;
using nowcast::nn::ParamStore;
using nowcast::nn::Shape;
using Tensor = nowcast::nn::Tensor<double>;

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor t(s);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

// Every index when n <= limit, otherwise `limit` distinct random ones.
inline std::vector<std::size_t> pick(std::size_t n, std::size_t limit, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n > limit) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(limit);
  }
  return idx;
}

struct Report {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

using Forward = std::function<Tensor(const Tensor&)>;
using Backward = std::function<Tensor(const Tensor&)>;

// Loss = <r, f(x)> for a fixed random r. Compares the backward pass against
// central differences for input entries and every trainable parameter in
// `store` (sampled down to `limit` entries per tensor).
inline Report check(Tensor x, ParamStore<double>* store, const Forward& fwd, const Backward& bwd,
                    std::uint64_t seed, std::size_t limit = 64, double h = 1e-6) {
  std::mt19937_64 rng(seed);
  const Tensor y0 = fwd(x);
  const Tensor r = random_tensor(y0.shape(), rng);
  auto loss = [&](const Tensor& in) {
    const Tensor y = fwd(in);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };

  if (store) store->zero_grad();
  fwd(x);
  const Tensor dx = bwd(r);

  Report rep;
  auto record = [&](double a, double n) {
    rep.max_rel = std::max(rep.max_rel, rel_error(a, n));
    ++rep.checked;
  };
  for (std::size_t i : pick(x.size(), limit, rng)) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = loss(x);
    x[i] = keep - h;
    const double down = loss(x);
    x[i] = keep;
    record(dx[i], (up - down) / (2 * h));
  }
  if (store) {
    for (auto& p : *store) {
      if (!p.trainable) continue;
      const std::vector<double> grad = p.grad;
      for (std::size_t i : pick(p.size(), limit, rng)) {
        const double keep = p.value[i];
        p.value[i] = keep + h;
        const double up = loss(x);
        p.value[i] = keep - h;
        const double down = loss(x);
        p.value[i] = keep;
        record(grad[i], (up - down) / (2 * h));
      }
    }
  }
  return rep;
}

struct Named {
  std::string name;
  Report report;
};

// One check per layer type, plus the sigmoid derivative.
inline std::vector<Named> layer_checks(std::uint64_t seed) {
  namespace nn = nowcast::nn;
  std::vector<Named> out;
  std::mt19937_64 rng(seed);
  const Shape s{2, 3, 6, 6};

  {
    ParamStore<double> store;
    nn::Conv2d<double> conv(store, "c", 3, 4, 3, true);
    conv.init(store, rng);
    for (auto& v : store.find("c.bias")->value) v = std::normal_distribution<double>()(rng);
    out.push_back({"conv3x3", check(random_tensor(s, rng), &store,
                                    [&](const Tensor& x) { return conv.forward(store, x); },
                                    [&](const Tensor& d) { return conv.backward(store, d); },
                                    seed + 1)});
  }
  {
    ParamStore<double> store;
    nn::Conv2d<double> conv(store, "h", 3, 2, 1, true);
    conv.init(store, rng);
    out.push_back({"conv1x1", check(random_tensor(s, rng), &store,
                                    [&](const Tensor& x) { return conv.forward(store, x); },
                                    [&](const Tensor& d) { return conv.backward(store, d); },
                                    seed + 2)});
  }
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    ParamStore<double> store;
    nn::BatchNorm2d<double> bn(store, "bn", 3, 1e-5, 0.1);
    for (auto& v : store.find("bn.gamma")->value) v = 0.5 + std::uniform_real_distribution<double>()(rng);
    for (auto& v : store.find("bn.beta")->value) v = std::normal_distribution<double>()(rng);
    for (auto& v : store.find("bn.running_mean")->value) v = 0.3;
    for (auto& v : store.find("bn.running_var")->value) v = 1.7;
    out.push_back({mode == Mode::Train ? "batchnorm.train" : "batchnorm.eval",
                   check(random_tensor(s, rng, 2.0), &store,
                         [&, mode](const Tensor& x) { return bn.forward(store, x, mode); },
                         [&](const Tensor& d) { return bn.backward(store, d); }, seed + 3)});
  }
  {
    nn::ReLU<double> relu;
    out.push_back({"relu", check(random_tensor(s, rng), nullptr,
                                 [&](const Tensor& x) { return relu.forward(x); },
                                 [&](const Tensor& d) { return relu.backward(d); }, seed + 4)});
  }
  {
    nn::MaxPool2<double> pool;
    out.push_back({"maxpool", check(random_tensor(s, rng), nullptr,
                                    [&](const Tensor& x) { return pool.forward(x); },
                                    [&](const Tensor& d) { return pool.backward(d); }, seed + 5)});
  }
  {
    const Shape in{2, 3, 3, 4};
    out.push_back({"upsample", check(random_tensor(in, rng), nullptr,
                                     [](const Tensor& x) { return nn::upsample2(x); },
                                     [in](const Tensor& d) { return nn::upsample2_transpose(d, in); },
                                     seed + 6)});
  }
  {
    const Tensor other = random_tensor(Shape{2, 2, 6, 6}, rng);
    out.push_back({"concat", check(random_tensor(s, rng), nullptr,
                                   [&](const Tensor& x) { return nn::concat_channels(x, other); },
                                   [&](const Tensor& d) {
                                     Tensor da, db;
                                     nn::split_channels(d, 3, da, db);
                                     return da;
                                   },
                                   seed + 7)});
  }
  {
    // Backward is the analytic derivative p(1 - p) of the last forward input.
    Tensor last;
    out.push_back({"sigmoid", check(random_tensor(s, rng, 3.0), nullptr,
                                    [&](const Tensor& x) {
                                      last = x;
                                      return nn::sigmoid(x);
                                    },
                                    [&](const Tensor& d) {
                                      Tensor g(d.shape());
                                      for (std::size_t i = 0; i < d.size(); ++i) {
                                        const double p = 1.0 / (1.0 + std::exp(-last[i]));
                                        g[i] = d[i] * p * (1 - p);
                                      }
                                      return g;
                                    },
                                    seed + 8)});
  }
  {
    ParamStore<double> store;
    nn::ConvBlock<double> block(store, "b", 3, 4, 1e-5, 0.1);
    block.init(store, rng);
    out.push_back({"convblock", check(random_tensor(s, rng), &store,
                                      [&](const Tensor& x) { return block.forward(store, x, Mode::Train); },
                                      [&](const Tensor& d) { return block.backward(store, d); },
                                      seed + 9)});
  }
  return out;
}

// Toy U-Net on 16x16 inputs, base width 4, depth 4, batch 4. The deepest
// levels are 1x1, so batch norm there sees only N values per channel; with
// N = 2 the loss is so curved that central differences lose accuracy.
inline Report unet_check(std::uint64_t seed, std::size_t limit = 8) {
  nowcast::nn::UNetConfig cfg;
  cfg.in_channels = 3;
  cfg.n_classes = 3;
  cfg.base_width = 4;
  cfg.depth = 4;
  nowcast::nn::UNet<double> net(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  const Tensor x = random_tensor(Shape{4, 3, 16, 16}, rng);
  return check(x, &net.params(),
               [&](const Tensor& in) { return net.forward_logits(in, Mode::Train); },
               [&](const Tensor& d) { return net.backward(d); }, seed + 11, limit);
}

}  // namespace gradcheck

#include "nowcast/nn/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

#include "nowcast/error.hpp"

namespace nowcast::nn {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

template <typename T>
std::size_t ParamStore<T>::add(const std::string& name, std::vector<int> dims, bool trainable,
                               T fill) {
  if (index_.count(name)) throw ContractViolation("duplicate parameter name " + name);
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  Parameter<T> p;
  p.name = name;
  p.dims = std::move(dims);
  p.trainable = trainable;
  p.value.assign(n, fill);
  if (trainable) {
    p.grad.assign(n, T(0));
    p.moment1.assign(n, T(0));
    p.moment2.assign(n, T(0));
  }
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.size() - 1;
}

template <typename T>
const Parameter<T>* ParamStore<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
Parameter<T>* ParamStore<T>::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

template <typename T>
std::size_t ParamStore<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.trainable) n += p.size();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Rows index (ci, ky, kx), columns index output pixels.
template <typename T>
void im2col(const T* x, int c, int h, int w, int k, T* cols) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
        const T* src = x + ci * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          T* dst = row + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - pad;
            dst[xx] = (sx < 0 || sx >= w) ? T(0) : src[sy * w + sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int c, int h, int w, int k, T* dx) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
        T* dst = dx + ci * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (int xx = 0; xx < w; ++xx) {
            const int sx = xx + kx - pad;
            if (sx >= 0 && sx < w) dst[sy * w + sx] += row[static_cast<std::size_t>(y) * w + xx];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, std::span<const T> kernel, std::span<const T> bias,
                 int out_c, int k) {
  const Shape s = x.shape();
  const std::size_t rows = static_cast<std::size_t>(s.c) * k * k;
  if (kernel.size() != static_cast<std::size_t>(out_c) * rows)
    throw ShapeMismatch("kernel does not match (out_c, in_c, k, k)");
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(out_c))
    throw ShapeMismatch("bias does not match out_c");

  const auto hw = static_cast<Eigen::Index>(s.plane());
  Tensor<T> y(Shape{s.n, out_c, s.h, s.w});
  Eigen::Map<const RowMat<T>> wm(kernel.data(), out_c, static_cast<Eigen::Index>(rows));
  std::vector<T> cols(k == 1 ? 0 : rows * s.plane());
  for (int n = 0; n < s.n; ++n) {
    const T* src = x.plane(n, 0);
    if (k != 1) {
      im2col(src, s.c, s.h, s.w, k, cols.data());
      src = cols.data();
    }
    Eigen::Map<const RowMat<T>> cm(src, static_cast<Eigen::Index>(rows), hw);
    Eigen::Map<RowMat<T>> ym(y.plane(n, 0), out_c, hw);
    ym.noalias() = wm * cm;
    if (!bias.empty()) {
      for (int o = 0; o < out_c; ++o) ym.row(o).array() += bias[static_cast<std::size_t>(o)];
    }
  }
  return y;
}

template <typename T>
Conv2d<T>::Conv2d(ParamStore<T>& store, const std::string& name, int in_c, int out_c, int kernel,
                  bool with_bias)
    : in_c_(in_c), out_c_(out_c), k_(kernel) {
  if (in_c < 1 || out_c < 1) throw ContractViolation("conv channels must be >= 1");
  if (kernel != 1 && kernel != 3) throw ContractViolation("conv kernel must be 1 or 3");
  weight_ = store.add(name + ".weight", {out_c, in_c, kernel, kernel}, true);
  if (with_bias) bias_ = store.add(name + ".bias", {out_c}, true);
}

template <typename T>
void Conv2d<T>::init(ParamStore<T>& store, std::mt19937_64& rng) const {
  const double fan_in = static_cast<double>(in_c_) * k_ * k_;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : store[weight_].value) v = static_cast<T>(dist(rng));
  if (bias_) std::fill(store[*bias_].value.begin(), store[*bias_].value.end(), T(0));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const ParamStore<T>& store, const Tensor<T>& x) {
  if (x.shape().c != in_c_) throw ShapeMismatch("conv input channels " + x.shape().str());
  x_ = x;
  std::span<const T> bias;
  if (bias_) bias = store[*bias_].value;
  return conv2d<T>(x, store[weight_].value, bias, out_c_, k_);
}

template <typename T>
Tensor<T> Conv2d<T>::backward(ParamStore<T>& store, const Tensor<T>& dy) {
  const Shape s = x_.shape();
  if (dy.shape() != Shape{s.n, out_c_, s.h, s.w}) throw ShapeMismatch("conv grad shape");
  const auto rows = static_cast<Eigen::Index>(in_c_) * k_ * k_;
  const auto hw = static_cast<Eigen::Index>(s.plane());

  Eigen::Map<const RowMat<T>> wm(store[weight_].value.data(), out_c_, rows);
  Eigen::Map<RowMat<T>> dw(store[weight_].grad.data(), out_c_, rows);
  Tensor<T> dx(s);
  std::vector<T> cols(k_ == 1 ? 0 : static_cast<std::size_t>(rows * hw));
  std::vector<T> dcols(static_cast<std::size_t>(rows * hw));
  for (int n = 0; n < s.n; ++n) {
    Eigen::Map<const RowMat<T>> dym(dy.plane(n, 0), out_c_, hw);
    const T* src = x_.plane(n, 0);
    if (k_ != 1) {
      im2col(src, s.c, s.h, s.w, k_, cols.data());
      src = cols.data();
    }
    Eigen::Map<const RowMat<T>> cm(src, rows, hw);
    dw.noalias() += dym * cm.transpose();
    if (bias_) {
      T* db = store[*bias_].grad.data();
      for (int o = 0; o < out_c_; ++o) db[o] += dym.row(o).sum();
    }
    if (k_ == 1) {
      Eigen::Map<RowMat<T>> dxm(dx.plane(n, 0), rows, hw);
      dxm.noalias() = wm.transpose() * dym;
    } else {
      Eigen::Map<RowMat<T>> dcm(dcols.data(), rows, hw);
      dcm.noalias() = wm.transpose() * dym;
      col2im(dcols.data(), s.c, s.h, s.w, k_, dx.plane(n, 0));
    }
  }
  return dx;
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(ParamStore<T>& store, const std::string& name, int channels,
                            double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  gamma_ = store.add(name + ".gamma", {channels}, true, T(1));
  beta_ = store.add(name + ".beta", {channels}, true, T(0));
  running_mean_ = store.add(name + ".running_mean", {channels}, false, T(0));
  running_var_ = store.add(name + ".running_var", {channels}, false, T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(ParamStore<T>& store, const Tensor<T>& x, Mode mode) {
  const Shape s = x.shape();
  if (s.c != channels_) throw ShapeMismatch("batch norm channels " + s.str());
  mode_ = mode;
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * plane;
  const auto& gamma = store[gamma_].value;
  const auto& beta = store[beta_].value;
  auto& rmean = store[running_mean_].value;
  auto& rvar = store[running_var_].value;

  xhat_ = Tensor<T>(s);
  inv_std_.assign(static_cast<std::size_t>(channels_), T(0));
  Tensor<T> y(s);
  for (int c = 0; c < channels_; ++c) {
    double mean, var;
    if (mode == Mode::Train) {
      double sum = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      mean = sum / count;
      double sq = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const T* p = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / count;
      const double unbiased = count > 1 ? sq / (count - 1) : var;
      rmean[c] = static_cast<T>((1.0 - momentum_) * rmean[c] + momentum_ * mean);
      rvar[c] = static_cast<T>((1.0 - momentum_) * rvar[c] + momentum_ * unbiased);
    } else {
      mean = rmean[c];
      var = rvar[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = static_cast<T>(inv);
    for (int n = 0; n < s.n; ++n) {
      const T* p = x.plane(n, c);
      T* xh = xhat_.plane(n, c);
      T* out = y.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = static_cast<T>((p[i] - mean) * inv);
        out[i] = xh[i] * gamma[c] + beta[c];
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(ParamStore<T>& store, const Tensor<T>& dy) {
  const Shape s = xhat_.shape();
  if (dy.shape() != s) throw ShapeMismatch("batch norm grad shape");
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * plane;
  const auto& gamma = store[gamma_].value;
  auto& dgamma = store[gamma_].grad;
  auto& dbeta = store[beta_].grad;

  Tensor<T> dx(s);
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const T* g = dy.plane(n, c);
      const T* xh = xhat_.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += g[i];
        sum_dy_xhat += static_cast<double>(g[i]) * xh[i];
      }
    }
    dgamma[c] += static_cast<T>(sum_dy_xhat);
    dbeta[c] += static_cast<T>(sum_dy);
    const double scale = static_cast<double>(gamma[c]) * inv_std_[c];
    for (int n = 0; n < s.n; ++n) {
      const T* g = dy.plane(n, c);
      const T* xh = xhat_.plane(n, c);
      T* out = dx.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        if (mode_ == Mode::Train) {
          out[i] = static_cast<T>(scale * (g[i] - sum_dy / count - xh[i] * sum_dy_xhat / count));
        } else {
          out[i] = static_cast<T>(scale * g[i]);
        }
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  active_.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    active_[i] = x[i] > T(0);
    y[i] = active_[i] ? x[i] : T(0);
  }
  return y;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& dy) const {
  if (dy.size() != active_.size()) throw ShapeMismatch("relu grad shape");
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = active_[i] ? dy[i] : T(0);
  return dx;
}

template <typename T>
Tensor<T> MaxPool2<T>::forward(const Tensor<T>& x) {
  const Shape s = x.shape();
  if (s.h % 2 || s.w % 2) throw ShapeMismatch("max pooling needs even H and W, got " + s.str());
  in_shape_ = s;
  const Shape o{s.n, s.c, s.h / 2, s.w / 2};
  Tensor<T> y(o);
  argmax_.resize(o.size());
  std::size_t k = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      for (int yy = 0; yy < o.h; ++yy) {
        for (int xx = 0; xx < o.w; ++xx, ++k) {
          std::uint32_t best = static_cast<std::uint32_t>((2 * yy) * s.w + 2 * xx);
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const auto idx = static_cast<std::uint32_t>((2 * yy + dy) * s.w + 2 * xx + dx);
              if (p[idx] > p[best]) best = idx;
            }
          }
          argmax_[k] = best;
          y[k] = p[best];
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2<T>::backward(const Tensor<T>& dy) const {
  if (dy.size() != argmax_.size()) throw ShapeMismatch("max pool grad shape");
  Tensor<T> dx(in_shape_);
  const std::size_t out_plane = dy.shape().plane();
  for (int n = 0; n < in_shape_.n; ++n) {
    for (int c = 0; c < in_shape_.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * in_shape_.c + c) * out_plane;
      T* d = dx.plane(n, c);
      for (std::size_t i = 0; i < out_plane; ++i) d[argmax_[base + i]] += dy[base + i];
    }
  }
  return dx;
}

namespace {

// Source coordinate of output index i when doubling n samples, corners aligned.
struct Tap {
  int i0, i1;
  double w;
};

std::vector<Tap> taps(int n) {
  std::vector<Tap> out(static_cast<std::size_t>(2 * n));
  for (int i = 0; i < 2 * n; ++i) {
    const double src = n == 1 ? 0.0 : static_cast<double>(i) * (n - 1) / (2 * n - 1);
    const int i0 = std::min(static_cast<int>(std::floor(src)), std::max(n - 2, 0));
    const int i1 = std::min(i0 + 1, n - 1);
    out[static_cast<std::size_t>(i)] = {i0, i1, src - i0};
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  const Shape s = x.shape();
  const Shape o{s.n, s.c, 2 * s.h, 2 * s.w};
  const auto ty = taps(s.h), tx = taps(s.w);
  Tensor<T> y(o);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.plane(n, c);
      T* q = y.plane(n, c);
      for (int yy = 0; yy < o.h; ++yy) {
        const Tap& a = ty[static_cast<std::size_t>(yy)];
        for (int xx = 0; xx < o.w; ++xx) {
          const Tap& b = tx[static_cast<std::size_t>(xx)];
          const double top = (1 - b.w) * p[a.i0 * s.w + b.i0] + b.w * p[a.i0 * s.w + b.i1];
          const double bot = (1 - b.w) * p[a.i1 * s.w + b.i0] + b.w * p[a.i1 * s.w + b.i1];
          q[yy * o.w + xx] = static_cast<T>((1 - a.w) * top + a.w * bot);
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample2_transpose(const Tensor<T>& dy, Shape in_shape) {
  const Shape o{in_shape.n, in_shape.c, 2 * in_shape.h, 2 * in_shape.w};
  if (dy.shape() != o) throw ShapeMismatch("upsample grad shape " + dy.shape().str());
  const auto ty = taps(in_shape.h), tx = taps(in_shape.w);
  Tensor<T> dx(in_shape);
  const int w = in_shape.w;
  for (int n = 0; n < o.n; ++n) {
    for (int c = 0; c < o.c; ++c) {
      const T* g = dy.plane(n, c);
      T* d = dx.plane(n, c);
      for (int yy = 0; yy < o.h; ++yy) {
        const Tap& a = ty[static_cast<std::size_t>(yy)];
        for (int xx = 0; xx < o.w; ++xx) {
          const Tap& b = tx[static_cast<std::size_t>(xx)];
          const double v = g[yy * o.w + xx];
          d[a.i0 * w + b.i0] += static_cast<T>((1 - a.w) * (1 - b.w) * v);
          d[a.i0 * w + b.i1] += static_cast<T>((1 - a.w) * b.w * v);
          d[a.i1 * w + b.i0] += static_cast<T>(a.w * (1 - b.w) * v);
          d[a.i1 * w + b.i1] += static_cast<T>(a.w * b.w * v);
        }
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw ShapeMismatch("concat partners differ: " + sa.str() + " vs " + sb.str());
  Tensor<T> y(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t plane = sa.plane();
  for (int n = 0; n < sa.n; ++n) {
    std::copy(a.plane(n, 0), a.plane(n, 0) + sa.c * plane, y.plane(n, 0));
    std::copy(b.plane(n, 0), b.plane(n, 0) + sb.c * plane, y.plane(n, sa.c));
  }
  return y;
}

template <typename T>
void split_channels(const Tensor<T>& d, int a_channels, Tensor<T>& da, Tensor<T>& db) {
  const Shape s = d.shape();
  const std::size_t plane = s.plane();
  da = Tensor<T>(Shape{s.n, a_channels, s.h, s.w});
  db = Tensor<T>(Shape{s.n, s.c - a_channels, s.h, s.w});
  for (int n = 0; n < s.n; ++n) {
    std::copy(d.plane(n, 0), d.plane(n, 0) + a_channels * plane, da.plane(n, 0));
    std::copy(d.plane(n, a_channels), d.plane(n, a_channels) + (s.c - a_channels) * plane,
              db.plane(n, 0));
  }
}

template <typename T>
T sigmoid(T s) {
  // Branches keep exp() from overflowing for large |s|.
  if (s >= T(0)) return T(1) / (T(1) + std::exp(-s));
  const T e = std::exp(s);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& s) {
  Tensor<T> p(s.shape());
  for (std::size_t i = 0; i < s.size(); ++i) p[i] = sigmoid(s[i]);
  return p;
}

template <typename T>
ConvBlock<T>::ConvBlock(ParamStore<T>& store, const std::string& name, int in_c, int out_c,
                        double eps, double momentum)
    : conv_(store, name + ".conv", in_c, out_c, 3, false),
      bn_(store, name + ".bn", out_c, eps, momentum) {}

template <typename T>
Tensor<T> ConvBlock<T>::forward(ParamStore<T>& store, const Tensor<T>& x, Mode mode) {
  return relu_.forward(bn_.forward(store, conv_.forward(store, x), mode));
}

template <typename T>
Tensor<T> ConvBlock<T>::backward(ParamStore<T>& store, const Tensor<T>& dy) {
  return conv_.backward(store, bn_.backward(store, relu_.backward(dy)));
}

#define NOWCAST_INSTANTIATE(T)                                                              \
  template class ParamStore<T>;                                                             \
  template class Conv2d<T>;                                                                 \
  template class BatchNorm2d<T>;                                                            \
  template class ReLU<T>;                                                                   \
  template class MaxPool2<T>;                                                               \
  template class ConvBlock<T>;                                                              \
  template Tensor<T> conv2d<T>(const Tensor<T>&, std::span<const T>, std::span<const T>, int, \
                               int);                                                        \
  template Tensor<T> upsample2<T>(const Tensor<T>&);                                        \
  template Tensor<T> upsample2_transpose<T>(const Tensor<T>&, Shape);                       \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                \
  template void split_channels<T>(const Tensor<T>&, int, Tensor<T>&, Tensor<T>&);           \
  template T sigmoid<T>(T);                                                                 \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);

NOWCAST_INSTANTIATE(float)
NOWCAST_INSTANTIATE(double)

#undef NOWCAST_INSTANTIATE

}  // namespace nowcast::nn

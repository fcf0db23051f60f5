#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nowcast/nn/params.hpp"
#include "nowcast/nn/tensor.hpp"

// Layers with hand-written reverse passes. Each layer caches what its
// backward pass needs during forward; backward consumes the gradient of the
// layer output, accumulates parameter gradients into the store and returns
// the gradient of the layer input.
namespace nowcast::nn {

enum class Mode { Train, Eval };

/// Zero-padded stride-1 convolution with a square odd kernel (3x3 pad 1, or
/// 1x1), preserving H x W. Kernel layout (out_c, in_c, k, k).
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, int in_c, int out_c, int kernel,
         bool with_bias);

  /// Kaiming-normal weights with fan-in scaling; zero bias.
  void init(ParamStore<T>& store, std::mt19937_64& rng) const;

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x);
  Tensor<T> backward(ParamStore<T>& store, const Tensor<T>& dy);

  int in_channels() const { return in_c_; }
  int out_channels() const { return out_c_; }

 private:
  int in_c_ = 0;
  int out_c_ = 0;
  int k_ = 3;
  std::size_t weight_ = 0;
  std::optional<std::size_t> bias_;
  Tensor<T> x_;
};

/// Stateless functional forms, used by the layer classes and by tests.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, std::span<const T> kernel, std::span<const T> bias,
                 int out_c, int k);

/// Per-channel batch normalization: (x - E) / sqrt(V + eps) * gamma + beta.
/// Train mode uses batch statistics and updates the running estimates with
/// the given momentum; eval mode uses the running estimates.
template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParamStore<T>& store, const std::string& name, int channels, double eps,
              double momentum);

  Tensor<T> forward(ParamStore<T>& store, const Tensor<T>& x, Mode mode);
  Tensor<T> backward(ParamStore<T>& store, const Tensor<T>& dy);

 private:
  int channels_ = 0;
  double eps_ = 1e-5;
  double momentum_ = 0.1;
  std::size_t gamma_ = 0, beta_ = 0, running_mean_ = 0, running_var_ = 0;
  Mode mode_ = Mode::Train;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  std::vector<std::uint8_t> active_;
};

/// 2x2 max pooling, stride 2. Gradient routes to the first maximum in
/// row-major patch order.
template <typename T>
class MaxPool2 {
 public:
  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& dy) const;

 private:
  Shape in_shape_;
  std::vector<std::uint32_t> argmax_;
};

/// Align-corners bilinear upsampling by a factor of two.
template <typename T>
Tensor<T> upsample2(const Tensor<T>& x);
/// Adjoint of upsample2.
template <typename T>
Tensor<T> upsample2_transpose(const Tensor<T>& dy, Shape in_shape);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
void split_channels(const Tensor<T>& d, int a_channels, Tensor<T>& da, Tensor<T>& db);

template <typename T>
T sigmoid(T s);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& s);

/// conv3x3 -> batch norm -> ReLU.
template <typename T>
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(ParamStore<T>& store, const std::string& name, int in_c, int out_c, double eps,
            double momentum);

  void init(ParamStore<T>& store, std::mt19937_64& rng) const { conv_.init(store, rng); }
  Tensor<T> forward(ParamStore<T>& store, const Tensor<T>& x, Mode mode);
  Tensor<T> backward(ParamStore<T>& store, const Tensor<T>& dy);

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
  ReLU<T> relu_;
};

}  // namespace nowcast::nn

#pragma once

#include <cstdint>
#include <vector>

#include "nowcast/nn/layers.hpp"

namespace nowcast::nn {

struct UNetConfig {
  int in_channels = 36;
  int n_classes = 3;
  int base_width = 8;
  int depth = 4;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;

  int width(int level) const { return base_width << level; }
  void validate() const;
  bool operator==(const UNetConfig&) const = default;
};

/// Encoder: two conv blocks at full resolution, then `depth` cells of
/// [max-pool, two conv blocks]. Bottom: two more conv blocks. Decoder:
/// `depth` cells of [bilinear up, concat with the encoder map of the same
/// size, two conv blocks]. Head: 1x1 conv with bias giving one logit per
/// class.
template <typename T>
class UNet {
 public:
  UNet(const UNetConfig& cfg, std::uint64_t seed);

  const UNetConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  /// x: (N, in_channels, H, W) with H, W divisible by 2^depth.
  Tensor<T> forward_logits(const Tensor<T>& x, Mode mode);
  Tensor<T> forward(const Tensor<T>& x, Mode mode) { return sigmoid(forward_logits(x, mode)); }

  /// Accumulates parameter gradients for the last forward call and returns
  /// the gradient with respect to its input.
  Tensor<T> backward(const Tensor<T>& dlogits);

 private:
  UNetConfig cfg_;
  ParamStore<T> store_;
  std::vector<ConvBlock<T>> enc_;     // 2 per level, levels 0..depth
  std::vector<ConvBlock<T>> bottom_;  // 2
  std::vector<ConvBlock<T>> dec_;     // 2 per level, levels 0..depth-1
  std::vector<MaxPool2<T>> pool_;     // one per level 1..depth
  Conv2d<T> head_;
  std::vector<Shape> up_in_;          // pre-upsampling shape per decoder level
  std::vector<int> skip_c_;
};

}  // namespace nowcast::nn

#include "nowcast/nn/unet.hpp"

#include <string>

namespace nowcast::nn {

void UNetConfig::validate() const {
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (n_classes < 1) throw ConfigError("n_classes must be >= 1");
  if (base_width < 1) throw ConfigError("base_width must be >= 1");
  if (depth < 1 || depth > 8) throw ConfigError("depth must be in [1, 8]");
  if (!(bn_epsilon > 0)) throw ConfigError("bn_epsilon must be > 0");
  if (!(bn_momentum > 0 && bn_momentum <= 1)) throw ConfigError("bn_momentum must be in (0, 1]");
}

template <typename T>
UNet<T>::UNet(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const double eps = cfg_.bn_epsilon, mom = cfg_.bn_momentum;
  const int depth = cfg_.depth;
  auto block = [&](const std::string& name, int in_c, int out_c) {
    return ConvBlock<T>(store_, name, in_c, out_c, eps, mom);
  };

  for (int d = 0; d <= depth; ++d) {
    const int in_c = d == 0 ? cfg_.in_channels : cfg_.width(d - 1);
    const std::string p = "enc" + std::to_string(d);
    enc_.push_back(block(p + ".0", in_c, cfg_.width(d)));
    enc_.push_back(block(p + ".1", cfg_.width(d), cfg_.width(d)));
  }
  pool_.resize(static_cast<std::size_t>(depth));
  bottom_.push_back(block("bottom.0", cfg_.width(depth), cfg_.width(depth)));
  bottom_.push_back(block("bottom.1", cfg_.width(depth), cfg_.width(depth)));
  for (int d = 0; d < depth; ++d) {
    const std::string p = "dec" + std::to_string(d);
    dec_.push_back(block(p + ".0", cfg_.width(d) + cfg_.width(d + 1), cfg_.width(d)));
    dec_.push_back(block(p + ".1", cfg_.width(d), cfg_.width(d)));
  }
  head_ = Conv2d<T>(store_, "head", cfg_.width(0), cfg_.n_classes, 1, true);

  std::mt19937_64 rng(seed);
  for (const auto& b : enc_) b.init(store_, rng);
  for (const auto& b : bottom_) b.init(store_, rng);
  for (const auto& b : dec_) b.init(store_, rng);
  head_.init(store_, rng);
}

template <typename T>
Tensor<T> UNet<T>::forward_logits(const Tensor<T>& x, Mode mode) {
  const Shape s = x.shape();
  const int depth = cfg_.depth;
  const int div = 1 << depth;
  if (s.c != cfg_.in_channels)
    throw ShapeMismatch("U-Net expects " + std::to_string(cfg_.in_channels) +
                        " input channels, got " + s.str());
  if (s.h % div || s.w % div || s.h == 0 || s.w == 0)
    throw ShapeMismatch("U-Net input H and W must be divisible by " + std::to_string(div) +
                        ", got " + s.str());

  std::vector<Tensor<T>> skips;
  Tensor<T> h = x;
  for (int d = 0; d <= depth; ++d) {
    if (d > 0) h = pool_[static_cast<std::size_t>(d - 1)].forward(h);
    h = enc_[static_cast<std::size_t>(2 * d)].forward(store_, h, mode);
    h = enc_[static_cast<std::size_t>(2 * d + 1)].forward(store_, h, mode);
    if (d < depth) skips.push_back(h);
  }
  h = bottom_[0].forward(store_, h, mode);
  h = bottom_[1].forward(store_, h, mode);

  up_in_.assign(static_cast<std::size_t>(depth), Shape{});
  skip_c_.assign(static_cast<std::size_t>(depth), 0);
  for (int d = depth - 1; d >= 0; --d) {
    const auto i = static_cast<std::size_t>(d);
    up_in_[i] = h.shape();
    skip_c_[i] = skips[i].shape().c;
    h = concat_channels(skips[i], upsample2(h));
    h = dec_[2 * i].forward(store_, h, mode);
    h = dec_[2 * i + 1].forward(store_, h, mode);
  }
  return head_.forward(store_, h);
}

template <typename T>
Tensor<T> UNet<T>::backward(const Tensor<T>& dlogits) {
  const int depth = cfg_.depth;
  if (up_in_.size() != static_cast<std::size_t>(depth))
    throw ContractViolation("U-Net backward called before forward");

  std::vector<Tensor<T>> dskips(static_cast<std::size_t>(depth));
  Tensor<T> g = head_.backward(store_, dlogits);
  for (int d = 0; d < depth; ++d) {
    const auto i = static_cast<std::size_t>(d);
    g = dec_[2 * i + 1].backward(store_, g);
    g = dec_[2 * i].backward(store_, g);
    Tensor<T> dup;
    split_channels(g, skip_c_[i], dskips[i], dup);
    g = upsample2_transpose(dup, up_in_[i]);
  }
  g = bottom_[1].backward(store_, g);
  g = bottom_[0].backward(store_, g);
  for (int d = depth; d >= 0; --d) {
    const auto i = static_cast<std::size_t>(d);
    if (d < depth) {
      const Tensor<T>& ds = dskips[i];
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += ds[k];
    }
    g = enc_[2 * i + 1].backward(store_, g);
    g = enc_[2 * i].backward(store_, g);
    if (d > 0) g = pool_[i - 1].backward(g);
  }
  return g;
}

template class UNet<float>;
template class UNet<double>;

}  // namespace nowcast::nn

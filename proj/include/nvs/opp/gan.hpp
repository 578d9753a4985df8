#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nvs/config.hpp"
#include "nvs/substrate/nn.hpp"

namespace nvs::opp {

using ad::ParamSet;
using ad::Shape;
using ad::Tensor;
using ad::Var;

// Decoder from the grid feature map [1, H_m, W_m, h_m] to an image
// [1, H, W, 3]: one (nearest x2, 3x3 conv, leaky ReLU) stage per octave, then a
// 3x3 conv to RGB with a sigmoid.
template <class T>
class Upsampler {
 public:
  ParamSet<T> params;

  Upsampler() = default;
  Upsampler(int in_channels, int factor, Rng& rng, int first_width = 64) : factor_(factor) {
    if (factor < 1 || (factor & (factor - 1))) throw ConfigError("upsampling factor must be a power of two");
    int in = in_channels, width = first_width;
    for (int s = 1; s < factor; s *= 2) {
      stages_.emplace_back(params, "upsampler.stage" + std::to_string(stages_.size()), in, width, 3, rng);
      in = width;
      width = std::max(16, width / 2);
    }
    // Without any x2 stage keep one conv so the map still mixes channels.
    if (stages_.empty()) stages_.emplace_back(params, "upsampler.stage0", in, first_width, 3, rng), in = first_width;
    to_rgb_ = ad::Conv2d<T>(params, "upsampler.to_rgb", in, 3, 3, rng, 1, 1.0);
  }

  int factor() const { return factor_; }

  // Subtracts each image's per-channel spatial mean. Composited hidden colours
  // carry a large shared offset that otherwise drives the output sigmoid into
  // saturation early in training.
  static Var<T> center_channels(const Var<T>& grid) {
    const auto n = grid.dim(0);
    const T inv = T(1) / static_cast<T>(grid.numel() / (n * grid.shape().back()));
    std::vector<Var<T>> out;
    for (std::int64_t i = 0; i < n; ++i) {
      Var<T> g = n == 1 ? grid : ad::slice_first(grid, i, i + 1);
      out.push_back(ad::sub(g, ad::broadcast_rowvec(ad::scale(ad::sum_rows(g), inv), g.shape())));
    }
    return n == 1 ? out[0] : ad::concat_first(out);
  }

  Var<T> operator()(const Var<T>& grid) const {
    NVS_CHECK(grid.rank() == 4, "upsampler expects [N,H_m,W_m,C]");
    Var<T> h = center_channels(grid);
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      if (factor_ > 1) h = ad::upsample2x(h);
      h = ad::leaky_relu(stages_[i](h));
    }
    Var<T> out = ad::sigmoid(to_rgb_(h));
    if (!out.value().all_finite()) throw DivergenceError("non-finite upsampler output");
    return out;
  }

 private:
  int factor_ = 1;
  std::vector<ad::Conv2d<T>> stages_;
  ad::Conv2d<T> to_rgb_;
};

// Unconditional image critic: stride-2 convs (32, 64, 128 channels) with
// leaky ReLU, flattened into one logit per image.
template <class T>
class Discriminator {
 public:
  ParamSet<T> params;

  Discriminator() = default;
  Discriminator(int height, int width, Rng& rng, std::vector<int> channels = {32, 64, 128}) {
    int in = 3, h = height, w = width;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      convs_.emplace_back(params, "disc.conv" + std::to_string(i), in, channels[i], 3, rng, 2);
      in = channels[i];
      h = (h + 1) / 2;
      w = (w + 1) / 2;
    }
    flat_ = static_cast<std::int64_t>(h) * w * in;
    head_ = ad::Linear<T>(params, "disc.head", flat_, 1, rng, 1.0);
  }

  // images [N, H, W, 3] -> logits [N, 1]
  Var<T> operator()(const Var<T>& images) const {
    Var<T> h = ad::add_scalar(ad::scale(images, T(2)), T(-1));
    for (const auto& c : convs_) h = ad::leaky_relu(c(h));
    Var<T> logit = head_(ad::reshape(h, {images.dim(0), flat_}));
    if (!logit.value().all_finite()) throw DivergenceError("non-finite discriminator logit");
    return logit;
  }

 private:
  std::vector<ad::Conv2d<T>> convs_;
  ad::Linear<T> head_;
  std::int64_t flat_ = 0;
};

template <class T>
struct GanLosses {
  Var<T> g_adv;     // mean softplus(-D(fake)), graph reaches the generator
  Var<T> d_loss;    // mean softplus(D(fake)) + mean softplus(-D(real)) + r1
  Var<T> r1;        // (gamma/2) mean_n |grad_real D|^2
};

// Non-saturating losses with an R1 penalty on real samples. `fake` keeps its
// graph for the generator term; the discriminator term sees it detached.
template <class T>
GanLosses<T> gan_losses(const Discriminator<T>& D, const Var<T>& fake, const Tensor<T>& real, double r1_gamma,
                        bool need_generator = true, bool need_discriminator = true) {
  NVS_CHECK(fake.shape() == real.shape(), "fake and real batches differ in shape");
  GanLosses<T> out;
  if (need_generator) out.g_adv = ad::mean(ad::softplus(ad::neg(D(fake))));
  if (need_discriminator) {
    Var<T> real_v = Var<T>::parameter(real, "real");
    Var<T> d_real = D(real_v);
    Var<T> d_fake = D(fake.detach());
    out.d_loss = ad::add(ad::mean(ad::softplus(d_fake)), ad::mean(ad::softplus(ad::neg(d_real))));
    if (r1_gamma > 0) {
      Var<T> g = ad::grad(ad::sum(d_real), {real_v}, {}, true)[0];
      const T n = static_cast<T>(real.dim(0));
      out.r1 = ad::scale(ad::sum(ad::square(g)), static_cast<T>(r1_gamma / 2) / n);
      if (!out.r1.value().all_finite()) throw DivergenceError("non-finite R1 penalty");
      out.d_loss = ad::add(out.d_loss, out.r1);
    } else {
      out.r1 = Var<T>::constant(Tensor<T>::scalar(T(0)));
    }
  }
  return out;
}

// Distance between activations of a frozen, randomly initialised 4-layer conv
// stack (mean squared difference per layer, averaged over layers).
template <class T>
class PerceptualLoss {
 public:
  explicit PerceptualLoss(std::uint64_t seed = 0x5eed) {
    Rng rng(seed);
    const int ch[5] = {3, 16, 32, 32, 64};
    const int stride[4] = {1, 2, 1, 2};
    for (int i = 0; i < 4; ++i) {
      layers_.emplace_back(params_, "per.conv" + std::to_string(i), ch[i], ch[i + 1], 3, rng, stride[i]);
    }
    params_.set_trainable(false);
  }

  // a, b: [N, H, W, 3]
  Var<T> operator()(const Var<T>& a, const Var<T>& b) const {
    NVS_CHECK(a.shape() == b.shape(), "perceptual loss inputs differ in shape");
    Var<T> ha = a, hb = b, total;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      ha = ad::relu(layers_[i](ha));
      hb = ad::relu(layers_[i](hb));
      Var<T> l = ad::mse(ha, hb);
      total = i == 0 ? l : ad::add(total, l);
    }
    return ad::scale(total, T(1) / static_cast<T>(layers_.size()));
  }

 private:
  ParamSet<T> params_;
  std::vector<ad::Conv2d<T>> layers_;
};

// out = C * alpha + I * (1 - alpha); alpha has one value per pixel ([..., 1])
// and the colour maps are [..., 3].
template <class T>
Var<T> dpf_fuse(const Var<T>& c_nerf, const Var<T>& i_gan, const Var<T>& alpha) {
  if (c_nerf.shape() != i_gan.shape()) throw ContractError("dpf_fuse: branch outputs differ in shape");
  if (alpha.numel() * c_nerf.shape().back() != c_nerf.numel())
    throw ContractError("dpf_fuse: confidence map does not match the colour maps");
  return ad::blend_rows(c_nerf, i_gan, alpha);
}

template <class T>
Tensor<T> dpf_fuse(const Tensor<T>& c_nerf, const Tensor<T>& i_gan, const Tensor<T>& alpha) {
  ad::NoGradGuard ng;
  return dpf_fuse(Var<T>::constant(c_nerf), Var<T>::constant(i_gan), Var<T>::constant(alpha)).value();
}

}  // namespace nvs::opp

#pragma once

#include <string>
#include <vector>

#include "nvs/geometry/camera.hpp"
#include "nvs/substrate/nn.hpp"

namespace nvs::field {

using ad::ParamSet;
using ad::Shape;
using ad::Tensor;
using ad::Var;

struct EncoderConfig {
  // Channels of the three stride-2 blocks; the last also feeds the 1/8 block.
  std::vector<int> channels{16, 16, 32};
  int feature_dim() const {
    int s = 0;
    for (int c : channels) s += c;
    return s;
  }
};

// Multi-scale feature maps of the reference image, each [1, h, w, c] at
// 1/2, 1/4 and 1/8 of the input size.
template <class T>
struct FeatureVolume {
  std::vector<Var<T>> levels;
  geo::Camera ref;
  int channels() const {
    int s = 0;
    for (const auto& l : levels) s += static_cast<int>(l.dim(3));
    return s;
  }
};

template <class T>
struct ResBlock {
  ad::Conv2d<T> conv1, conv2, skip;
  bool has_skip = false;

  ResBlock() = default;
  ResBlock(ParamSet<T>& ps, const std::string& name, int in, int out, int stride, Rng& rng) {
    conv1 = ad::Conv2d<T>(ps, name + ".conv1", in, out, 3, rng, stride);
    conv2 = ad::Conv2d<T>(ps, name + ".conv2", out, out, 3, rng, 1, 1.0);
    has_skip = stride != 1 || in != out;
    if (has_skip) skip = ad::Conv2d<T>(ps, name + ".skip", in, out, 1, rng, stride, 1.0);
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> h = conv2(ad::relu(conv1(x)));
    return ad::relu(ad::add(h, has_skip ? skip(x) : x));
  }
};

// Small residual CNN: three stride-2 blocks and one block at 1/8 scale.
template <class T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParamSet<T>& ps, const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    NVS_CHECK(cfg.channels.size() == 3, "encoder expects three pyramid channel counts");
    int in = 3;
    for (int i = 0; i < 3; ++i) {
      blocks_.emplace_back(ps, "encoder.block" + std::to_string(i), in, cfg.channels[i], 2, rng);
      in = cfg.channels[i];
    }
    blocks_.emplace_back(ps, "encoder.block3", in, in, 1, rng);
  }

  const EncoderConfig& config() const { return cfg_; }

  // image [H, W, 3] in [0,1]. H and W must be divisible by 8.
  FeatureVolume<T> operator()(const Tensor<T>& image, const geo::Camera& ref) const {
    NVS_CHECK(image.rank() == 3 && image.dim(2) == 3, "encoder expects an [H,W,3] image");
    if (image.dim(0) % 8 || image.dim(1) % 8) throw ConfigError("reference image size must be divisible by 8");
    Tensor<T> x = image.reshaped({1, image.dim(0), image.dim(1), 3});
    for (auto& v : x.storage()) v = v * T(2) - T(1);
    Var<T> h = Var<T>::constant(std::move(x));
    FeatureVolume<T> vol;
    vol.ref = ref;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      h = blocks_[i](h);
      if (!h.value().all_finite())
        throw DivergenceError("non-finite activation in encoder block " + std::to_string(i));
      if (i < 2 || i == 3) vol.levels.push_back(h);
    }
    return vol;
  }

 private:
  EncoderConfig cfg_;
  std::vector<ResBlock<T>> blocks_;
};

}  // namespace nvs::field

#pragma once

#include <string>
#include <vector>

#include "nvs/field/features.hpp"
#include "nvs/render/volume_render.hpp"

namespace nvs::field {

using render::FieldFn;
using render::FieldOutput;
using render::Heads;

struct FieldConfig {
  int trunk_width = 64;
  int trunk_layers = 3;
  int hidden_dim = defaults::kHiddenColorDim;  // h_m
  int pe_x = 6;                                 // frequency bands for positions
  int pe_d = 2;                                 // frequency bands for directions
  int corf_width = 64;
  double sigma_r_frac = 0.1;  // reliability width as a fraction of z_f - z_n
};

inline int pe_width(int bands) { return 3 + 6 * bands; }

// Per-point inputs shared by the field and the confidence net.
template <class T>
struct PointInputs {
  Tensor<double> x_world, d_world;
  Tensor<T> pe_x, pe_d;
  Var<T> feat;  // [P, C_W]
  std::int64_t size() const { return x_world.dim(0); }
};

template <class T>
PointInputs<T> prepare_points(const Tensor<double>& x_world, const Tensor<double>& d_world,
                              const FeatureVolume<T>& vol, const FieldConfig& cfg) {
  const auto P = x_world.dim(0);
  Tensor<double> xr({P, 3}), dr({P, 3});
  const geo::Mat3 R = vol.ref.rotation();
  const geo::Vec3 t = vol.ref.translation();
  for (std::int64_t i = 0; i < P; ++i) {
    const geo::Vec3 x(x_world[i * 3], x_world[i * 3 + 1], x_world[i * 3 + 2]);
    const geo::Vec3 d(d_world[i * 3], d_world[i * 3 + 1], d_world[i * 3 + 2]);
    const geo::Vec3 a = R * x + t, b = R * d;
    for (int c = 0; c < 3; ++c) {
      xr[i * 3 + c] = a[c];
      dr[i * 3 + c] = b[c];
    }
  }
  PointInputs<T> in;
  in.x_world = x_world;
  in.d_world = d_world;
  in.pe_x = positional_encoding<T>(xr, cfg.pe_x);
  in.pe_d = positional_encoding<T>(dr, cfg.pe_d);
  in.feat = index_features(vol, compute_taps(x_world, vol));
  return in;
}

inline void require_finite(const char* what, bool ok) {
  if (!ok) throw DivergenceError(std::string("non-finite output from ") + what);
}

// Field network with a shared density and two colour heads: an h_m-dim
// hidden colour c_m and RGB c = sigmoid(FC(c_m)).
template <class T>
class DualHeadField {
 public:
  ParamSet<T> trunk_params;  // trunk, density and hidden heads
  ParamSet<T> fc_params;     // the single affine RGB projection

  DualHeadField() = default;
  DualHeadField(const FieldConfig& cfg, int feature_dim, Rng& rng) : cfg_(cfg) {
    int in = pe_width(cfg.pe_x) + pe_width(cfg.pe_d) + feature_dim;
    for (int i = 0; i < cfg.trunk_layers; ++i) {
      trunk_.emplace_back(trunk_params, "field.trunk" + std::to_string(i), in, cfg.trunk_width, rng);
      in = cfg.trunk_width;
    }
    density_ = ad::Linear<T>(trunk_params, "field.density", in, 1, rng, 1.0);
    hidden_ = ad::Linear<T>(trunk_params, "field.hidden", in, cfg.hidden_dim, rng, 1.0);
    fc_ = ad::Linear<T>(fc_params, "fc", cfg.hidden_dim, 3, rng, 1.0);
  }

  const FieldConfig& config() const { return cfg_; }
  int input_dim() const { return static_cast<int>(trunk_.front().in_features()); }

  FieldOutput<T> operator()(const PointInputs<T>& in, const Heads& heads) const {
    Var<T> h = ad::concat_last(std::vector<Var<T>>{Var<T>::constant(in.pe_x), Var<T>::constant(in.pe_d), in.feat});
    for (const auto& layer : trunk_) h = ad::relu(layer(h));
    FieldOutput<T> out;
    out.sigma = ad::softplus(density_(h));
    require_finite("field density", out.sigma.value().all_finite());
    if (heads.rgb || heads.hidden) {
      Var<T> cm = hidden_(h);
      if (heads.hidden) out.hidden = cm;
      if (heads.rgb) out.rgb = ad::sigmoid(fc_(cm));
      require_finite("field colour heads", cm.value().all_finite());
    }
    return out;
  }

  // RGB from an arbitrary c_m batch [..., h_m] (used to check the FC head).
  Var<T> rgb_from_hidden(const Var<T>& cm) const { return ad::sigmoid(fc_(cm)); }

 private:
  FieldConfig cfg_;
  std::vector<ad::Linear<T>> trunk_;
  ad::Linear<T> density_, hidden_, fc_;
};

// Confidence head: exactly three affine layers on [r, PE(d), W(pi(x))].
template <class T>
class CorfNet {
 public:
  ParamSet<T> params;

  CorfNet() = default;
  CorfNet(const FieldConfig& cfg, int feature_dim, Rng& rng) {
    const int in = 1 + pe_width(cfg.pe_d) + feature_dim;
    l0_ = ad::Linear<T>(params, "corf.fc0", in, cfg.corf_width, rng);
    l1_ = ad::Linear<T>(params, "corf.fc1", cfg.corf_width, cfg.corf_width, rng);
    l2_ = ad::Linear<T>(params, "corf.fc2", cfg.corf_width, 1, rng, 1.0);
  }

  Var<T> operator()(const Tensor<T>& r, const PointInputs<T>& in) const {
    Var<T> h = ad::concat_last(std::vector<Var<T>>{Var<T>::constant(r), Var<T>::constant(in.pe_d), in.feat});
    h = ad::relu(l0_(h));
    h = ad::relu(l1_(h));
    Var<T> a = ad::sigmoid(l2_(h));
    require_finite("confidence net", a.value().all_finite());
    return a;
  }

 private:
  ad::Linear<T> l0_, l1_, l2_;
};

// Everything a conditioned query needs besides the query itself.
template <class T>
struct Conditioning {
  const FeatureVolume<T>* volume = nullptr;
  const Tensor<T>* ref_depth = nullptr;  // [H, W] camera-space z; required for the confidence head
  double sigma_r = 0.1;
};

// Binds the field (and optionally the confidence net) to a reference into a
// FieldFn for the renderer.
template <class T>
FieldFn<T> bind_field(const DualHeadField<T>& field, const CorfNet<T>* corf, const Conditioning<T>& cond) {
  return [&field, corf, cond](const Tensor<double>& x, const Tensor<double>& d, const Heads& heads) {
    NVS_CHECK(cond.volume != nullptr, "conditioning lacks a feature volume");
    PointInputs<T> in = prepare_points(x, d, *cond.volume, field.config());
    FieldOutput<T> out = field(in, heads);
    if (heads.conf) {
      NVS_CHECK(corf != nullptr && cond.ref_depth != nullptr, "confidence head needs the net and a depth map");
      out.conf = (*corf)(reliability(x, *cond.ref_depth, cond.volume->ref, cond.sigma_r), in);
    }
    return out;
  };
}

template <class T>
FieldFn<T> bind_field(const DualHeadField<T>& field, const Conditioning<T>& cond) {
  return bind_field<T>(field, nullptr, cond);
}

}  // namespace nvs::field

#pragma once

#include <optional>

#include "nvs/data/scene.hpp"
#include "nvs/opp/model.hpp"

namespace nvs::opp {

template <class T>
Tensor<T> to_tensor(const Tensor<float>& x) {
  if constexpr (std::is_same_v<T, float>) return x;
  else return Tensor<T>(x.shape(), std::vector<T>(x.storage().begin(), x.storage().end()));
}

template <class T>
Tensor<float> to_float(const Tensor<T>& x) {
  if constexpr (std::is_same_v<T, float>) return x;
  else return Tensor<float>(x.shape(), std::vector<float>(x.storage().begin(), x.storage().end()));
}

// Rows of an [H,W,C] image inside a batch's block, as [rows*cols, C].
template <class T>
Tensor<T> crop_rows(const Tensor<T>& img, const render::RayBatch& b) {
  const auto W = img.dim(1), C = img.dim(2);
  Tensor<T> out({static_cast<std::int64_t>(b.rows) * b.cols, C});
  for (int i = 0; i < b.rows; ++i)
    for (int j = 0; j < b.cols; ++j)
      for (std::int64_t c = 0; c < C; ++c)
        out[(static_cast<std::int64_t>(i) * b.cols + j) * C + c] = img[((b.top + i) * W + (b.left + j)) * C + c];
  return out;
}

// Pixel rows of a pixelwise batch, as [R, C].
template <class T>
Tensor<T> gather_pixels(const Tensor<T>& img, const render::RayBatch& b) {
  const auto C = img.dim(2);
  Tensor<T> out({static_cast<std::int64_t>(b.pixel_index.size()), C});
  for (std::size_t r = 0; r < b.pixel_index.size(); ++r)
    for (std::int64_t c = 0; c < C; ++c) out[static_cast<std::int64_t>(r) * C + c] = img[b.pixel_index[r] * C + c];
  return out;
}

template <class T>
struct BranchImages {
  Tensor<T> nerf;   // I^N [H,W,3]
  Tensor<T> gan;    // I^G [H,W,3]
  Tensor<T> conf;   // M [H,W,1] in [0,1]
  Tensor<T> fused;  // DPF [H,W,3]
  Tensor<T> depth;  // [H,W] camera-space z from the NeRF branch
  std::int64_t nerf_queries = 0, gan_queries = 0;
};

// Inference against one reference view: the reference is encoded once and
// its depth map (grid render, bilinearly resized) feeds the confidence head.
template <class T>
class OppRenderer {
 public:
  OppRenderer(OppModel<T>& m, const Tensor<float>& ref_image, const geo::Camera& ref_cam,
              render::RenderOptions samples, PipelineMode mode = PipelineMode::kOneStageParallel)
      : m_(m), ref_cam_(ref_cam), samples_(samples), mode_(mode) {
    ad::NoGradGuard ng;
    vol_ = m.encoder(to_tensor<T>(ref_image), ref_cam);
    ref_depth_ = compute_ref_depth();
  }

  const field::FeatureVolume<T>& volume() const { return vol_; }
  const Tensor<T>& ref_depth() const { return ref_depth_; }
  double sigma_r() const { return m_.cfg.field.sigma_r_frac * (ref_cam_.far - ref_cam_.near); }

  field::Conditioning<T> conditioning() const { return {&vol_, &ref_depth_, sigma_r()}; }
  render::FieldFn<T> field_fn() const { return field::bind_field(m_.field, &m_.corf, conditioning()); }

  render::RenderOptions options(render::Heads h) const {
    render::RenderOptions o = samples_;
    o.heads = h;
    o.coarse_rgb = false;
    return o;
  }

  // NeRF branch at full resolution; optionally the confidence map as well.
  render::ImageOutputs<T> render_nerf(const geo::Camera& cam, bool with_conf) const {
    return render::render_image(field_fn(), render::sample_full(cam), options({true, false, with_conf, true}));
  }

  // Grid features [1, H_m, W_m, h_m] (and the grid confidence if asked).
  render::ImageOutputs<T> render_grid(const geo::Camera& cam, bool with_conf) const {
    return render::render_image(field_fn(), render::sample_grid(cam, m_.cfg.grid_h, m_.cfg.grid_w),
                                options({false, true, with_conf, false}));
  }

  Tensor<T> upsample(const Tensor<T>& hidden) const {
    ad::NoGradGuard ng;
    const Tensor<T> g = hidden.reshaped({1, hidden.dim(0), hidden.dim(1), hidden.dim(2)});
    Tensor<T> img = m_.upsampler(Var<T>::constant(g)).value();
    return img.reshaped({img.dim(1), img.dim(2), 3});
  }

  Tensor<T> refine(const Tensor<T>& nerf) const {
    ad::NoGradGuard ng;
    Tensor<T> img = m_.refiner(Var<T>::constant(nerf.reshaped({1, nerf.dim(0), nerf.dim(1), 3}))).value();
    for (auto& v : img.storage()) v = std::clamp(v, T(0), T(1));
    return img.reshaped({nerf.dim(0), nerf.dim(1), 3});
  }

  // GAN branch I^G. The two-stage pipeline refines a full NeRF render instead.
  Tensor<T> render_gan(const geo::Camera& cam, std::int64_t* queries = nullptr) const {
    if (mode_ == PipelineMode::kTwoStageTandem) {
      auto io = render_nerf(cam, false);
      if (queries) *queries = io.queries;
      return refine(io.rgb);
    }
    auto io = render_grid(cam, false);
    if (queries) *queries = io.queries;
    return upsample(io.hidden);
  }

  // Fast path: I^G plus a confidence map from the grid rays, resized to full size.
  std::pair<Tensor<T>, Tensor<T>> render_gan_with_conf(const geo::Camera& cam, std::int64_t* queries = nullptr) const {
    auto io = render_grid(cam, true);
    if (queries) *queries = io.queries;
    return {upsample(io.hidden), ad::kernel::resize_bilinear(io.conf, cam.height, cam.width)};
  }

  BranchImages<T> render_all(const geo::Camera& cam) const {
    BranchImages<T> out;
    auto io = render_nerf(cam, true);
    out.nerf = io.rgb;
    out.conf = io.conf;
    out.depth = io.depth.reshaped({cam.height, cam.width});
    out.nerf_queries = io.queries;
    if (mode_ == PipelineMode::kTwoStageTandem) {
      out.gan = refine(io.rgb);
      out.gan_queries = io.queries;
    } else {
      out.gan = render_gan(cam, &out.gan_queries);
    }
    out.fused = dpf_fuse(out.nerf, out.gan, out.conf);
    return out;
  }

 private:
  Tensor<T> compute_ref_depth() const {
    field::Conditioning<T> c{&vol_, nullptr, sigma_r()};
    auto fn = field::bind_field(m_.field, c);
    auto io = render::render_image(fn, render::sample_grid(ref_cam_, m_.cfg.grid_h, m_.cfg.grid_w),
                                   options({false, false, false, true}));
    return ad::kernel::resize_bilinear(io.depth, ref_cam_.height, ref_cam_.width)
        .reshaped({ref_cam_.height, ref_cam_.width});
  }

  OppModel<T>& m_;
  geo::Camera ref_cam_;
  render::RenderOptions samples_;
  PipelineMode mode_;
  field::FeatureVolume<T> vol_;
  Tensor<T> ref_depth_;
};

}  // namespace nvs::opp

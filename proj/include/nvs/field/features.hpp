#pragma once

#include <cmath>
#include <vector>

#include "nvs/field/encoder.hpp"

namespace nvs::field {

// [p, sin(2^k pi p), cos(2^k pi p)] for k < bands, per coordinate block.
// Output width is 3 + 6 * bands.
template <class T>
Tensor<T> positional_encoding(const Tensor<double>& p, int bands) {
  NVS_CHECK(p.rank() == 2 && p.dim(1) == 3, "positional_encoding expects [P,3]");
  const auto P = p.dim(0);
  const std::int64_t W = 3 + 6 * bands;
  Tensor<T> out({P, W});
  for (std::int64_t i = 0; i < P; ++i) {
    T* o = out.data() + i * W;
    for (int c = 0; c < 3; ++c) o[c] = static_cast<T>(p[i * 3 + c]);
    for (int k = 0; k < bands; ++k) {
      const double f = std::ldexp(M_PI, k);
      for (int c = 0; c < 3; ++c) {
        o[3 + 6 * k + c] = static_cast<T>(std::sin(f * p[i * 3 + c]));
        o[3 + 6 * k + 3 + c] = static_cast<T>(std::cos(f * p[i * 3 + c]));
      }
    }
  }
  return out;
}

// Bilinear taps of every point on every pyramid level. Points that fall
// behind the reference camera or outside its image get no taps.
struct FeatureTaps {
  std::int64_t points = 0;
  std::vector<std::uint8_t> valid;
  struct Level {
    std::int64_t h = 0, w = 0;
    std::vector<std::int32_t> idx;  // 4 per point, flat y*w + x
    std::vector<double> wt;         // 4 per point
  };
  std::vector<Level> levels;
};

// Texel (y, x) of a level with stride s covers image pixels [s*x, s*(x+1));
// its center sits at s*(x + 0.5). Samples beyond the outer texel centers
// clamp to the border.
inline FeatureTaps compute_taps(const Tensor<double>& x_world, const geo::Camera& ref,
                                const std::vector<std::pair<std::int64_t, std::int64_t>>& level_sizes) {
  FeatureTaps t;
  t.points = x_world.dim(0);
  t.valid.assign(static_cast<std::size_t>(t.points), 0);
  t.levels.resize(level_sizes.size());
  for (std::size_t l = 0; l < level_sizes.size(); ++l) {
    t.levels[l].h = level_sizes[l].first;
    t.levels[l].w = level_sizes[l].second;
    t.levels[l].idx.assign(static_cast<std::size_t>(t.points * 4), 0);
    t.levels[l].wt.assign(static_cast<std::size_t>(t.points * 4), 0.0);
  }
  for (std::int64_t p = 0; p < t.points; ++p) {
    const geo::Vec3 x(x_world[p * 3], x_world[p * 3 + 1], x_world[p * 3 + 2]);
    const auto pr = geo::project(x, ref);
    if (!pr.inside(ref.height, ref.width)) continue;
    t.valid[p] = 1;
    for (auto& L : t.levels) {
      const double sy = static_cast<double>(ref.height) / L.h, sx = static_cast<double>(ref.width) / L.w;
      const double fx = pr.u / sx - 0.5, fy = pr.v / sy - 0.5;
      const double x0f = std::floor(fx), y0f = std::floor(fy);
      const double ax = fx - x0f, ay = fy - y0f;
      auto cx = [&](double v) { return static_cast<std::int32_t>(std::clamp<double>(v, 0, L.w - 1)); };
      auto cy = [&](double v) { return static_cast<std::int32_t>(std::clamp<double>(v, 0, L.h - 1)); };
      const std::int32_t x0 = cx(x0f), x1 = cx(x0f + 1), y0 = cy(y0f), y1 = cy(y0f + 1);
      const auto w = static_cast<std::int32_t>(L.w);
      std::int32_t* id = L.idx.data() + p * 4;
      double* wt = L.wt.data() + p * 4;
      id[0] = y0 * w + x0, wt[0] = (1 - ax) * (1 - ay);
      id[1] = y0 * w + x1, wt[1] = ax * (1 - ay);
      id[2] = y1 * w + x0, wt[2] = (1 - ax) * ay;
      id[3] = y1 * w + x1, wt[3] = ax * ay;
    }
  }
  return t;
}

template <class T>
FeatureTaps compute_taps(const Tensor<double>& x_world, const FeatureVolume<T>& vol) {
  std::vector<std::pair<std::int64_t, std::int64_t>> sizes;
  for (const auto& l : vol.levels) sizes.emplace_back(l.dim(1), l.dim(2));
  return compute_taps(x_world, vol.ref, sizes);
}

// Gathers W(pi(x)) as [P, C_W]; gradients scatter back into the maps.
template <class T>
Var<T> index_features(const FeatureVolume<T>& vol, const FeatureTaps& taps) {
  NVS_CHECK(taps.levels.size() == vol.levels.size(), "taps do not match the feature volume");
  const auto P = taps.points;
  const std::int64_t C = vol.channels();
  Tensor<T> out({P, C});
  std::int64_t off = 0;
  for (std::size_t l = 0; l < vol.levels.size(); ++l) {
    const auto c = vol.levels[l].dim(3);
    const T* f = vol.levels[l].value().data();
    const auto& L = taps.levels[l];
    for (std::int64_t p = 0; p < P; ++p) {
      if (!taps.valid[p]) continue;
      T* o = out.data() + p * C + off;
      for (int k = 0; k < 4; ++k) {
        const T w = static_cast<T>(L.wt[p * 4 + k]);
        if (w == T(0)) continue;
        const T* src = f + static_cast<std::int64_t>(L.idx[p * 4 + k]) * c;
        for (std::int64_t j = 0; j < c; ++j) o[j] += w * src[j];
      }
    }
    off += c;
  }
  std::vector<Var<T>> parents = vol.levels;
  return ad::make_result<T>(std::move(out), parents, [parents, taps, C, P](const Var<T>& g) {
    std::vector<Var<T>> gs;
    const T* pg = g.value().data();
    std::int64_t off = 0;
    for (std::size_t l = 0; l < parents.size(); ++l) {
      const auto c = parents[l].dim(3);
      if (!parents[l].requires_grad()) {
        gs.emplace_back();
        off += c;
        continue;
      }
      Tensor<T> gf(parents[l].shape());
      const auto& L = taps.levels[l];
      for (std::int64_t p = 0; p < P; ++p) {
        if (!taps.valid[p]) continue;
        const T* gp = pg + p * C + off;
        for (int k = 0; k < 4; ++k) {
          const T w = static_cast<T>(L.wt[p * 4 + k]);
          if (w == T(0)) continue;
          T* dst = gf.data() + static_cast<std::int64_t>(L.idx[p * 4 + k]) * c;
          for (std::int64_t j = 0; j < c; ++j) dst[j] += w * gp[j];
        }
      }
      gs.push_back(Var<T>::constant(std::move(gf)));
      off += c;
    }
    return gs;
  }, true);
}

// Occlusion reliability r = exp(-(z_x - z_s)^2 / (2 sigma_r^2)), where z_x is
// the camera-space depth of x in the reference view and z_s the reference
// depth map sampled bilinearly at its projection. Outside the view r = 0.
// depth_map is [H, W] (or [H, W, 1]) camera-space z at the reference size.
template <class T>
Tensor<T> reliability(const Tensor<double>& x_world, const Tensor<T>& depth_map, const geo::Camera& ref,
                      double sigma_r) {
  NVS_CHECK(sigma_r > 0, "sigma_r must be positive");
  const auto H = depth_map.dim(0), W = depth_map.dim(1);
  NVS_CHECK(H == ref.height && W == ref.width, "depth map must have the reference image size");
  const auto P = x_world.dim(0);
  Tensor<T> r({P, 1});
  for (std::int64_t p = 0; p < P; ++p) {
    const geo::Vec3 x(x_world[p * 3], x_world[p * 3 + 1], x_world[p * 3 + 2]);
    const auto pr = geo::project(x, ref);
    if (!pr.inside(ref.height, ref.width)) continue;
    const double fx = pr.u - 0.5, fy = pr.v - 0.5;
    const double x0f = std::floor(fx), y0f = std::floor(fy);
    const double ax = fx - x0f, ay = fy - y0f;
    auto at = [&](double yy, double xx) {
      const auto yi = static_cast<std::int64_t>(std::clamp<double>(yy, 0, H - 1));
      const auto xi = static_cast<std::int64_t>(std::clamp<double>(xx, 0, W - 1));
      return static_cast<double>(depth_map[yi * W + xi]);
    };
    const double zs = (1 - ay) * ((1 - ax) * at(y0f, x0f) + ax * at(y0f, x0f + 1)) +
                      ay * ((1 - ax) * at(y0f + 1, x0f) + ax * at(y0f + 1, x0f + 1));
    const double dz = pr.z - zs;
    r[p] = static_cast<T>(std::exp(-dz * dz / (2 * sigma_r * sigma_r)));
  }
  return r;
}

}  // namespace nvs::field

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nvs/config.hpp"
#include "nvs/geometry/camera.hpp"
#include "nvs/substrate/tensor.hpp"

namespace nvs::metrics {

using ad::Tensor;

template <class T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  NVS_CHECK(a.shape() == b.shape(), "metric inputs differ in shape");
  double s = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return a.numel() ? s / static_cast<double>(a.numel()) : 0.0;
}

// 10 log10(1 / MSE) for images in [0,1], capped for (near) identical inputs.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  const double m = mse(a, b);
  if (m < tol::kPsnrMseFloor) return tol::kPsnrCapDb;
  return std::min(tol::kPsnrCapDb, 10.0 * std::log10(1.0 / m));
}

// Mean SSIM over channels with an 11x11 Gaussian window (sigma 1.5), evaluated
// at every fully-contained window position. Images smaller than the window
// use a window clipped to the image.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  NVS_CHECK(a.shape() == b.shape() && a.rank() >= 2, "ssim needs equal [H,W(,C)] images");
  const auto H = a.dim(0), W = a.dim(1);
  const auto C = a.rank() == 3 ? a.dim(2) : 1;
  const int win = static_cast<int>(std::min<std::int64_t>({11, H, W}));
  std::vector<double> g(win);
  double gs = 0;
  for (int i = 0; i < win; ++i) {
    const double x = i - (win - 1) / 2.0;
    g[i] = std::exp(-x * x / (2 * 1.5 * 1.5));
    gs += g[i];
  }
  for (auto& v : g) v /= gs;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  std::int64_t count = 0;
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y + win <= H; ++y)
      for (std::int64_t x = 0; x + win <= W; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const double w = g[i] * g[j];
            const auto k = ((y + i) * W + (x + j)) * C + c;
            const double va = a[k], vb = b[k];
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

// Mean absolute 4-neighbour Laplacian of the channel-mean image over interior
// pixels; a high-frequency energy proxy for sharpness.
template <class T>
double sharpness(const Tensor<T>& img) {
  const auto H = img.dim(0), W = img.dim(1);
  const auto C = img.rank() == 3 ? img.dim(2) : 1;
  if (H < 3 || W < 3) return 0.0;
  std::vector<double> grey(static_cast<std::size_t>(H * W));
  for (std::int64_t p = 0; p < H * W; ++p) {
    double s = 0;
    for (std::int64_t c = 0; c < C; ++c) s += img[p * C + c];
    grey[p] = s / static_cast<double>(C);
  }
  double s = 0;
  for (std::int64_t y = 1; y + 1 < H; ++y)
    for (std::int64_t x = 1; x + 1 < W; ++x) {
      const auto p = y * W + x;
      s += std::abs(4 * grey[p] - grey[p - 1] - grey[p + 1] - grey[p - W] - grey[p + W]);
    }
  return s / static_cast<double>((H - 2) * (W - 2));
}

struct PairConsistency {
  int from = 0, to = 0;
  double mse = 0;
  double valid_fraction = 0;
  bool skipped = false;
};

struct ConsistencyReport {
  std::vector<PairConsistency> pairs;
  double mean_mse = 0;        // over non-skipped pairs
  double valid_fraction = 0;  // mean over all pairs
  int skipped = 0;
};

// Backward-warps frame i into view i+1: each pixel of i+1 with known depth is
// lifted to 3D, projected into view i and looked up at the nearest pixel. The
// pixel counts only when the four source pixels around the projection all see
// the same surface (z-buffer check with a relative tolerance), which keeps
// silhouettes out. Nearest lookup keeps independent noise uncorrelated.
// Depth maps hold camera-space z, 0 for no surface.
template <class T>
PairConsistency warp_pair_mse(const Tensor<T>& src, const Tensor<float>& src_depth, const geo::Camera& src_cam,
                              const Tensor<T>& dst, const Tensor<float>& dst_depth, const geo::Camera& dst_cam,
                              double rel_tol = tol::kWarpDepthRelative) {
  const auto H = dst.dim(0), W = dst.dim(1), C = dst.dim(2);
  const auto Hs = src.dim(0), Ws = src.dim(1);
  double s = 0;
  std::int64_t valid = 0;
  for (std::int64_t i = 0; i < H; ++i)
    for (std::int64_t j = 0; j < W; ++j) {
      const double z = dst_depth[i * W + j];
      if (!(z > 0)) continue;
      const geo::Vec3 x = geo::unproject(j + 0.5, i + 0.5, z, dst_cam);
      const auto pr = geo::project(x, src_cam);
      if (!pr.inside(static_cast<int>(Hs), static_cast<int>(Ws))) continue;
      // Border texels extend to the image edge.
      const double fx = std::clamp(pr.u - 0.5, 0.0, Ws - 1.0), fy = std::clamp(pr.v - 0.5, 0.0, Hs - 1.0);
      const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(fx), Ws - 1);
      const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(fy), Hs - 1);
      const auto x1 = std::min<std::int64_t>(x0 + 1, Ws - 1), y1 = std::min<std::int64_t>(y0 + 1, Hs - 1);
      const std::int64_t tap[4] = {y0 * Ws + x0, y0 * Ws + x1, y1 * Ws + x0, y1 * Ws + x1};
      const std::int64_t nn = static_cast<std::int64_t>(pr.v) * Ws + static_cast<std::int64_t>(pr.u);
      bool seen = true;
      for (auto t : tap) {
        const double zs = src_depth[t];
        seen = seen && zs > 0 && std::abs(zs - pr.z) <= rel_tol * pr.z;
      }
      if (!seen) continue;
      for (std::int64_t c = 0; c < C; ++c) {
        const double d = static_cast<double>(dst[(i * W + j) * C + c]) - static_cast<double>(src[nn * C + c]);
        s += d * d;
      }
      ++valid;
    }
  PairConsistency p;
  p.valid_fraction = static_cast<double>(valid) / static_cast<double>(H * W);
  p.skipped = valid == 0;
  p.mse = valid ? s / static_cast<double>(valid * C) : 0.0;
  return p;
}

template <class T>
ConsistencyReport pixel_mse_consistency(const std::vector<Tensor<T>>& frames, const std::vector<geo::Camera>& cams,
                                        const std::vector<Tensor<float>>& depths) {
  if (frames.size() < 2) throw ConfigError("consistency needs at least two frames");
  if (cams.size() != frames.size() || depths.size() != frames.size())
    throw ConfigError("consistency needs one camera and one depth map per frame");
  ConsistencyReport r;
  double msum = 0, vsum = 0;
  int used = 0;
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    auto p = warp_pair_mse(frames[i], depths[i], cams[i], frames[i + 1], depths[i + 1], cams[i + 1]);
    p.from = static_cast<int>(i);
    p.to = static_cast<int>(i + 1);
    vsum += p.valid_fraction;
    if (p.skipped) {
      ++r.skipped;
    } else {
      msum += p.mse;
      ++used;
    }
    r.pairs.push_back(p);
  }
  r.mean_mse = used ? msum / used : 0.0;
  r.valid_fraction = vsum / static_cast<double>(r.pairs.size());
  return r;
}

// Median wall time of `runs` repetitions (at least 5) of a task.
struct Timing {
  double median_seconds = 0;
  std::int64_t queries = 0;  // as reported by the task, per run
  double fps() const { return median_seconds > 0 ? 1.0 / median_seconds : 0.0; }
};

inline Timing time_task(const std::function<std::int64_t()>& task, int runs = 5) {
  runs = std::max(runs, 5);
  std::vector<double> t;
  Timing out;
  for (int i = 0; i < runs; ++i) {
    const auto a = std::chrono::steady_clock::now();
    out.queries = task();
    const auto b = std::chrono::steady_clock::now();
    t.push_back(std::chrono::duration<double>(b - a).count());
  }
  std::sort(t.begin(), t.end());
  out.median_seconds = runs % 2 ? t[runs / 2] : 0.5 * (t[runs / 2 - 1] + t[runs / 2]);
  return out;
}

}  // namespace nvs::metrics

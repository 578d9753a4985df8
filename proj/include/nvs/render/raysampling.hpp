#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "nvs/geometry/camera.hpp"
#include "nvs/substrate/rng.hpp"

namespace nvs::render {

using geo::Camera;
using geo::Ray;

enum class Strategy { kPixelwise, kGrid, kPatch, kFull };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kPixelwise: return "pixelwise";
    case Strategy::kGrid: return "grid";
    case Strategy::kPatch: return "patch";
    case Strategy::kFull: return "full";
  }
  return "?";
}

struct RayBatch {
  std::vector<Ray> rays;
  Strategy strategy = Strategy::kFull;
  Camera cam;
  // Image-shaped batches (grid, patch, full) are row-major rows x cols.
  int rows = 0, cols = 0;
  int top = 0, left = 0;  // patch corner in pixels
  std::vector<int> pixel_index;  // pixelwise: flat index i*W + j per ray

  int size() const { return static_cast<int>(rays.size()); }
};

// One ray per cell center of an H_m x W_m partition of the image plane.
inline RayBatch sample_grid(const Camera& cam, int hm, int wm) {
  if (hm < 1 || wm < 1 || cam.height % hm != 0 || cam.width % wm != 0)
    throw ConfigError("grid " + std::to_string(hm) + "x" + std::to_string(wm) + " does not divide image " +
                      std::to_string(cam.height) + "x" + std::to_string(cam.width));
  RayBatch b;
  b.strategy = Strategy::kGrid;
  b.cam = cam;
  b.rows = hm;
  b.cols = wm;
  const double ch = static_cast<double>(cam.height) / hm, cw = static_cast<double>(cam.width) / wm;
  for (int i = 0; i < hm; ++i)
    for (int j = 0; j < wm; ++j) b.rays.push_back(geo::camera_ray(cam, (j + 0.5) * cw, (i + 0.5) * ch));
  return b;
}

inline RayBatch sample_block(const Camera& cam, int top, int left, int rows, int cols, Strategy tag) {
  NVS_CHECK(top >= 0 && left >= 0 && top + rows <= cam.height && left + cols <= cam.width, "block outside image");
  RayBatch b;
  b.strategy = tag;
  b.cam = cam;
  b.rows = rows;
  b.cols = cols;
  b.top = top;
  b.left = left;
  for (int i = top; i < top + rows; ++i)
    for (int j = left; j < left + cols; ++j) b.rays.push_back(geo::camera_ray(cam, j + 0.5, i + 0.5));
  return b;
}

inline RayBatch sample_full(const Camera& cam) { return sample_block(cam, 0, 0, cam.height, cam.width, Strategy::kFull); }

// Contiguous P x P block at a uniformly random corner.
inline RayBatch sample_patch(const Camera& cam, int p, Rng& rng) {
  if (p < 1 || p > cam.height || p > cam.width)
    throw ConfigError("patch size " + std::to_string(p) + " exceeds image " + std::to_string(cam.height) + "x" +
                      std::to_string(cam.width));
  const int top = static_cast<int>(uniform_int(rng, 0, cam.height - p));
  const int left = static_cast<int>(uniform_int(rng, 0, cam.width - p));
  return sample_block(cam, top, left, p, p, Strategy::kPatch);
}

// n pixels drawn uniformly with replacement.
inline RayBatch sample_pixelwise(const Camera& cam, int n, Rng& rng) {
  RayBatch b;
  b.strategy = Strategy::kPixelwise;
  b.cam = cam;
  for (int k = 0; k < n; ++k) {
    const int idx = static_cast<int>(uniform_int(rng, 0, static_cast<std::int64_t>(cam.height) * cam.width - 1));
    const int i = idx / cam.width, j = idx % cam.width;
    b.pixel_index.push_back(idx);
    b.rays.push_back(geo::camera_ray(cam, j + 0.5, i + 0.5));
  }
  return b;
}

// Stratified depths in [near, far]: stratum midpoints, or uniform jitter
// inside each stratum when rng is given.
inline std::vector<double> sample_coarse(double near, double far, int n, Rng* rng) {
  NVS_CHECK(n >= 1 && far > near, "bad coarse sampling request");
  std::vector<double> z(n);
  const double step = (far - near) / n;
  for (int i = 0; i < n; ++i) {
    const double u = rng ? uniform<double>(*rng, 0.0, 1.0) : 0.5;
    z[i] = near + (i + u) * step;
  }
  return z;
}

// Inverse-transform samples from the piecewise-constant PDF in which coarse
// sample i owns the interval between the midpoints to its neighbours (the
// bounds close the first and last intervals). Without rng the quantiles
// (k + 0.5) / n are used. All-zero weights give uniform samples. Output sorted.
inline std::vector<double> sample_fine(const std::vector<double>& coarse, const std::vector<double>& weights,
                                       double near, double far, int n, Rng* rng) {
  const std::size_t m = coarse.size();
  NVS_CHECK(m >= 1 && weights.size() == m && n >= 1, "bad fine sampling request");
  std::vector<double> edges(m + 1);
  edges[0] = near;
  edges[m] = far;
  for (std::size_t i = 1; i < m; ++i) edges[i] = 0.5 * (coarse[i - 1] + coarse[i]);
  std::vector<double> cdf(m + 1, 0.0);
  for (std::size_t i = 0; i < m; ++i) cdf[i + 1] = cdf[i] + std::max(0.0, weights[i]);
  const double total = cdf[m];
  std::vector<double> u(n);
  for (int k = 0; k < n; ++k) u[k] = rng ? uniform<double>(*rng, 0.0, 1.0) : (k + 0.5) / n;
  std::sort(u.begin(), u.end());
  std::vector<double> z(n);
  if (!(total > 0)) {
    for (int k = 0; k < n; ++k) z[k] = near + u[k] * (far - near);
    return z;
  }
  for (int k = 0; k < n; ++k) {
    const double target = u[k] * total;
    auto it = std::upper_bound(cdf.begin() + 1, cdf.end(), target);
    std::size_t bin = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()) - 1, m - 1);
    while (bin + 1 < m && cdf[bin + 1] - cdf[bin] <= 0) ++bin;
    const double mass = cdf[bin + 1] - cdf[bin];
    const double frac = mass > 0 ? std::clamp((target - cdf[bin]) / mass, 0.0, 1.0) : 0.5;
    z[k] = edges[bin] + frac * (edges[bin + 1] - edges[bin]);
  }
  return z;
}

// Depths along one ray after the two-level scheme. `order[k]` indexes into the
// concatenation [coarse..., fine...] so cached coarse evaluations can be reused.
struct RaySamples {
  std::vector<double> coarse, fine, merged;
  std::vector<int> order;
};

// Merges coarse and fine depths into one strictly increasing sequence. Exact
// duplicates are nudged up by one ulp so intervals stay positive.
inline RaySamples merge_depths(std::vector<double> coarse, std::vector<double> fine, double far) {
  RaySamples s;
  const int nc = static_cast<int>(coarse.size()), nf = static_cast<int>(fine.size());
  s.order.resize(nc + nf);
  for (int i = 0; i < nc + nf; ++i) s.order[i] = i;
  auto value = [&](int i) { return i < nc ? coarse[i] : fine[i - nc]; };
  std::stable_sort(s.order.begin(), s.order.end(), [&](int a, int b) { return value(a) < value(b); });
  s.merged.resize(nc + nf);
  for (int k = 0; k < nc + nf; ++k) {
    double z = value(s.order[k]);
    if (k > 0 && z <= s.merged[k - 1]) z = std::nextafter(s.merged[k - 1], far + 1);
    s.merged[k] = z;
  }
  s.coarse = std::move(coarse);
  s.fine = std::move(fine);
  return s;
}

// Full two-level sampling for one ray. Empty coarse_weights count as all-zero.
inline RaySamples sample_depths(const Ray& ray, int nc, int nf, const std::vector<double>& coarse_weights,
                                Rng* rng, const std::vector<double>* coarse_in = nullptr) {
  std::vector<double> c = coarse_in ? *coarse_in : sample_coarse(ray.near, ray.far, nc, rng);
  std::vector<double> f;
  if (nf > 0) {
    std::vector<double> w = coarse_weights.empty() ? std::vector<double>(c.size(), 0.0) : coarse_weights;
    f = sample_fine(c, w, ray.near, ray.far, nf, rng);
  }
  return merge_depths(std::move(c), std::move(f), ray.far);
}

}  // namespace nvs::render

#pragma once

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <numeric>
#include <vector>

#include "nvs/geometry/camera.hpp"

namespace nvs::geo {

struct DomeLayout {
  Vec3 center = Vec3::Zero();
  double radius = 1;
  std::vector<Vec3> locations;  // world positions on the sphere
  std::vector<Camera> cameras;  // each looks at center

  int size() const { return static_cast<int>(locations.size()); }
  Vec3 relative(int i) const { return locations[i] - center; }
};

// Fibonacci points on the upper hemisphere (world +z up). Point i sits at
// height (i + 0.5) / n with golden-angle azimuth steps; deterministic in n.
inline std::vector<Vec3> fibonacci_hemisphere(int n) {
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i) {
    const double h = (i + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1 - h * h));
    const double phi = golden * i;
    out.emplace_back(r * std::cos(phi), r * std::sin(phi), h);
  }
  return out;
}

inline DomeLayout make_dome(int n, double radius, const Vec3& center, const Intrinsics& K, int height, int width,
                            double near, double far) {
  if (n < 1) throw ConfigError("dome needs at least one keyframe");
  DomeLayout d;
  d.center = center;
  d.radius = radius;
  for (const Vec3& p : fibonacci_hemisphere(n)) {
    const Vec3 loc = center + radius * p;
    Camera c;
    c.K = K;
    c.pose = look_at(loc, center);
    c.height = height;
    c.width = width;
    c.near = near;
    c.far = far;
    d.locations.push_back(loc);
    d.cameras.push_back(c);
  }
  return d;
}

// The three keyframes whose center-relative locations have the largest cosine
// similarity with `target_rel`. Ties go to the lower index.
inline std::array<int, 3> select_neighbors(const Vec3& target_rel, const std::vector<Vec3>& keyframes_rel) {
  const int n = static_cast<int>(keyframes_rel.size());
  if (n < 3) throw ConfigError("select_neighbors needs at least 3 keyframes, got " + std::to_string(n));
  const double tn = target_rel.norm();
  std::vector<double> cs(n);
  for (int i = 0; i < n; ++i) {
    const double kn = keyframes_rel[i].norm();
    cs[i] = (tn > 0 && kn > 0) ? target_rel.dot(keyframes_rel[i]) / (tn * kn) : -2.0;
  }
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return cs[a] > cs[b]; });
  return {idx[0], idx[1], idx[2]};
}

inline std::array<int, 3> select_neighbors(const Vec3& target_world, const DomeLayout& layout) {
  std::vector<Vec3> rel;
  for (int i = 0; i < layout.size(); ++i) rel.push_back(layout.relative(i));
  return select_neighbors(Vec3(target_world - layout.center), rel);
}

struct BarycentricResult {
  std::array<double, 3> w{};
  bool degenerate = false;  // fallback weights were used
  bool clamped = false;     // projection fell outside the triangle
};

// Weights of `g` projected onto the plane through c1, c2, c3. Negative
// coordinates are clamped to zero and the rest renormalized so blends stay
// convex. Collinear or coincident vertices fall back to normalized
// inverse-angular-distance weights (angles measured from the origin, so pass
// center-relative locations).
inline BarycentricResult barycentric_weights(const Vec3& g, const Vec3& c1, const Vec3& c2, const Vec3& c3) {
  BarycentricResult res;
  const Vec3 v0 = c2 - c1, v1 = c3 - c1, v2 = g - c1;
  const double d00 = v0.dot(v0), d01 = v0.dot(v1), d11 = v1.dot(v1);
  const double d20 = v2.dot(v0), d21 = v2.dot(v1);
  const double denom = d00 * d11 - d01 * d01;
  if (!(denom > 1e-12 * d00 * d11) || d00 == 0 || d11 == 0) {
    res.degenerate = true;
    spdlog::warn("barycentric_weights: degenerate keyframe triangle, using inverse angular distance");
    const std::array<const Vec3*, 3> cs{&c1, &c2, &c3};
    std::array<double, 3> ang{};
    for (int i = 0; i < 3; ++i) ang[i] = std::atan2(g.cross(*cs[i]).norm(), g.dot(*cs[i]));
    for (int i = 0; i < 3; ++i)
      if (ang[i] < 1e-12) {
        res.w = {0, 0, 0};
        res.w[i] = 1;
        return res;
      }
    double s = 0;
    for (int i = 0; i < 3; ++i) s += res.w[i] = 1.0 / ang[i];
    for (auto& w : res.w) w /= s;
    return res;
  }
  const double b = (d11 * d20 - d01 * d21) / denom;
  const double c = (d00 * d21 - d01 * d20) / denom;
  res.w = {1.0 - b - c, b, c};
  double s = 0;
  for (auto& w : res.w) {
    if (w < 0) {
      w = 0;
      res.clamped = true;
    }
    s += w;
  }
  for (auto& w : res.w) w /= s;
  return res;
}

}  // namespace nvs::geo

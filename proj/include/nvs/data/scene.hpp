#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "nvs/geometry/dome.hpp"
#include "nvs/substrate/rng.hpp"
#include "nvs/substrate/tensor.hpp"

namespace nvs::data {

using ad::Tensor;
using geo::Camera;
using geo::Vec3;

struct Primitive {
  enum class Kind { kSphere, kBox };
  Kind kind = Kind::kSphere;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Constant(0.5);  // sphere: radius in x; box: half extents (axis aligned)
  Vec3 albedo = Vec3::Constant(0.8);

  // Farthest distance from the origin reached by the primitive.
  double extent() const { return center.norm() + (kind == Kind::kSphere ? size.x() : size.norm()); }
};

struct ToySceneSpec {
  std::vector<Primitive> primitives;
  Vec3 light_dir = Vec3(0.4, -0.3, 0.85).normalized();  // towards the light
  double ambient = 0.3;
  Vec3 background = Vec3::Zero();
  std::uint64_t seed = 0;

  void validate() const {
    if (primitives.empty()) throw ConfigError("toy scene needs at least one primitive");
    for (const auto& p : primitives) {
      if (p.extent() > 1.0 + 1e-9) throw ConfigError("toy scene primitive leaves the unit bounding sphere");
      if ((p.size.array() <= 0).any()) throw ConfigError("toy scene primitive has a non-positive size");
    }
  }
};

struct Hit {
  double t = 0;
  Vec3 normal = Vec3::UnitZ();
  Vec3 albedo = Vec3::Zero();
};

inline std::optional<std::pair<double, Vec3>> intersect(const Primitive& p, const Vec3& o, const Vec3& d) {
  if (p.kind == Primitive::Kind::kSphere) {
    const Vec3 oc = o - p.center;
    const double r = p.size.x();
    const double b = oc.dot(d), c = oc.squaredNorm() - r * r;
    const double disc = b * b - c;
    if (disc < 0) return std::nullopt;
    const double s = std::sqrt(disc);
    double t = -b - s;
    if (t <= 1e-9) t = -b + s;
    if (t <= 1e-9) return std::nullopt;
    return std::make_pair(t, ((o + t * d) - p.center).normalized());
  }
  // Slab test.
  double t0 = -1e300, t1 = 1e300;
  int axis0 = 0;
  double sign0 = 1;
  for (int a = 0; a < 3; ++a) {
    const double lo = p.center[a] - p.size[a], hi = p.center[a] + p.size[a];
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < lo || o[a] > hi) return std::nullopt;
      continue;
    }
    double ta = (lo - o[a]) / d[a], tb = (hi - o[a]) / d[a];
    double s = -1;  // entering through the low face
    if (ta > tb) {
      std::swap(ta, tb);
      s = 1;
    }
    if (ta > t0) {
      t0 = ta;
      axis0 = a;
      sign0 = s;
    }
    t1 = std::min(t1, tb);
  }
  if (t0 > t1 || t0 <= 1e-9) return std::nullopt;
  Vec3 n = Vec3::Zero();
  n[axis0] = sign0;
  return std::make_pair(t0, n);
}

inline std::optional<Hit> trace(const ToySceneSpec& spec, const Vec3& o, const Vec3& d) {
  std::optional<Hit> best;
  for (const auto& p : spec.primitives) {
    auto h = intersect(p, o, d);
    if (h && (!best || h->first < best->t)) best = Hit{h->first, h->second, p.albedo};
  }
  return best;
}

// Lambertian shading with an ambient floor; no shadows, so colour depends on
// the surface point only.
inline Vec3 shade(const ToySceneSpec& spec, const Hit& h) {
  const double lam = std::max(0.0, h.normal.dot(spec.light_dir));
  return h.albedo * (spec.ambient + (1 - spec.ambient) * lam);
}

struct ViewRender {
  Tensor<float> image;  // [H, W, 3]
  Tensor<float> depth;  // [H, W] camera-space z, 0 where nothing is hit
};

inline ViewRender render_view(const ToySceneSpec& spec, const Camera& cam) {
  ViewRender out{Tensor<float>({cam.height, cam.width, 3}), Tensor<float>({cam.height, cam.width})};
  for (int i = 0; i < cam.height; ++i)
    for (int j = 0; j < cam.width; ++j) {
      const geo::Ray r = geo::camera_ray(cam, j + 0.5, i + 0.5);
      const auto h = trace(spec, r.o, r.d);
      const std::int64_t px = static_cast<std::int64_t>(i) * cam.width + j;
      const Vec3 c = h ? shade(spec, *h) : spec.background;
      for (int k = 0; k < 3; ++k) out.image[px * 3 + k] = static_cast<float>(std::clamp(c[k], 0.0, 1.0));
      out.depth[px] = h ? static_cast<float>(h->t * r.forward_cos) : 0.0f;
    }
  return out;
}

// A few random spheres and boxes inside the unit sphere with saturated
// albedos. Placements whose bounding spheres overlap are redrawn (up to a
// retry budget) so colour edges coincide with depth edges.
inline ToySceneSpec random_scene_spec(std::uint64_t seed, int n_primitives = 3) {
  if (n_primitives < 1) throw ConfigError("toy scene needs at least one primitive");
  Rng rng(seed);
  ToySceneSpec s;
  s.seed = seed;
  const double reach = 0.95;
  for (int i = 0; i < n_primitives; ++i) {
    Primitive p;
    p.kind = (i % 2 == 0) ? Primitive::Kind::kSphere : Primitive::Kind::kBox;
    const double shrink = 1.0 / std::sqrt(static_cast<double>(n_primitives));
    if (p.kind == Primitive::Kind::kSphere) {
      p.size = Vec3::Constant(uniform(rng, 0.45, 0.6) * shrink);
    } else {
      p.size = Vec3(uniform(rng, 0.25, 0.38), uniform(rng, 0.25, 0.38), uniform(rng, 0.25, 0.38)) * shrink;
    }
    const double rad = p.kind == Primitive::Kind::kSphere ? p.size.x() : p.size.norm();
    const double room = std::max(0.0, reach - rad);
    for (int attempt = 0; attempt < 64; ++attempt) {
      const Vec3 dir(normal<double>(rng), normal<double>(rng), 0.5 * normal<double>(rng));
      p.center = dir.normalized() * uniform(rng, 0.0, room);
      bool clear = true;
      for (const auto& q : s.primitives) {
        const double qr = q.kind == Primitive::Kind::kSphere ? q.size.x() : q.size.norm();
        clear = clear && (p.center - q.center).norm() > rad + qr;
      }
      if (clear) break;
    }
    const double hue = uniform(rng, 0.0, 6.0);
    // Piecewise-linear hue wheel, kept away from black.
    auto ch = [&](double off) {
      return 0.25 + 0.7 * std::clamp(std::abs(std::fmod(hue + off, 6.0) - 3.0) - 1.0, 0.0, 1.0);
    };
    p.albedo = Vec3(ch(0), ch(2), ch(4));
    s.primitives.push_back(p);
  }
  s.validate();
  return s;
}

struct ViewSetConfig {
  int n_views = 28;
  int n_test = 8;
  int height = 64, width = 64;
  double radius = 3.0;
  double fov_deg = 32.0;
  double min_elevation_deg = 10.0;
  double max_elevation_deg = 60.0;
};

// Cameras on a band of the upper hemisphere looking at the origin, spaced by a
// golden-angle spiral. Bounds bracket the unit sphere.
inline std::vector<Camera> view_set(const ViewSetConfig& cfg) {
  if (cfg.n_views < 1) throw ConfigError("need at least one view");
  std::vector<Camera> out;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  const double lo = std::sin(cfg.min_elevation_deg * M_PI / 180), hi = std::sin(cfg.max_elevation_deg * M_PI / 180);
  for (int i = 0; i < cfg.n_views; ++i) {
    const double h = lo + (hi - lo) * (i + 0.5) / cfg.n_views;
    const double r = std::sqrt(1 - h * h);
    const Vec3 eye = cfg.radius * Vec3(r * std::cos(golden * i), r * std::sin(golden * i), h);
    Camera c;
    c.K = geo::intrinsics_from_fov(cfg.height, cfg.width, cfg.fov_deg);
    c.pose = geo::look_at(eye, Vec3::Zero());
    c.height = cfg.height;
    c.width = cfg.width;
    c.near = cfg.radius - 1.05;
    c.far = cfg.radius + 1.05;
    out.push_back(c);
  }
  return out;
}

struct View {
  std::string name;
  Camera cam;
  Tensor<float> image;  // [H, W, 3] in [0,1]
  Tensor<float> depth;  // [H, W] camera-space z, 0 = no surface
  std::string split = "train";
};

struct SceneDataset {
  std::string scene_id;
  std::vector<View> views;
  int reference = 0;  // index of the conditioning view

  std::vector<int> indices(const std::string& split) const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(views.size()); ++i)
      if (views[i].split == split) out.push_back(i);
    return out;
  }
};

// Renders every camera; test views are spread evenly through the list.
inline SceneDataset generate_scene(const ToySceneSpec& spec, const std::vector<Camera>& cams, int n_test = 0,
                                   const std::string& scene_id = "toy") {
  spec.validate();
  if (cams.size() < 2) throw ConfigError("generate_scene needs at least two views");
  if (n_test < 0 || n_test >= static_cast<int>(cams.size())) throw ConfigError("test split must leave training views");
  SceneDataset ds;
  ds.scene_id = scene_id;
  const int n = static_cast<int>(cams.size());
  std::vector<char> is_test(n, 0);
  for (int k = 0; k < n_test; ++k) is_test[(2 * k + 1) * n / (2 * n_test)] = 1;
  for (int i = 0; i < n; ++i) {
    cams[i].validate(fmt::format("view {}", i));
    auto r = render_view(spec, cams[i]);
    ds.views.push_back({fmt::format("view_{:03d}", i), cams[i], std::move(r.image), std::move(r.depth),
                        is_test[i] ? "test" : "train"});
  }
  ds.reference = ds.indices("train").front();
  return ds;
}

}  // namespace nvs::data

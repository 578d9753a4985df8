#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>

#include "nvs/config.hpp"
#include "nvs/error.hpp"

// Pinhole cameras in the OpenCV convention: camera x right, y down, z forward.
// Pixel (i, j) covers [j, j+1) x [i, i+1); its center is (j + 0.5, i + 0.5).

namespace nvs::geo {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

struct Intrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  bool operator==(const Intrinsics&) const = default;
};

struct Camera {
  Intrinsics K;
  Mat4 pose = Mat4::Identity();  // world -> camera
  int height = 1, width = 1;
  double near = 0.1, far = 1.0;

  Mat3 rotation() const { return pose.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return pose.topRightCorner<3, 1>(); }
  Vec3 center() const { return -rotation().transpose() * translation(); }

  Vec3 to_camera(const Vec3& x) const { return rotation() * x + translation(); }
  Vec3 to_world(const Vec3& xc) const { return rotation().transpose() * (xc - translation()); }

  // Throws ConfigError naming `what` when an invariant fails.
  void validate(const std::string& what = "camera") const {
    const Mat3 R = rotation();
    if (!pose.allFinite()) throw ConfigError(what + ": non-finite pose");
    if ((R.transpose() * R - Mat3::Identity()).norm() >= tol::kRotationOrtho || R.determinant() <= 0)
      throw ConfigError(what + ": pose rotation is not a proper orthonormal matrix");
    if ((pose.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).norm() != 0)
      throw ConfigError(what + ": pose last row must be (0,0,0,1)");
    if (!(K.fx > 0 && K.fy > 0)) throw ConfigError(what + ": focal lengths must be positive");
    if (!(far > near && near > 0)) throw ConfigError(what + ": bounds need far > near > 0");
    if (height < 1 || width < 1) throw ConfigError(what + ": image size must be positive");
  }

  bool operator==(const Camera& o) const {
    return K == o.K && pose == o.pose && height == o.height && width == o.width && near == o.near && far == o.far;
  }
};

struct Projection {
  double u = 0, v = 0, z = 0;
  bool in_front = false;  // camera-space z > 0
  bool inside(int h, int w) const { return in_front && u >= 0 && v >= 0 && u < w && v < h; }
};

inline Projection project(const Vec3& x, const Camera& cam) {
  const Vec3 xc = cam.to_camera(x);
  Projection p;
  p.z = xc.z();
  p.in_front = xc.z() > 0;
  if (p.in_front) {
    p.u = cam.K.fx * xc.x() / xc.z() + cam.K.cx;
    p.v = cam.K.fy * xc.y() / xc.z() + cam.K.cy;
  }
  return p;
}

// World point at camera-space depth z behind pixel coordinate (u, v).
inline Vec3 unproject(double u, double v, double z, const Camera& cam) {
  const Vec3 xc((u - cam.K.cx) / cam.K.fx * z, (v - cam.K.cy) / cam.K.fy * z, z);
  return cam.to_world(xc);
}

struct Ray {
  Vec3 o = Vec3::Zero();
  Vec3 d = Vec3::UnitZ();
  double u = 0, v = 0;
  double near = 0, far = 1;  // world-distance bounds along d

  double forward_cos = 1;    // cosine between d and the camera's optical axis

  Vec3 at(double t) const { return o + t * d; }
};

// Ray through continuous pixel coordinate (u, v). Sample depths along rays are
// distances from the camera center; depth maps elsewhere hold camera-space z,
// related by z = t * forward_cos().
inline Ray camera_ray(const Camera& cam, double u, double v) {
  Vec3 dc((u - cam.K.cx) / cam.K.fx, (v - cam.K.cy) / cam.K.fy, 1.0);
  Ray r;
  r.o = cam.center();
  r.d = (cam.rotation().transpose() * dc).normalized();
  r.u = u;
  r.v = v;
  r.forward_cos = 1.0 / dc.norm();
  r.near = cam.near;
  r.far = cam.far;
  return r;
}

// World-to-camera pose looking from `eye` at `target`. `up` is a world vector
// that maps to camera -y (image up).
inline Mat4 look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ()) {
  const Vec3 f = (target - eye).normalized();
  Vec3 upv = up;
  if (std::abs(f.dot(upv.normalized())) > 1 - 1e-9) upv = std::abs(f.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 r = f.cross(upv).normalized();  // camera x
  const Vec3 dn = f.cross(r);                // camera y (down)
  Mat3 R;
  R.row(0) = r.transpose();
  R.row(1) = dn.transpose();
  R.row(2) = f.transpose();
  Mat4 P = Mat4::Identity();
  P.topLeftCorner<3, 3>() = R;
  P.topRightCorner<3, 1>() = -R * eye;
  return P;
}

// Expresses a world point and direction in the reference camera's frame.
inline std::pair<Vec3, Vec3> to_reference_frame(const Vec3& x, const Vec3& d, const Camera& ref) {
  return {ref.to_camera(x), ref.rotation() * d};
}

inline Intrinsics intrinsics_from_fov(int height, int width, double fov_x_deg) {
  const double fx = 0.5 * width / std::tan(0.5 * fov_x_deg * M_PI / 180.0);
  return {fx, fx, 0.5 * width, 0.5 * height};
}

}  // namespace nvs::geo

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "nvs/geometry/camera.hpp"
#include "nvs/geometry/camera_io.hpp"
#include "nvs/geometry/dome.hpp"
#include "nvs/substrate/rng.hpp"

using namespace nvs;
using namespace nvs::geo;

namespace {

Camera basic_camera(int h = 128, int w = 128) {
  Camera c;
  c.K = {100, 100, 64, 64};
  c.height = h;
  c.width = w;
  c.near = 0.5;
  c.far = 4.0;
  return c;
}

Mat4 random_rigid(Rng& rng) {
  Eigen::Quaterniond q(normal<double>(rng), normal<double>(rng), normal<double>(rng),
                       normal<double>(rng));
  q.normalize();
  Mat4 P = Mat4::Identity();
  P.topLeftCorner<3, 3>() = q.toRotationMatrix();
  P.topRightCorner<3, 1>() = Vec3(normal<double>(rng), normal<double>(rng), normal<double>(rng));
  return P;
}

Vec3 equator(double deg) {
  const double a = deg * M_PI / 180;
  return {std::cos(a), std::sin(a), 0};
}

}  // namespace

TEST(Project, PrincipalAxisPoint) {
  const auto p = project(Vec3(0, 0, 1), basic_camera());
  EXPECT_TRUE(p.in_front);
  EXPECT_DOUBLE_EQ(p.u, 64);
  EXPECT_DOUBLE_EQ(p.v, 64);
  EXPECT_DOUBLE_EQ(p.z, 1.0);
}

TEST(Project, PinholeClosedForm) {
  const auto p = project(Vec3(0.5, 0, 1), basic_camera());
  EXPECT_DOUBLE_EQ(p.u, 114);
}

TEST(Project, BehindCameraIsFlagged) {
  const auto p = project(Vec3(0.2, 0.1, -1), basic_camera());
  EXPECT_FALSE(p.in_front);
  EXPECT_FALSE(p.inside(128, 128));
}

TEST(Project, UnprojectRoundTrip) {
  Rng rng(11);
  Camera c = basic_camera();
  for (int k = 0; k < 200; ++k) {
    c.pose = random_rigid(rng);
    const double u = uniform<double>(rng, 0, 128), v = uniform<double>(rng, 0, 128);
    const double z = uniform<double>(rng, 0.5, 5);
    const auto p = project(unproject(u, v, z, c), c);
    EXPECT_NEAR(p.u, u, tol::kProjectionRoundTrip);
    EXPECT_NEAR(p.v, v, tol::kProjectionRoundTrip);
    EXPECT_NEAR(p.z, z, 1e-9);
  }
}

TEST(Camera, RayDirectionsAreUnitAndPassThroughPixel) {
  Camera c = basic_camera();
  Rng rng(3);
  c.pose = random_rigid(rng);
  const Ray r = camera_ray(c, 10.5, 99.5);
  EXPECT_NEAR(r.d.norm(), 1.0, tol::kUnitDirection);
  const auto p = project(r.at(2.0), c);
  EXPECT_NEAR(p.u, 10.5, 1e-9);
  EXPECT_NEAR(p.v, 99.5, 1e-9);
  EXPECT_NEAR(p.z, 2.0 * r.forward_cos, 1e-9);
}

TEST(Camera, ValidateRejectsBadCameras) {
  Camera c = basic_camera();
  EXPECT_NO_THROW(c.validate());
  Camera bad = c;
  bad.pose(0, 0) = 1.1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.near = 5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = c;
  bad.K.fx = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Camera, LookAtPointsOpticalAxisAtTarget) {
  Camera c = basic_camera();
  c.pose = look_at(Vec3(2, -1, 1.5), Vec3(0.1, 0.2, 0));
  c.validate();
  const auto p = project(Vec3(0.1, 0.2, 0), c);
  EXPECT_NEAR(p.u, 64, 1e-9);
  EXPECT_NEAR(p.v, 64, 1e-9);
}

TEST(ReferenceFrame, IdentityAndTranslation) {
  Camera ref = basic_camera();
  const Vec3 x(0.3, -0.2, 1.7), d = Vec3(0.1, 0.5, 0.8).normalized();
  auto [x1, d1] = to_reference_frame(x, d, ref);
  EXPECT_EQ(x1, x);
  EXPECT_EQ(d1, d);
  ref.pose.topRightCorner<3, 1>() = Vec3(1, 2, 3);
  auto [x2, d2] = to_reference_frame(x, d, ref);
  EXPECT_TRUE(x2.isApprox(x + Vec3(1, 2, 3), 1e-15));
  EXPECT_EQ(d2, d);
}

TEST(ReferenceFrame, RigidTransformPreservesDirectionNorm) {
  Rng rng(5);
  Camera ref = basic_camera();
  for (int k = 0; k < 100; ++k) {
    ref.pose = random_rigid(rng);
    const Vec3 d = Vec3(normal<double>(rng), normal<double>(rng), normal<double>(rng)).normalized();
    EXPECT_NEAR(to_reference_frame(Vec3::Zero(), d, ref).second.norm(), 1.0, tol::kUnitDirection);
  }
}

TEST(Neighbors, EquatorialExample) {
  const std::vector<Vec3> keys{equator(0), equator(90), equator(180), equator(270)};
  const auto idx = select_neighbors(equator(10), keys);
  EXPECT_EQ(idx[0], 0);
  EXPECT_EQ(idx[1], 1);
  EXPECT_EQ(idx[2], 3);
}

TEST(Neighbors, CoincidentAndForcedSelection) {
  const std::vector<Vec3> keys{equator(0), equator(90), equator(180), equator(270)};
  EXPECT_EQ(select_neighbors(equator(180), keys)[0], 2);
  const std::vector<Vec3> three{equator(0), equator(120), equator(240)};
  auto idx = select_neighbors(Vec3(0, 0, 1), three);
  std::sort(idx.begin(), idx.end());
  EXPECT_EQ(idx, (std::array<int, 3>{0, 1, 2}));
  EXPECT_THROW(select_neighbors(Vec3(1, 0, 0), std::vector<Vec3>{equator(0), equator(90)}), ConfigError);
}

TEST(Neighbors, ScaleInvariant) {
  Rng rng(9);
  const auto pts = fibonacci_hemisphere(40);
  for (int k = 0; k < 50; ++k) {
    const Vec3 t(normal<double>(rng), normal<double>(rng), std::abs(normal<double>(rng)));
    std::vector<Vec3> scaled;
    const double s = uniform<double>(rng, 0.1, 10);
    for (const auto& p : pts) scaled.push_back(p * s);
    EXPECT_EQ(select_neighbors(t, pts), select_neighbors(Vec3(t * 3.7), scaled));
  }
}

TEST(Barycentric, CentroidVertexAndEdge) {
  const Vec3 c1 = equator(0), c2 = equator(120), c3 = equator(240);
  const auto cen = barycentric_weights(Vec3((c1 + c2 + c3) / 3), c1, c2, c3).w;
  for (double w : cen) EXPECT_NEAR(w, 1.0 / 3, tol::kBarycentricSum);
  const auto v = barycentric_weights(c1, c1, c2, c3).w;
  EXPECT_NEAR(v[0], 1, tol::kBarycentricSum);
  EXPECT_NEAR(v[1], 0, tol::kBarycentricSum);
  EXPECT_NEAR(v[2], 0, tol::kBarycentricSum);
  const auto e = barycentric_weights(Vec3(0.5 * (c1 + c2)), c1, c2, c3).w;
  EXPECT_NEAR(e[0], 0.5, tol::kBarycentricSum);
  EXPECT_NEAR(e[1], 0.5, tol::kBarycentricSum);
  EXPECT_NEAR(e[2], 0.0, tol::kBarycentricSum);
}

TEST(Barycentric, AlwaysConvex) {
  Rng rng(13);
  auto rv = [&] { return Vec3(normal<double>(rng), normal<double>(rng), normal<double>(rng)); };
  for (int k = 0; k < 1000; ++k) {
    const auto r = barycentric_weights(rv() * 3, rv(), rv(), rv());
    double s = 0;
    for (double w : r.w) {
      EXPECT_GE(w, 0.0);
      s += w;
    }
    EXPECT_NEAR(s, 1.0, tol::kBarycentricSum);
  }
}

TEST(Barycentric, OffTriangleTargetIsClamped) {
  const Vec3 c1(0, 0, 0), c2(1, 0, 0), c3(0, 1, 0);
  const auto r = barycentric_weights(Vec3(2, 0, 0.5), c1, c2, c3);
  EXPECT_TRUE(r.clamped);
  EXPECT_NEAR(r.w[1], 1.0, 1e-12);
}

TEST(Barycentric, CollinearFallsBackToAngularWeights) {
  const Vec3 c1(1, 0, 0), c2(1, 1, 0), c3(1, 2, 0);
  const auto r = barycentric_weights(Vec3(1, 0.5, 0.5), c1, c2, c3);
  EXPECT_TRUE(r.degenerate);
  EXPECT_NEAR(r.w[0] + r.w[1] + r.w[2], 1.0, tol::kBarycentricSum);
  const auto hit = barycentric_weights(c2, c1, c2, c3);
  EXPECT_EQ(hit.w[1], 1.0);
}

TEST(Dome, EquidistantAndLookingAtCenter) {
  const Vec3 center(0.1, -0.2, 0.05);
  const auto d = make_dome(40, 3.0, center, {50, 50, 32, 32}, 64, 64, 1, 5);
  ASSERT_EQ(d.size(), 40);
  for (int i = 0; i < d.size(); ++i) {
    EXPECT_NEAR((d.locations[i] - center).norm(), 3.0, 1e-12);
    EXPECT_GT(d.relative(i).z(), 0);
    EXPECT_NO_THROW(d.cameras[i].validate());
    EXPECT_TRUE(d.cameras[i].center().isApprox(d.locations[i], 1e-12));
    const auto p = project(center, d.cameras[i]);
    EXPECT_NEAR(p.u, 32, 1e-9);
    EXPECT_NEAR(p.v, 32, 1e-9);
  }
}

TEST(CameraFile, RoundTripIsExact) {
  Rng rng(21);
  std::vector<NamedCamera> cams;
  for (int i = 0; i < 5; ++i) {
    Camera c = basic_camera(64, 48);
    c.pose = random_rigid(rng);
    c.K.fx = uniform<double>(rng, 20, 200);
    cams.push_back({"view_" + std::to_string(i), c});
  }
  const auto path = (std::filesystem::temp_directory_path() / "nvs_cams.txt").string();
  write_cameras(path, cams);
  const auto back = read_cameras(path);
  ASSERT_EQ(back.size(), cams.size());
  for (std::size_t i = 0; i < cams.size(); ++i) {
    EXPECT_EQ(back[i].name, cams[i].name);
    EXPECT_TRUE(back[i].cam == cams[i].cam);
  }
  std::filesystem::remove(path);
}

TEST(CameraFile, CorruptRowNamesTheView) {
  const auto path = (std::filesystem::temp_directory_path() / "nvs_cams_bad.txt").string();
  {
    std::ofstream os(path);
    os << "# nvs-cameras 1\n" << format_camera_line("good", basic_camera()) << "\n";
    os << "broken_view 1 2 3 oops\n";
  }
  try {
    read_cameras(path);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("broken_view"), std::string::npos);
    EXPECT_EQ(e.fault, DataFault::kParse);
  }
  std::filesystem::remove(path);
  EXPECT_THROW(read_cameras(path), DataError);
}

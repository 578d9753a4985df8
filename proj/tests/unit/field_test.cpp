#include <gtest/gtest.h>

#include <cmath>

#include "nvs/field/field.hpp"
#include "nvs/render/raysampling.hpp"
#include "nvs/substrate/grad_check.hpp"

using namespace nvs;
using namespace nvs::field;
using nvs::ad::Tensor;
using nvs::ad::Var;
using geo::Camera;
using geo::Vec3;

namespace {

Camera ref64() {
  Camera c;
  c.K = {64, 64, 32, 32};
  c.height = c.width = 64;
  c.near = 0.5;
  c.far = 3.0;
  return c;
}

// One 8x8 level whose texel (y, x) holds channels {y, x}.
FeatureVolume<double> ramp_volume(const Camera& ref) {
  Tensor<double> f({1, 8, 8, 2});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      f[(y * 8 + x) * 2] = y;
      f[(y * 8 + x) * 2 + 1] = x;
    }
  FeatureVolume<double> v;
  v.ref = ref;
  v.levels.push_back(Var<double>::constant(f));
  return v;
}

Tensor<double> points(const std::vector<Vec3>& xs) {
  Tensor<double> t({static_cast<std::int64_t>(xs.size()), 3});
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (int c = 0; c < 3; ++c) t[i * 3 + c] = xs[i][c];
  return t;
}

Tensor<double> test_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> img({h, w, 3});
  for (auto& v : img.storage()) v = uniform(rng, 0.0, 1.0);
  return img;
}

}  // namespace

TEST(FeatureIndexing, TexelCenterReturnsTexelValue) {
  const Camera ref = ref64();
  const auto vol = ramp_volume(ref);
  // Level stride 8: texel (2, 5) is centred at pixel (44, 20).
  const Vec3 x = geo::unproject(44.0, 20.0, 1.5, ref);
  const auto f = index_features(vol, compute_taps(points({x}), vol)).value();
  EXPECT_NEAR(f[0], 2.0, 1e-9);
  EXPECT_NEAR(f[1], 5.0, 1e-9);
}

TEST(FeatureIndexing, MidpointAveragesNeighbours) {
  const Camera ref = ref64();
  const auto vol = ramp_volume(ref);
  // Halfway between texel centres x=5 (u=44) and x=6 (u=52).
  const Vec3 x = geo::unproject(48.0, 20.0, 1.5, ref);
  const auto f = index_features(vol, compute_taps(points({x}), vol)).value();
  EXPECT_NEAR(f[0], 2.0, 1e-9);
  EXPECT_NEAR(f[1], 5.5, 1e-9);
}

TEST(FeatureIndexing, BehindOrOutsideGivesZeros) {
  const Camera ref = ref64();
  const auto vol = ramp_volume(ref);
  const auto f = index_features(vol, compute_taps(points({Vec3(0, 0, -1), Vec3(50, 0, 1)}), vol)).value();
  for (int i = 0; i < 4; ++i) EXPECT_EQ(f[i], 0.0);
}

TEST(FeatureIndexing, GradientScattersWithBilinearWeights) {
  const Camera ref = ref64();
  auto vol = ramp_volume(ref);
  vol.levels[0] = Var<double>::parameter(vol.levels[0].value(), "level");
  const Vec3 x = geo::unproject(48.0, 20.0, 1.5, ref);
  const auto taps = compute_taps(points({x}), vol);
  auto g = ad::grad(ad::sum(index_features(vol, taps)), {vol.levels[0]})[0].value();
  EXPECT_NEAR(g[(2 * 8 + 5) * 2], 0.5, 1e-12);
  EXPECT_NEAR(g[(2 * 8 + 6) * 2 + 1], 0.5, 1e-12);
  EXPECT_NEAR(g.sum(), 2.0, 1e-12);
}

TEST(Encoder, ProducesThreeLevelsWithSixtyFourChannels) {
  ad::ParamSet<double> ps;
  Rng rng(1);
  Encoder<double> enc(ps, EncoderConfig{}, rng);
  const auto vol = enc(Tensor<double>::zeros({64, 64, 3}), ref64());
  ASSERT_EQ(vol.levels.size(), 3u);
  EXPECT_EQ(vol.channels(), 64);
  EXPECT_EQ(vol.levels[0].dim(1), 32);
  EXPECT_EQ(vol.levels[1].dim(1), 16);
  EXPECT_EQ(vol.levels[2].dim(1), 8);
  for (const auto& l : vol.levels) EXPECT_TRUE(l.value().all_finite());
}

TEST(Encoder, DeterministicForSeed) {
  auto run = [] {
    ad::ParamSet<double> ps;
    Rng rng(7);
    Encoder<double> enc(ps, EncoderConfig{}, rng);
    return enc(test_image(32, 32, 3), ref64()).levels[2].value();
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.storage(), b.storage());
}

TEST(Encoder, RejectsSizeNotDivisibleByEight) {
  ad::ParamSet<double> ps;
  Rng rng(1);
  Encoder<double> enc(ps, EncoderConfig{}, rng);
  EXPECT_THROW(enc(Tensor<double>::zeros({20, 24, 3}), ref64()), ConfigError);
}

TEST(Reliability, GaussianInDepthDiscrepancy) {
  const Camera ref = ref64();
  const Tensor<double> depth = Tensor<double>::full({64, 64}, 2.0);
  const double sr = 0.25;
  const auto r = reliability(points({geo::unproject(10, 30, 2.0, ref), geo::unproject(10, 30, 2.25, ref),
                                     geo::unproject(10, 30, 4.0, ref), Vec3(0, 0, -1)}),
                             depth, ref, sr);
  EXPECT_NEAR(r[0], 1.0, 1e-12);
  EXPECT_NEAR(r[1], std::exp(-0.5), 1e-9);
  EXPECT_LT(r[2], 1e-9);
  EXPECT_EQ(r[3], 0.0);
}

class FieldFixture : public ::testing::Test {
 protected:
  FieldConfig small() {
    FieldConfig c;
    c.trunk_width = 8;
    c.trunk_layers = 2;
    c.hidden_dim = 6;
    c.pe_x = 1;
    c.pe_d = 1;
    c.corf_width = 8;
    return c;
  }
};

TEST_F(FieldFixture, FcHeadHasExactly387Parameters) {
  Rng rng(0);
  DualHeadField<double> f(FieldConfig{}, 64, rng);
  EXPECT_EQ(f.fc_params.count(), 387);
  EXPECT_EQ(f.input_dim(), 39 + 15 + 64);
}

TEST_F(FieldFixture, ConfidenceNetIsSmallAndBounded) {
  Rng rng(0);
  CorfNet<double> corf(FieldConfig{}, 64, rng);
  EXPECT_LE(corf.params.count(), 150000);
  EXPECT_EQ(corf.params.entries().size(), 6u);  // three affine layers

  const Camera ref = ref64();
  ad::ParamSet<double> ps;
  Encoder<double> enc(ps, EncoderConfig{}, rng);
  const auto vol = enc(test_image(64, 64, 5), ref);
  Tensor<double> x = points({geo::unproject(20, 20, 1.0, ref), geo::unproject(40, 50, 2.0, ref)});
  Tensor<double> d = points({Vec3(0, 0, 1), Vec3(0, 1, 0)});
  const auto in = prepare_points(x, d, vol, FieldConfig{});
  Tensor<double> r({2, 1});
  r[0] = 1.0;
  const auto a = corf(r, in).value();
  for (auto v : a.storage()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST_F(FieldFixture, RenderedColourGradientsMatchFiniteDifferences) {
  const Camera ref = ref64();
  const FieldConfig cfg = small();
  Rng rng(11);
  ad::ParamSet<double> eps;
  EncoderConfig ec;
  ec.channels = {2, 2, 2};
  Encoder<double> enc(eps, ec, rng);
  DualHeadField<double> field(cfg, ec.feature_dim(), rng);
  const Tensor<double> img = test_image(16, 16, 2);
  Camera small_ref = ref;
  small_ref.height = small_ref.width = 16;
  small_ref.K = {16, 16, 8, 8};

  Camera view = small_ref;
  view.pose.topRightCorner<3, 1>() = Vec3(0.1, 0, 0);
  Rng pr(3);
  const auto batch = render::sample_pixelwise(view, 3, pr);
  render::RenderOptions opt;
  // Fine depths move with the weights but are treated as constants, so the
  // check runs on the coarse level alone.
  opt.n_coarse = 6;
  opt.n_fine = 0;
  opt.heads.hidden = true;

  std::vector<Var<double>> params = field.trunk_params.vars();
  for (const auto& v : field.fc_params.vars()) params.push_back(v);
  for (const auto& v : eps.vars()) params.push_back(v);

  auto f = [&] {
    const auto vol = enc(img, small_ref);
    Conditioning<double> cond;
    cond.volume = &vol;
    const auto out = render::render_rays(bind_field(field, cond), batch.rays, opt);
    return ad::add(ad::sum(ad::square(out.rgb)), ad::mean(out.hidden));
  };
  const auto res = ad::grad_check(f, params, 1e-6, 6, 1);
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst_param << "[" << res.worst_index << "]";
}

TEST_F(FieldFixture, OutputsInvariantToRigidWorldMotion) {
  Camera ref = ref64();
  ref.pose.topRightCorner<3, 1>() = Vec3(0, 0, 0.5);
  Rng rng(4);
  ad::ParamSet<double> eps;
  Encoder<double> enc(eps, EncoderConfig{}, rng);
  DualHeadField<double> field(small(), 64, rng);
  const auto vol = enc(test_image(64, 64, 9), ref);

  Camera view = ref;
  view.pose.topRightCorner<3, 1>() = Vec3(0.2, -0.1, 0.6);
  Rng pr(5);
  const auto batch = render::sample_pixelwise(view, 32, pr);
  render::RenderOptions opt;
  opt.n_coarse = 8;
  opt.n_fine = 8;

  // World motion A: rotate about an oblique axis, then translate.
  geo::Mat4 A = geo::Mat4::Identity();
  A.topLeftCorner<3, 3>() = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  A.topRightCorner<3, 1>() = Vec3(3, -1, 2);
  auto moved = [&](Camera c) {
    c.pose = c.pose * A.inverse();
    return c;
  };
  const Camera ref2 = moved(ref), view2 = moved(view);
  auto vol2 = vol;
  vol2.ref = ref2;
  std::vector<geo::Ray> rays2;
  for (const auto& r : batch.rays) rays2.push_back(geo::camera_ray(view2, r.u, r.v));

  Conditioning<double> c1, c2;
  c1.volume = &vol;
  c2.volume = &vol2;
  ad::NoGradGuard ng;
  const auto a = render::render_rays(bind_field(field, c1), batch.rays, opt).rgb.value();
  const auto b = render::render_rays(bind_field(field, c2), rays2, opt).rgb.value();
  for (std::int64_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
}

TEST_F(FieldFixture, ConfidenceHeadRequiresDepthMap) {
  const Camera ref = ref64();
  Rng rng(0);
  ad::ParamSet<double> eps;
  Encoder<double> enc(eps, EncoderConfig{}, rng);
  DualHeadField<double> field(small(), 64, rng);
  CorfNet<double> corf(small(), 64, rng);
  const auto vol = enc(test_image(64, 64, 1), ref);
  Conditioning<double> cond;
  cond.volume = &vol;
  const auto fn = bind_field(field, &corf, cond);
  render::Heads h;
  h.conf = true;
  const Tensor<double> x = points({Vec3(0, 0, 1)});
  EXPECT_THROW(fn(x, x, h), ContractError);
  const Tensor<double> depth = Tensor<double>::full({64, 64}, 1.0);
  cond.ref_depth = &depth;
  const auto out = bind_field(field, &corf, cond)(x, x, h);
  EXPECT_EQ(out.conf.dim(0), 1);
}

#include <gtest/gtest.h>

#include "nvs/enhance/diff3de.hpp"
#include "nvs/enhance/toy_unet.hpp"

using namespace nvs;
using namespace nvs::diff;

namespace {

Tensor<float> smooth_image(int h, int w, double phase) {
  Tensor<float> img({h, w, 3});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = static_cast<float>(0.5 + 0.4 * std::sin(0.37 * x + 0.21 * y * (c + 1) + phase + c));
  return img;
}

double linf(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double linf(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
  return m;
}

Tensor<double> randn(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(s);
  for (auto& v : t.storage()) v = normal<double>(rng);
  return t;
}

geo::DomeLayout small_dome(int n, int side) {
  return geo::make_dome(n, 3.0, geo::Vec3::Zero(), {double(side), double(side), side / 2.0, side / 2.0}, side, side,
                        1, 5);
}

std::vector<Tensor<float>> dome_frames(const geo::DomeLayout& d, int side) {
  std::vector<Tensor<float>> out;
  for (int i = 0; i < d.size(); ++i) out.push_back(smooth_image(side, side, 0.3 * i));
  return out;
}

ToyUNetConfig tiny_unet() {
  ToyUNetConfig c;
  c.base_channels = 8;
  c.time_dim = 8;
  c.seed = 5;
  return c;
}

struct NanBackend final : DenoiserBackend {
  NoiseSchedule s = NoiseSchedule::linear();
  std::string name() const override { return "nan"; }
  const NoiseSchedule& schedule() const override { return s; }
  int num_blocks() const override { return 1; }
  Tensor<double> eps(const Tensor<double>& x, BlockCall w, const AttentionHooks*) const override {
    Tensor<double> e(x.shape());
    if (w.timestep > 400) e[0] = std::numeric_limits<double>::quiet_NaN();
    return e;
  }
};

}  // namespace

TEST(Schedule, StrictlyDecreasingFromOne) {
  const auto s = NoiseSchedule::linear();
  EXPECT_EQ(s.T(), 1000);
  EXPECT_EQ(s.at(0), 1.0);
  for (int t = 1; t <= s.T(); ++t) EXPECT_LT(s.at(t), s.at(t - 1));
  const auto ts = s.timesteps(25);
  ASSERT_EQ(ts.size(), 26u);
  EXPECT_EQ(ts.front(), 0);
  EXPECT_EQ(ts.back(), 1000);
  EXPECT_THROW(s.timesteps(0), ConfigError);
}

TEST(Ddim, ZeroNoiseClosedForm) {
  IdentityBackend b;
  const Tensor<double> x0 = encode_image(smooth_image(8, 8, 0));
  const Trajectory tr = ddim_invert(x0, b, 25);
  ASSERT_EQ(tr.latents.size(), 26u);
  for (std::size_t k = 0; k < tr.latents.size(); ++k) {
    const double s = std::sqrt(b.schedule().at(tr.timesteps[k]));
    for (std::int64_t i = 0; i < x0.numel(); ++i) ASSERT_NEAR(tr.latents[k][i], x0[i] * s, 1e-12);
  }
  EXPECT_LT(linf(ddim_sample(tr.latents.back(), b, 25), x0), 1e-12);
}

TEST(Ddim, SingleStepSchedule) {
  IdentityBackend b(NoiseSchedule::linear(1));
  const Tensor<double> x0 = encode_image(smooth_image(4, 4, 1));
  const Trajectory tr = ddim_invert(x0, b, 1);
  ASSERT_EQ(tr.timesteps, (std::vector<int>{0, 1}));
  ASSERT_EQ(tr.latents.size(), 2u);
  EXPECT_LT(linf(ddim_sample(tr.latents.back(), b, 1), x0), 1e-12);
  EXPECT_THROW(ddim_invert(x0, b, 2), ConfigError);
}

TEST(Ddim, ToyDenoiserRoundTrip) {
  ToyDenoiser b(tiny_unet());
  const Tensor<double> x0 = encode_image(smooth_image(16, 16, 0.5));
  const Trajectory tr = ddim_invert(x0, b, 10);
  EXPECT_LT(tr.max_fixed_point_residual, 1e-9);
  const double err = linf(ddim_sample(tr.latents.back(), b, 10), x0);
  EXPECT_LT(err, 1e-3);
  // Same input, same trajectory.
  EXPECT_EQ(linf(ddim_invert(x0, b, 10).latents.back(), tr.latents.back()), 0.0);
}

TEST(Ddim, NonFiniteLatentNamesTheStep) {
  NanBackend b;
  try {
    ddim_invert(encode_image(smooth_image(4, 4, 0)), b, 5);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos) << e.what();
  }
}

TEST(Denoiser, TrainingReducesNoiseLoss) {
  ToyDenoiser b(tiny_unet());
  std::vector<Tensor<double>> data;
  for (int i = 0; i < 4; ++i) data.push_back(encode_image(smooth_image(16, 16, i)));
  ToyDenoiser fresh(tiny_unet());
  const double before = train_toy_denoiser(fresh, data, {20, 4, 0.0, 1});
  const double after = train_toy_denoiser(b, data, {150, 4, 3e-3, 1});
  EXPECT_LT(after, 0.8 * before) << before << " -> " << after;
}

TEST(Denoiser, ArchiveRoundTrip) {
  ToyDenoiser b(tiny_unet());
  const std::string path = ::testing::TempDir() + "toy_denoiser.nvsa";
  b.save(path);
  ToyDenoiser c = ToyDenoiser::load(path);
  const Tensor<double> x = randn({1, 8, 8, 3}, 2);
  EXPECT_EQ(linf(b.eps(x, {1, 500, 0}, nullptr), c.eps(x, {1, 500, 0}, nullptr)), 0.0);
}

TEST(Isa, SingleFrameIsSelfAttention) {
  const Tensor<double> q = randn({5, 4}, 1), k = randn({5, 4}, 2), v = randn({5, 3}, 3);
  const auto out = inflated_self_attention({q}, {k}, {v});
  EXPECT_LT(linf(out[0], ad::kernel::attention(q, k, v)), 1e-15);
}

TEST(Isa, TwoEqualLogitsSplitEvenly) {
  const Tensor<double> one({1, 1}, {1.0}), three({1, 1}, {3.0});
  auto out = inflated_self_attention({one, one}, {one, one}, {one, one});
  EXPECT_NEAR(out[0][0], 1.0, 1e-15);
  EXPECT_NEAR(out[1][0], 1.0, 1e-15);
  // Distinct values expose the 0.5/0.5 weights.
  out = inflated_self_attention({one, one}, {one, one}, {one, three});
  EXPECT_NEAR(out[0][0], 2.0, 1e-15);
}

TEST(Isa, FrameOrderOnlyPermutesOutputs) {
  std::vector<Tensor<double>> q, k, v;
  for (int i = 0; i < 3; ++i) {
    q.push_back(randn({4, 2}, 10 + i));
    k.push_back(randn({4, 2}, 20 + i));
    v.push_back(randn({4, 3}, 30 + i));
  }
  const auto a = inflated_self_attention(q, k, v);
  const auto b = inflated_self_attention({q[2], q[0], q[1]}, {k[2], k[0], k[1]}, {v[2], v[0], v[1]});
  EXPECT_LT(linf(a[0], b[1]), 1e-12);
  EXPECT_LT(linf(a[1], b[2]), 1e-12);
  EXPECT_LT(linf(a[2], b[0]), 1e-12);
}

TEST(Isa, IdenticalFramesMatchSingleFrame) {
  const Tensor<double> q = randn({6, 4}, 4), k = randn({6, 4}, 5), v = randn({6, 2}, 6);
  const auto one = inflated_self_attention({q}, {k}, {v});
  const auto three = inflated_self_attention({q, q, q}, {k, k, k}, {v, v, v});
  for (const auto& t : three) EXPECT_LT(linf(t, one[0]), 1e-12);
}

TEST(Isa, DimensionMismatchRejected) {
  EXPECT_THROW(inflated_self_attention({randn({2, 4}, 1), randn({2, 3}, 2)}, {randn({2, 4}, 3), randn({2, 3}, 4)},
                                       {randn({2, 2}, 5), randn({2, 2}, 6)}),
               ContractError);
}

TEST(Propagate, SelfCorrespondenceIsIdentity) {
  const Tensor<double> f = randn({30, 8}, 7);
  const auto c = match_features(f, f);
  for (std::size_t i = 0; i < c.index.size(); ++i) EXPECT_EQ(c.index[i], static_cast<std::int64_t>(i));
}

TEST(Propagate, ConstantFeaturesKeepSpatialIndex) {
  const Tensor<double> f = Tensor<double>::full({12, 4}, 0.7);
  const auto c = match_features(f, f);
  for (std::size_t i = 0; i < c.index.size(); ++i) EXPECT_EQ(c.index[i], static_cast<std::int64_t>(i));
  const auto z = match_features(Tensor<double>({12, 4}), Tensor<double>({12, 4}));
  for (std::size_t i = 0; i < z.index.size(); ++i) EXPECT_EQ(z.index[i], static_cast<std::int64_t>(i));
}

TEST(Propagate, CircularShiftRecovered) {
  const int H = 16, W = 16, C = 16, s = 3;
  const Tensor<double> key = randn({H * W, C}, 11);
  Rng rng(12);
  Tensor<double> target({H * W, C});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c)
        target[(y * W + x) * C + c] = key[(y * W + (x + s) % W) * C + c] + 0.2 * normal<double>(rng);
  const auto corr = match_features(target, key);
  int hits = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) hits += corr.index[y * W + x] == y * W + (x + s) % W;
  EXPECT_GE(hits, 0.95 * H * W);
}

TEST(Propagate, EmptyCacheRejected) {
  Keyframe kf;
  EXPECT_THROW(propagate_tokens(randn({4, 2}, 1), kf, 1, 0), ContractError);
  EXPECT_THROW(match_features(randn({4, 2}, 1), Tensor<double>({0, 2})), ContractError);
}

TEST(Blend, EqualWeightsGiveMeanAndStayConvex) {
  const std::vector<Tensor<double>> t{randn({5, 3}, 1), randn({5, 3}, 2), randn({5, 3}, 3)};
  const auto m = blend_tokens(t, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  for (std::int64_t i = 0; i < m.numel(); ++i) EXPECT_NEAR(m[i], (t[0][i] + t[1][i] + t[2][i]) / 3, 1e-14);
  const auto b = blend_tokens(t, {0.2, 0.5, 0.3});
  for (std::int64_t i = 0; i < b.numel(); ++i) {
    EXPECT_GE(b[i], std::min({t[0][i], t[1][i], t[2][i]}) - 1e-14);
    EXPECT_LE(b[i], std::max({t[0][i], t[1][i], t[2][i]}) + 1e-14);
  }
  EXPECT_THROW(blend_tokens({t[0], t[1], randn({4, 3}, 9)}, {0.2, 0.5, 0.3}), ContractError);
}

TEST(Keyframes, IdentityCacheHoldsSingleFrameTokens) {
  const auto dome = small_dome(6, 8);
  EnhanceConfig cfg;
  cfg.keyframes = 6;
  cfg.steps = 5;
  cfg.working_res = 8;
  IdentityBackend b;
  const auto set = build_keyframes(dome_frames(dome, 8), dome, b, cfg);
  EXPECT_EQ(set.cache_entries(), 6u * 5u * 1u);
  for (const auto& kf : set.frames) {
    EXPECT_NE(std::find(kf.neighbors.begin(), kf.neighbors.end(), kf.index), kf.neighbors.end());
    for (const auto& [key, tok] : kf.tokens) EXPECT_LT(linf(tok, kf.features.at(key)), 1e-12);
    EXPECT_LT(linf(kf.enhanced, kf.frame), 1e-6);
  }
}

TEST(Keyframes, ThreeKeyframesFormOneNeighbourhood) {
  const auto dome = small_dome(3, 8);
  EnhanceConfig cfg;
  cfg.keyframes = 3;
  cfg.steps = 2;
  cfg.working_res = 8;
  const auto set = build_keyframes(dome_frames(dome, 8), dome, IdentityBackend(), cfg);
  for (const auto& kf : set.frames) {
    auto n = kf.neighbors;
    std::sort(n.begin(), n.end());
    EXPECT_EQ(n, (std::array<int, 3>{0, 1, 2}));
  }
}

TEST(Keyframes, FramePoseMismatchRejected) {
  const auto dome = small_dome(4, 8);
  auto frames = dome_frames(dome, 8);
  frames.pop_back();
  EnhanceConfig cfg;
  cfg.working_res = 8;
  EXPECT_THROW(build_keyframes(frames, dome, IdentityBackend(), cfg), DataError);
}

TEST(Enhance, IdentityBackendLeavesFramesUnchanged) {
  const auto dome = small_dome(5, 16);
  EnhanceConfig cfg;
  cfg.keyframes = 5;
  cfg.steps = 4;
  cfg.working_res = 8;
  IdentityBackend b;
  const auto set = build_keyframes(dome_frames(dome, 16), dome, b, cfg);
  geo::Camera cam = dome.cameras[0];
  cam.pose = geo::look_at(geo::Vec3(1.0, 2.0, 2.0), geo::Vec3::Zero());
  const auto img = smooth_image(16, 16, 2.0);
  EXPECT_LT(linf(enhance_view(img, cam, set, b).image, img), 1e-6);
  const auto small = smooth_image(8, 8, 1.0);
  EXPECT_LT(linf(enhance_view(small, cam, set, b).image, small), 1e-6);
}

TEST(Enhance, ToyBackendVertexRecoveryAndDeterminism) {
  const auto dome = small_dome(5, 16);
  EnhanceConfig cfg;
  cfg.keyframes = 5;
  cfg.steps = 4;
  cfg.working_res = 16;
  ToyDenoiser b(tiny_unet());
  const auto frames = dome_frames(dome, 16);
  const auto set = build_keyframes(frames, dome, b, cfg);
  EXPECT_EQ(set.cache_entries(), 5u * 4u * 2u);
  const int c1 = 2;
  const auto r = enhance_view(frames[c1], dome.cameras[c1], set, b);
  EXPECT_EQ(r.neighbors[0], c1);
  EXPECT_NEAR(r.weights[0], 1.0, 1e-9);
  EXPECT_LT(linf(r.working, set.frames[c1].enhanced), 1e-5);
  // The joint pass actually changed something, so the check above is not vacuous.
  EXPECT_GT(linf(set.frames[c1].enhanced, frames[c1]), 1e-3);
  const auto again = enhance_view(frames[c1], dome.cameras[c1], set, b);
  EXPECT_EQ(linf(again.image, r.image), 0.0);
}

TEST(Enhance, CacheArchiveRoundTrip) {
  const auto dome = small_dome(4, 8);
  EnhanceConfig cfg;
  cfg.keyframes = 4;
  cfg.steps = 3;
  cfg.working_res = 8;
  ToyDenoiser b(tiny_unet());
  const auto set = build_keyframes(dome_frames(dome, 8), dome, b, cfg);
  const std::string path = ::testing::TempDir() + "kf_cache.nvsa";
  save_keyframe_cache(set, path);
  const auto loaded = load_keyframe_cache(path, dome);
  EXPECT_EQ(loaded.cache_entries(), set.cache_entries());
  geo::Camera cam = dome.cameras[1];
  cam.pose = geo::look_at(geo::Vec3(0.5, 2.0, 2.2), geo::Vec3::Zero());
  const auto img = smooth_image(8, 8, 0.9);
  EXPECT_EQ(linf(enhance_view(img, cam, set, b).image, enhance_view(img, cam, loaded, b).image), 0.0);
  EXPECT_THROW(enhance_view(img, cam, set, IdentityBackend()), ContractError);
  EXPECT_THROW(load_keyframe_cache(path, small_dome(5, 8)), CheckpointError);
}

TEST(EnhanceConfig, Validation) {
  EnhanceConfig c;
  EXPECT_EQ(c.keyframes, 40);
  EXPECT_EQ(c.steps, 25);
  EXPECT_EQ(c.guidance, 7.5);
  c.keyframes = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

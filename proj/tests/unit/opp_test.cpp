#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "nvs/opp/train.hpp"

using namespace nvs;
using ad::Tensor;
using opp::PipelineMode;

namespace {

// 32x32 views, 8x8 grid, narrow nets: a few steps cost well under a second.
opp::ModelConfig tiny_model() {
  opp::ModelConfig mc;
  mc.image_h = mc.image_w = 32;
  mc.grid_h = mc.grid_w = 8;
  mc.field.trunk_width = 32;
  mc.field.trunk_layers = 2;
  mc.field.hidden_dim = 16;
  mc.field.corf_width = 16;
  mc.upsampler_width = 16;
  mc.disc_channels = {8, 16};
  mc.refiner_width = 8;
  return mc;
}

const data::SceneDataset& tiny_scene() {
  static const data::SceneDataset ds = [] {
    data::ViewSetConfig vc;
    vc.n_views = 6;
    vc.n_test = 2;
    vc.height = vc.width = 32;
    return data::generate_scene(data::random_scene_spec(3), data::view_set(vc), vc.n_test, "tiny");
  }();
  return ds;
}

opp::TrainConfig tiny_train(PipelineMode mode) {
  opp::TrainConfig tc;
  tc.pipeline = mode;
  tc.lr = 1e-3;
  tc.steps = 3;
  tc.tandem_b_steps = 2;
  tc.finetune_steps = 3;
  tc.rays = 32;
  tc.patch = 8;
  tc.n_coarse = 6;
  tc.n_fine = 4;
  tc.early_stop_window = 0;
  return tc;
}

template <class T>
std::vector<Tensor<T>> snapshot(const ad::ParamSet<T>& ps) {
  std::vector<Tensor<T>> out;
  for (const auto& e : ps.entries()) out.push_back(e.var.value());
  return out;
}

template <class T>
bool same(const std::vector<Tensor<T>>& a, const ad::ParamSet<T>& ps) {
  const auto b = snapshot(ps);
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].storage() != b[i].storage()) return false;
  return true;
}

}  // namespace

TEST(OppModel, DefaultOverheadWithinBudget) {
  opp::OppModel<float> m(opp::ModelConfig{});
  const auto r = m.overhead();
  EXPECT_EQ(r.fc, 128 * 3 + 3);
  EXPECT_LE(r.corf, 150000);
  EXPECT_LE(r.upsampler, 200000);
  EXPECT_EQ(r.overhead(), r.hidden_head_delta + r.fc + r.corf + r.upsampler);
  EXPECT_LE(r.overhead(), 500000);
  EXPECT_EQ(r.groups.at("discriminator"), m.disc.params.count());
}

TEST(OppModel, GroupsPartitionAllParameters) {
  opp::OppModel<float> m(tiny_model());
  std::set<const void*> seen;
  std::size_t n = 0;
  for (auto& [name, ps] : m.groups())
    for (const auto& e : ps->entries()) {
      seen.insert(e.var.node());
      ++n;
    }
  EXPECT_EQ(seen.size(), n);
  EXPECT_THROW(m.group("nope"), ConfigError);
}

TEST(OppModel, RejectsBadLayouts) {
  auto mc = tiny_model();
  mc.grid_h = 5;
  EXPECT_THROW(opp::OppModel<float>{mc}, ConfigError);
  mc = tiny_model();
  mc.grid_h = mc.grid_w = 4;
  mc.image_h = mc.image_w = 24;  // factor 6 is not a power of two
  EXPECT_THROW(opp::OppModel<float>{mc}, ConfigError);
}

TEST(OppCheckpoint, RoundTripRestoresWeightsAndMoments) {
  const auto path = (std::filesystem::temp_directory_path() / "opp_ckpt_test.nvsa").string();
  opp::OppModel<float> m(tiny_model());
  opp::Trainer<float> tr(m, tiny_scene(), tiny_train(PipelineMode::kOneStageParallel));
  tr.step_parallel();
  opp::save_checkpoint(m, path, tr.step(), tr.optimizers());
  const auto before = snapshot(m.collect({"encoder", "field", "fc", "upsampler", "discriminator"}));
  const auto moments = tr.optimizers()[0].opt->state().first_moment;

  auto mc = tiny_model();
  mc.seed = 99;  // different init, same layout
  opp::OppModel<float> m2(mc);
  opp::Trainer<float> tr2(m2, tiny_scene(), tiny_train(PipelineMode::kOneStageParallel));
  EXPECT_FALSE(same(before, m2.collect({"encoder", "field", "fc", "upsampler", "discriminator"})));
  const auto step = opp::load_checkpoint(m2, path, tr2.optimizers());
  EXPECT_EQ(step, 1);
  EXPECT_TRUE(same(before, m2.collect({"encoder", "field", "fc", "upsampler", "discriminator"})));
  const auto& st = tr2.optimizers()[0].opt->state();
  EXPECT_EQ(st.step, 1);
  for (std::size_t i = 0; i < moments.size(); ++i) EXPECT_EQ(st.first_moment[i].storage(), moments[i].storage());
  std::filesystem::remove(path);
}

TEST(OppCheckpoint, IncompatibleFilesRejected) {
  const auto path = (std::filesystem::temp_directory_path() / "opp_ckpt_bad.nvsa").string();
  opp::OppModel<float> m(tiny_model());
  opp::save_checkpoint(m, path, 0);
  auto mc = tiny_model();
  mc.field.hidden_dim = 24;
  opp::OppModel<float> other(mc);
  const auto before = snapshot(other.field.trunk_params);
  EXPECT_THROW(opp::load_checkpoint(other, path), CheckpointError);
  EXPECT_TRUE(same(before, other.field.trunk_params));
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("not an archive", f);
    std::fclose(f);
  }
  EXPECT_THROW(opp::load_checkpoint(m, path), CheckpointError);
  std::filesystem::remove(path);
}

TEST(OppTrain, AllPipelinesRunFromOneConfig) {
  for (auto mode : {PipelineMode::kTwoStageTandem, PipelineMode::kOneStageTandem, PipelineMode::kOneStageParallel}) {
    opp::OppModel<float> m(tiny_model());
    opp::Trainer<float> tr(m, tiny_scene(), tiny_train(mode));
    const auto s = tr.train();
    EXPECT_EQ(s.steps_run, mode == PipelineMode::kTwoStageTandem ? 5 : 3) << opp::to_string(mode);
    for (const auto& r : s.log) EXPECT_TRUE(std::isfinite(r.total)) << opp::to_string(mode);
  }
}

TEST(OppTrain, ZeroWeightsReduceToMse) {
  auto tc = tiny_train(PipelineMode::kOneStageParallel);
  tc.weights.lambda_gan = tc.weights.lambda_per = 0;
  opp::OppModel<float> m(tiny_model());
  opp::Trainer<float> tr(m, tiny_scene(), tc);
  const auto disc = snapshot(m.disc.params);
  for (int i = 0; i < 3; ++i) {
    const auto r = tr.step_parallel();
    EXPECT_TRUE(std::isnan(r.g_adv) && std::isnan(r.g_per) && std::isnan(r.d_loss));
    EXPECT_NEAR(r.total, r.nerf + r.nerf_coarse + r.g_mse, 1e-6);
  }
  EXPECT_TRUE(same(disc, m.disc.params));

  tc.pipeline = PipelineMode::kOneStageTandem;
  opp::OppModel<float> m2(tiny_model());
  opp::Trainer<float> tr2(m2, tiny_scene(), tc);
  const auto fc = snapshot(m2.field.fc_params);
  const auto r = tr2.step_one_stage();
  EXPECT_DOUBLE_EQ(r.total, r.g_mse);
  EXPECT_TRUE(same(fc, m2.field.fc_params));  // no parallel RGB head in the one-stage pipeline
}

TEST(OppTrain, CriticStepMovesOnlyDiscriminator) {
  opp::OppModel<float> m(tiny_model());
  opp::Trainer<float> tr(m, tiny_scene(), tiny_train(PipelineMode::kOneStageTandem));
  const auto corf = snapshot(m.corf.params);
  const auto refiner = snapshot(m.refiner.params);
  const auto disc = snapshot(m.disc.params);
  const auto r = tr.step_one_stage();
  EXPECT_TRUE(std::isfinite(r.d_loss));
  EXPECT_GE(r.r1, 0);
  EXPECT_FALSE(same(disc, m.disc.params));
  EXPECT_TRUE(same(corf, m.corf.params));
  EXPECT_TRUE(same(refiner, m.refiner.params));
}

TEST(OppTrain, TwoStagePhaseBLeavesNerfUntouched) {
  opp::OppModel<float> m(tiny_model());
  opp::Trainer<float> tr(m, tiny_scene(), tiny_train(PipelineMode::kTwoStageTandem));
  for (int i = 0; i < 2; ++i) tr.step_nerf_only();
  auto nerf = m.collect({"encoder", "field", "fc"});
  nerf.set_trainable(false);
  const auto before = snapshot(nerf);
  const auto ref_before = snapshot(m.refiner.params);
  for (int i = 0; i < 3; ++i) tr.step_refiner();
  EXPECT_TRUE(same(before, nerf));
  EXPECT_FALSE(same(ref_before, m.refiner.params));
}

TEST(OppTrain, DivergenceGuard) {
  EXPECT_THROW(opp::guard_loss("x", 2e4, 7), DivergenceError);
  EXPECT_THROW(opp::guard_loss("x", std::nan(""), 7), DivergenceError);
  EXPECT_NO_THROW(opp::guard_loss("x", 9e3, 7));
}

TEST(OppTrain, EarlyStopOnPlateau) {
  auto tc = tiny_train(PipelineMode::kOneStageParallel);
  tc.lr = 1e-12;  // nothing moves, so the windowed loss cannot improve by 1%
  tc.steps = 40;
  tc.early_stop_window = 4;
  tc.early_stop_rel = 0.9;
  tc.weights.lambda_gan = 0;
  opp::OppModel<float> m(tiny_model());
  opp::Trainer<float> tr(m, tiny_scene(), tc);
  const auto s = tr.train();
  EXPECT_TRUE(s.early_stopped);
  EXPECT_EQ(s.steps_run, 8);
}

TEST(OppFinetune, OnlyConfidenceNetMoves) {
  opp::OppModel<float> m(tiny_model());
  opp::Trainer<float> tr(m, tiny_scene(), tiny_train(PipelineMode::kOneStageParallel));
  tr.train();
  const auto frozen = snapshot(m.collect({"encoder", "field", "fc", "upsampler", "refiner", "discriminator"}));
  const auto corf = snapshot(m.corf.params);
  const auto s = tr.finetune_corf();
  EXPECT_EQ(s.steps_run, 3);
  EXPECT_TRUE(same(frozen, m.collect({"encoder", "field", "fc", "upsampler", "refiner", "discriminator"})));
  EXPECT_FALSE(same(corf, m.corf.params));
}

TEST(OppFinetune, FrozenParameterUpdateIsFatal) {
  opp::OppModel<float> m(tiny_model());
  m.field.trunk_params.set_trainable(false);
  auto v = m.field.trunk_params.vars().front();
  v.mutable_grad() = Tensor<float>::full(v.shape(), 1.0f);
  ad::Adam<float> opt(m.field.trunk_params.vars());
  EXPECT_THROW(opt.step(), ContractError);
}

TEST(OppRender, PatchMatchesFullRenderCrop) {
  opp::OppModel<float> m(tiny_model());
  const auto& ds = tiny_scene();
  const auto& ref = ds.views[ds.reference];
  auto tc = tiny_train(PipelineMode::kOneStageParallel);
  opp::OppRenderer<float> r(m, ref.image, ref.cam, tc.samples());
  const auto& cam = ds.views[1].cam;
  const auto full = r.render_all(cam);
  Rng rng(4);
  auto patch = render::sample_patch(cam, 8, rng);
  ad::NoGradGuard ng;
  auto out = render::render_rays(r.field_fn(), patch.rays, r.options({true, false, true, false}));
  const auto rgb = opp::crop_rows(full.nerf, patch), conf = opp::crop_rows(full.conf, patch);
  for (std::int64_t i = 0; i < rgb.numel(); ++i) EXPECT_NEAR(out.rgb.value()[i], rgb[i], 1e-5);
  for (std::int64_t i = 0; i < conf.numel(); ++i) EXPECT_NEAR(out.conf.value()[i], conf[i], 1e-5);
}

TEST(OppRender, BranchOutputsAndFusionBounds) {
  opp::OppModel<float> m(tiny_model());
  const auto& ds = tiny_scene();
  const auto& ref = ds.views[ds.reference];
  opp::OppRenderer<float> r(m, ref.image, ref.cam, tiny_train(PipelineMode::kOneStageParallel).samples());
  const auto b = r.render_all(ds.views[2].cam);
  ASSERT_EQ(b.conf.shape(), (ad::Shape{32, 32, 1}));
  for (float a : b.conf.storage()) EXPECT_TRUE(a >= 0 && a <= 1);
  for (std::int64_t p = 0; p < 32 * 32; ++p)
    for (int c = 0; c < 3; ++c) {
      const float lo = std::min(b.nerf[p * 3 + c], b.gan[p * 3 + c]);
      const float hi = std::max(b.nerf[p * 3 + c], b.gan[p * 3 + c]);
      EXPECT_GE(b.fused[p * 3 + c], lo - 1e-6f);
      EXPECT_LE(b.fused[p * 3 + c], hi + 1e-6f);
    }
  EXPECT_EQ(b.nerf_queries / b.gan_queries, 16);  // 32x32 full vs 8x8 grid
  for (float z : r.ref_depth().storage()) EXPECT_TRUE(z > 0 && z <= ref.cam.far + 1e-3);
}

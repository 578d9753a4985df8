#pragma once

#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <memory>

#include <spdlog/spdlog.h>

#include "nvs/data/scene.hpp"
#include "nvs/opp/render.hpp"

namespace nvs::opp {

struct TrainConfig {
  PipelineMode pipeline = PipelineMode::kOneStageParallel;
  LossWeights weights;
  double lr = defaults::kLearningRate;
  double lr_final_scale = 1.0;  // exponential decay reaches lr * scale at the last step
  int steps = 2000;             // phase 1 (two-stage: phase A)
  int tandem_b_steps = 500;     // two-stage phase B
  int finetune_steps = 300;
  double finetune_lr = 1e-3;
  int rays = 512;               // NeRF-branch rays per step
  int patch = defaults::kPatchSize;
  int n_coarse = defaults::kCoarseSamples;
  int n_fine = defaults::kFineSamples;
  bool jitter = true;
  int early_stop_window = 500;  // 0 disables
  double early_stop_rel = 0.01;
  int log_every = 0;
  std::uint64_t seed = 0;

  render::RenderOptions samples() const {
    render::RenderOptions o;
    o.n_coarse = n_coarse;
    o.n_fine = n_fine;
    return o;
  }

  void validate() const {
    weights.validate();
    if (!(lr > 0) || !(finetune_lr > 0) || !(lr_final_scale > 0)) throw ConfigError("learning rates must be positive");
    if (steps < 0 || tandem_b_steps < 0 || finetune_steps < 0) throw ConfigError("step counts must be >= 0");
    if (rays < 1 || patch < 1) throw ConfigError("rays and patch must be >= 1");
    if (n_coarse < 1 || n_fine < 0) throw ConfigError("sample counts");
    if (early_stop_window < 0 || early_stop_rel < 0) throw ConfigError("early stop settings");
  }
};

// Scalar losses of one step; NaN marks terms the step did not compute.
struct LossReport {
  static constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();
  std::int64_t step = 0;
  std::string phase;
  double nerf = kUnset, nerf_coarse = kUnset;
  double g_mse = kUnset, g_per = kUnset, g_adv = kUnset;
  double d_loss = kUnset, r1 = kUnset;
  double corf = kUnset;
  double total = kUnset;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"step", step}, {"phase", phase}};
    auto put = [&](const char* k, double v) {
      if (!std::isnan(v)) j[k] = v;
    };
    put("nerf", nerf);
    put("nerf_coarse", nerf_coarse);
    put("g_mse", g_mse);
    put("g_per", g_per);
    put("g_adv", g_adv);
    put("d_loss", d_loss);
    put("r1", r1);
    put("corf", corf);
    put("total", total);
    return j;
  }
};

struct TrainSummary {
  std::int64_t steps_run = 0;
  bool early_stopped = false;
  double seconds = 0;
  double first_window_loss = 0;  // mean main loss over steps 1..50 (or fewer)
  double final_window_loss = 0;  // mean main loss over the last 50 steps
  std::vector<LossReport> log;
};

inline void guard_loss(const char* name, double v, std::int64_t step) {
  if (!std::isfinite(v) || v > tol::kDivergenceLoss)
    throw DivergenceError(fmt::format("loss {} = {} at step {} exceeds the divergence guard", name, v, step));
}

// Training loops for the three pipelines and the confidence finetune.
// Optimizers: "gen" (encoder, field, fc, upsampler), "disc", "refiner", "corf".
template <class T>
class Trainer {
 public:
  using Callback = std::function<void(const LossReport&)>;

  Trainer(OppModel<T>& m, const data::SceneDataset& ds, TrainConfig cfg)
      : m_(m), ds_(ds), cfg_(std::move(cfg)), rng_(SeedTree(cfg_.seed).stream("train")),
        gen_opt_(m.collect({"encoder", "field", "fc", "upsampler"}).vars(), {cfg_.lr}),
        disc_opt_(m.disc.params.vars(), {cfg_.lr}),
        refiner_opt_(m.refiner.params.vars(), {cfg_.lr}),
        corf_opt_(m.corf.params.vars(), {cfg_.finetune_lr}) {
    cfg_.validate();
    train_ = ds.indices("train");
    if (train_.empty()) throw DataError("dataset has no training views", DataFault::kCountMismatch);
    const auto& ref = ds.views.at(ds.reference);
    if (ref.cam.height != m.cfg.image_h || ref.cam.width != m.cfg.image_w)
      throw ConfigError(fmt::format("dataset images are {}x{} but the model expects {}x{}", ref.cam.height,
                                    ref.cam.width, m.cfg.image_h, m.cfg.image_w));
    ref_image_ = to_tensor<T>(ref.image);
    for (const auto& v : ds.views) images_.push_back(to_tensor<T>(v.image));
  }

  const TrainConfig& config() const { return cfg_; }
  std::int64_t step() const { return step_; }
  std::vector<NamedOptimizer<T>> optimizers() {
    return {{"gen", &gen_opt_}, {"disc", &disc_opt_}, {"refiner", &refiner_opt_}, {"corf", &corf_opt_}};
  }
  void set_step(std::int64_t s) { step_ = s; }

  // --- single steps -------------------------------------------------------

  // Parallel pipeline: NeRF rays and the grid/upsampler branch share one
  // encoder pass and one generator update, then the critic steps.
  LossReport step_parallel() {
    LossReport rep = begin("opp");
    const int v = pick_view();
    field::FeatureVolume<T> vol = m_.encoder(ref_image_, ref_cam());
    auto fn = field::bind_field(m_.field, field::Conditioning<T>{&vol, nullptr, 0.1});
    Var<T> l_nerf = nerf_loss(fn, v, rep);
    Var<T> fake = gan_image(fn, v);
    Var<T> l_g = generator_loss(fake, v, rep);
    Var<T> total = ad::add(l_nerf, l_g);
    rep.total = total.value()[0];
    guard_loss("total", rep.total, rep.step);
    update(gen_opt_, total, m_.collect({"encoder", "field", "fc", "upsampler"}));
    critic_step(fake, v, rep);
    return rep;
  }

  // Two-stage phase A: the NeRF branch alone.
  LossReport step_nerf_only() {
    LossReport rep = begin("two_stage_a");
    const int v = pick_view();
    field::FeatureVolume<T> vol = m_.encoder(ref_image_, ref_cam());
    auto fn = field::bind_field(m_.field, field::Conditioning<T>{&vol, nullptr, 0.1});
    Var<T> l = nerf_loss(fn, v, rep);
    rep.total = l.value()[0];
    update(gen_opt_, l, m_.collect({"encoder", "field", "fc"}));
    return rep;
  }

  // Two-stage phase B: the refiner learns on frozen full NeRF renders.
  LossReport step_refiner() {
    LossReport rep = begin("two_stage_b");
    if (nerf_cache_.empty()) build_nerf_cache();
    const int v = pick_view();
    const Tensor<T>& in = nerf_cache_.at(v);
    Var<T> fake = m_.refiner(Var<T>::constant(in.reshaped({1, in.dim(0), in.dim(1), 3})));
    Var<T> l_g = generator_loss(fake, v, rep);
    rep.total = l_g.value()[0];
    guard_loss("total", rep.total, rep.step);
    update(refiner_opt_, l_g, m_.refiner.params);
    critic_step(fake, v, rep);
    return rep;
  }

  // One-stage tandem: grid rays and the upsampler under L_G only.
  LossReport step_one_stage() {
    LossReport rep = begin("one_stage");
    const int v = pick_view();
    field::FeatureVolume<T> vol = m_.encoder(ref_image_, ref_cam());
    auto fn = field::bind_field(m_.field, field::Conditioning<T>{&vol, nullptr, 0.1});
    Var<T> fake = gan_image(fn, v);
    Var<T> l_g = generator_loss(fake, v, rep);
    rep.total = l_g.value()[0];
    guard_loss("total", rep.total, rep.step);
    update(gen_opt_, l_g, m_.collect({"encoder", "field", "upsampler"}));
    critic_step(fake, v, rep);
    return rep;
  }

  // Confidence finetune: random patches through both frozen branches, fused
  // by the confidence map; only the confidence net moves.
  LossReport step_corf() {
    LossReport rep = begin("finetune_corf");
    if (!frozen_) freeze_for_finetune();
    const int v = pick_view();
    const auto& cam = ds_.views[v].cam;
    auto batch = render::sample_patch(cam, cfg_.patch, rng_);
    render::RenderOptions o = renderer_->options({true, false, true, false});
    auto out = render::render_rays(renderer_->field_fn(), batch.rays, o);
    const Tensor<T> gan_rows = crop_rows(gan_cache_.at(v), batch);
    Var<T> fused = dpf_fuse(out.rgb.detach(), Var<T>::constant(gan_rows), out.conf);
    const Tensor<T> gt = crop_rows(images_[v], batch);
    const Shape img{1, batch.rows, batch.cols, 3};
    Var<T> l_per = per_(ad::reshape(fused, img), Var<T>::constant(gt.reshaped(img)));
    Var<T> l_mse = ad::mse(fused, Var<T>::constant(gt));
    Var<T> loss = ad::add(l_per, l_mse);
    rep.g_per = l_per.value()[0];
    rep.g_mse = l_mse.value()[0];
    rep.corf = rep.total = loss.value()[0];
    guard_loss("corf", rep.corf, rep.step);
    update(corf_opt_, loss, m_.corf.params);
    return rep;
  }

  // --- loops --------------------------------------------------------------

  // Phase 1 of the selected pipeline, with the windowed early stop.
  TrainSummary train(const Callback& cb = {}) {
    m_.set_all_trainable(true);
    frozen_ = false;
    TrainSummary s;
    const auto t0 = std::chrono::steady_clock::now();
    auto main_loss = [&](const LossReport& r) {
      return cfg_.pipeline == PipelineMode::kOneStageTandem ? r.g_mse : r.nerf;
    };
    auto run = [&](int steps, const std::function<LossReport()>& fn, bool early) {
      std::vector<double> hist;
      for (int i = 0; i < steps; ++i) {
        set_lr(i, steps, cfg_.lr);
        LossReport r = fn();
        hist.push_back(main_loss(r));
        s.log.push_back(r);
        ++s.steps_run;
        if (cb) cb(r);
        if (cfg_.log_every > 0 && r.step % cfg_.log_every == 0) spdlog::info("{}", r.to_json().dump());
        if (early && stop_now(hist)) {
          s.early_stopped = true;
          break;
        }
      }
      return hist;
    };
    std::vector<double> hist;
    switch (cfg_.pipeline) {
      case PipelineMode::kOneStageParallel:
        hist = run(cfg_.steps, [&] { return step_parallel(); }, true);
        break;
      case PipelineMode::kOneStageTandem:
        hist = run(cfg_.steps, [&] { return step_one_stage(); }, true);
        break;
      case PipelineMode::kTwoStageTandem: {
        hist = run(cfg_.steps, [&] { return step_nerf_only(); }, true);
        m_.collect({"encoder", "field", "fc"}).set_trainable(false);
        nerf_cache_.clear();
        run(cfg_.tandem_b_steps, [&] { return step_refiner(); }, false);
        m_.collect({"encoder", "field", "fc"}).set_trainable(true);
        break;
      }
    }
    summarize(hist, s);
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return s;
  }

  TrainSummary finetune_corf(const Callback& cb = {}) {
    TrainSummary s;
    const auto t0 = std::chrono::steady_clock::now();
    freeze_for_finetune();
    std::vector<double> hist;
    for (int i = 0; i < cfg_.finetune_steps; ++i) {
      LossReport r = step_corf();
      hist.push_back(r.corf);
      s.log.push_back(r);
      ++s.steps_run;
      if (cb) cb(r);
      if (cfg_.log_every > 0 && r.step % cfg_.log_every == 0) spdlog::info("{}", r.to_json().dump());
    }
    summarize(hist, s);
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return s;
  }

  // Freezes everything but the confidence net and caches what the finetune
  // reuses: the reference encoding and depth, and the GAN image per view.
  void freeze_for_finetune() {
    if (frozen_) return;
    m_.set_all_trainable(false);
    m_.corf.params.set_trainable(true);
    renderer_ = std::make_unique<OppRenderer<T>>(m_, ds_.views[ds_.reference].image, ref_cam(), cfg_.samples(),
                                                 cfg_.pipeline);
    gan_cache_.clear();
    for (int v : train_) gan_cache_[v] = renderer_->render_gan(ds_.views[v].cam);
    frozen_ = true;
  }

 private:
  const geo::Camera& ref_cam() const { return ds_.views[ds_.reference].cam; }

  LossReport begin(const char* phase) {
    LossReport r;
    r.step = ++step_;
    r.phase = phase;
    return r;
  }

  int pick_view() { return train_[uniform_int(rng_, 0, static_cast<std::int64_t>(train_.size()) - 1)]; }

  render::RenderOptions train_options(render::Heads h, bool coarse) const {
    render::RenderOptions o = cfg_.samples();
    o.heads = h;
    o.coarse_rgb = coarse;
    return o;
  }

  Var<T> nerf_loss(const render::FieldFn<T>& fn, int v, LossReport& rep) {
    auto batch = render::sample_pixelwise(ds_.views[v].cam, cfg_.rays, rng_);
    auto out = render::render_rays(fn, batch.rays, train_options({true, false, false, false}, true),
                                   cfg_.jitter ? &rng_ : nullptr);
    const Var<T> gt = Var<T>::constant(gather_pixels(images_[v], batch));
    Var<T> fine = ad::mse(out.rgb, gt);
    rep.nerf = fine.value()[0];
    guard_loss("nerf", rep.nerf, rep.step);
    if (cfg_.n_fine == 0) return fine;
    Var<T> coarse = ad::mse(out.coarse_rgb, gt);
    rep.nerf_coarse = coarse.value()[0];
    return ad::add(fine, coarse);
  }

  // Grid rays -> hidden map -> upsampler, with the graph kept.
  Var<T> gan_image(const render::FieldFn<T>& fn, int v) {
    auto batch = render::sample_grid(ds_.views[v].cam, m_.cfg.grid_h, m_.cfg.grid_w);
    auto out = render::render_rays(fn, batch.rays, train_options({false, true, false, false}, false),
                                   cfg_.jitter ? &rng_ : nullptr);
    return m_.upsampler(ad::reshape(out.hidden, {1, batch.rows, batch.cols, out.hidden.dim(1)}));
  }

  Var<T> real_image(int v) const {
    const auto& im = images_[v];
    return Var<T>::constant(im.reshaped({1, im.dim(0), im.dim(1), 3}));
  }

  // L_G = L_MSE + lambda_PER L_PER + lambda_GAN L_adv.
  Var<T> generator_loss(const Var<T>& fake, int v, LossReport& rep) {
    const auto& w = cfg_.weights;
    const Var<T> real = real_image(v);
    Var<T> l = ad::mse(fake, real);
    rep.g_mse = l.value()[0];
    guard_loss("g_mse", rep.g_mse, rep.step);
    if (w.lambda_per > 0) {
      Var<T> p = per_(fake, real);
      rep.g_per = p.value()[0];
      guard_loss("g_per", rep.g_per, rep.step);
      l = ad::add(l, ad::scale(p, static_cast<T>(w.lambda_per)));
    }
    if (w.lambda_gan > 0) {
      auto gl = gan_losses(m_.disc, fake, real.value(), 0.0, true, false);
      rep.g_adv = gl.g_adv.value()[0];
      guard_loss("g_adv", rep.g_adv, rep.step);
      l = ad::add(l, ad::scale(gl.g_adv, static_cast<T>(w.lambda_gan)));
    }
    return l;
  }

  // The critic only matters when the adversarial term is on.
  void critic_step(const Var<T>& fake, int v, LossReport& rep) {
    if (cfg_.weights.lambda_gan <= 0) return;
    auto gl = gan_losses(m_.disc, fake.detach(), real_image(v).value(), cfg_.weights.r1_gamma, false, true);
    rep.d_loss = gl.d_loss.value()[0];
    rep.r1 = gl.r1.value()[0];
    guard_loss("d_loss", rep.d_loss, rep.step);
    guard_loss("r1", rep.r1, rep.step);
    update(disc_opt_, gl.d_loss, m_.disc.params);
  }

  // Backward into exactly `group`, then check no other group picked up a
  // gradient before stepping.
  void update(ad::Adam<T>& opt, const Var<T>& loss, const ParamSet<T>& group) {
    for (auto& [n, ps] : m_.groups()) ps->zero_grad();
    ad::backward(loss, group.vars());
    for (auto& [n, ps] : m_.groups())
      for (const auto& e : ps->entries()) {
        if (!e.var.has_grad()) continue;
        bool mine = false;
        for (const auto& g : group.entries()) mine = mine || g.var.node() == e.var.node();
        if (!mine) throw ContractError("gradient leaked into parameter " + e.name + " outside the updated group");
      }
    opt.step();
  }

  void build_nerf_cache() {
    OppRenderer<T> r(m_, ds_.views[ds_.reference].image, ref_cam(), cfg_.samples(), cfg_.pipeline);
    for (int v : train_) nerf_cache_[v] = r.render_nerf(ds_.views[v].cam, false).rgb;
  }

  void set_lr(int i, int n, double base) {
    const double frac = n > 1 ? static_cast<double>(i) / (n - 1) : 0.0;
    const double lr = base * std::pow(cfg_.lr_final_scale, frac);
    gen_opt_.set_learning_rate(lr);
    disc_opt_.set_learning_rate(lr);
    refiner_opt_.set_learning_rate(lr);
  }

  // Stops when the mean loss of the latest window improved on the window
  // before it by less than the relative threshold.
  bool stop_now(const std::vector<double>& h) const {
    const auto w = static_cast<std::size_t>(cfg_.early_stop_window);
    if (w == 0 || h.size() < 2 * w || h.size() % w) return false;
    double prev = 0, cur = 0;
    for (std::size_t i = h.size() - 2 * w; i < h.size() - w; ++i) prev += h[i];
    for (std::size_t i = h.size() - w; i < h.size(); ++i) cur += h[i];
    return prev > 0 && (prev - cur) / prev < cfg_.early_stop_rel;
  }

  static void summarize(const std::vector<double>& h, TrainSummary& s) {
    if (h.empty()) return;
    const std::size_t w = std::min<std::size_t>(50, h.size());
    double a = 0, b = 0;
    for (std::size_t i = 0; i < w; ++i) a += h[i];
    for (std::size_t i = h.size() - w; i < h.size(); ++i) b += h[i];
    s.first_window_loss = a / w;
    s.final_window_loss = b / w;
  }

  OppModel<T>& m_;
  const data::SceneDataset& ds_;
  TrainConfig cfg_;
  Rng rng_;
  ad::Adam<T> gen_opt_, disc_opt_, refiner_opt_, corf_opt_;
  PerceptualLoss<T> per_;
  std::vector<int> train_;
  Tensor<T> ref_image_;
  std::vector<Tensor<T>> images_;
  std::map<int, Tensor<T>> nerf_cache_, gan_cache_;
  std::unique_ptr<OppRenderer<T>> renderer_;
  bool frozen_ = false;
  std::int64_t step_ = 0;
};

}  // namespace nvs::opp

#pragma once

#include <memory>

#include "nvs/enhance/diffusion.hpp"
#include "nvs/substrate/archive.hpp"
#include "nvs/substrate/nn.hpp"
#include "nvs/substrate/optim.hpp"

namespace nvs::diff {

using ad::ParamSet;

struct ToyUNetConfig {
  int base_channels = 16;
  int time_dim = 16;
  std::uint64_t seed = 0;
};

// Small conv U-Net predicting noise. Two downsampling levels (1/2 and 1/4)
// each end in a residual self-attention block; the full-resolution level has
// none, since N^2 attention there dominates the cost at desk scale.
template <class T>
class ToyUNet {
 public:
  ParamSet<T> params;

  explicit ToyUNet(const ToyUNetConfig& cfg = {}) : cfg_(cfg) {
    Rng rng(SeedTree(cfg.seed).seed_for("toy_unet"));
    const int c = cfg.base_channels;
    in0_ = ad::Conv2d<T>(params, "unet.in0", 3, c, 3, rng);
    down1_ = ad::Conv2d<T>(params, "unet.down1", c, 2 * c, 3, rng, 2);
    down2_ = ad::Conv2d<T>(params, "unet.down2", 2 * c, 2 * c, 3, rng, 2);
    temb1_ = ad::Linear<T>(params, "unet.temb1", cfg.time_dim, 2 * c, rng, 1.0);
    temb2_ = ad::Linear<T>(params, "unet.temb2", cfg.time_dim, 2 * c, rng, 1.0);
    for (int b = 0; b < 2; ++b) {
      const std::string p = "unet.attn" + std::to_string(b);
      attn_[b].q = ad::Linear<T>(params, p + ".q", 2 * c, 2 * c, rng, 1.0);
      attn_[b].k = ad::Linear<T>(params, p + ".k", 2 * c, 2 * c, rng, 1.0);
      attn_[b].v = ad::Linear<T>(params, p + ".v", 2 * c, 2 * c, rng, 1.0);
      attn_[b].o = ad::Linear<T>(params, p + ".o", 2 * c, 2 * c, rng, 0.5);
    }
    up1_ = ad::Conv2d<T>(params, "unet.up1", 4 * c, 2 * c, 3, rng);
    up0_ = ad::Conv2d<T>(params, "unet.up0", 3 * c, c, 3, rng);
    out_ = ad::Conv2d<T>(params, "unet.out", c, 3, 3, rng, 1, 0.5);
  }

  const ToyUNetConfig& config() const { return cfg_; }
  static constexpr int kBlocks = 2;

  // x [F,H,W,3] (H, W divisible by 4) at timestep t.
  Var<T> operator()(const Var<T>& x, int t, BlockCall where = {}, const AttentionHooks* hooks = nullptr) const {
    NVS_CHECK(x.rank() == 4 && x.dim(1) % 4 == 0 && x.dim(2) % 4 == 0, "toy U-Net expects [F,H,W,3], H,W % 4 == 0");
    const auto F = x.dim(0);
    const Var<T> te = time_embedding(t, F);
    Var<T> h0 = ad::leaky_relu(in0_(x));
    Var<T> h1 = ad::leaky_relu(ad::add_channel_bias(down1_(h0), temb1_(te)));
    where.block = 0;
    h1 = attention_block(attn_[0], h1, where, hooks);
    Var<T> h2 = ad::leaky_relu(ad::add_channel_bias(down2_(h1), temb2_(te)));
    where.block = 1;
    h2 = attention_block(attn_[1], h2, where, hooks);
    Var<T> u1 = ad::leaky_relu(up1_(ad::concat_last(std::vector<Var<T>>{ad::upsample2x(h2), h1})));
    Var<T> u0 = ad::leaky_relu(up0_(ad::concat_last(std::vector<Var<T>>{ad::upsample2x(u1), h0})));
    Var<T> out = out_(u0);
    if (!out.value().all_finite()) throw DivergenceError("non-finite toy U-Net output");
    return out;
  }

 private:
  struct Attn {
    ad::Linear<T> q, k, v, o;
  };

  Var<T> time_embedding(int t, std::int64_t frames) const {
    const int d = cfg_.time_dim;
    Tensor<T> e({frames, d});
    for (int i = 0; i < d / 2; ++i) {
      const double f = std::exp(-std::log(1000.0) * i / (d / 2));
      for (std::int64_t n = 0; n < frames; ++n) {
        e[n * d + i] = static_cast<T>(std::sin(t * f));
        e[n * d + d / 2 + i] = static_cast<T>(std::cos(t * f));
      }
    }
    return Var<T>::constant(std::move(e));
  }

  Var<T> attention_block(const Attn& a, const Var<T>& x, const BlockCall& where, const AttentionHooks* hooks) const {
    const auto F = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const Var<T> tok = ad::reshape(x, {F, H * W, C});
    const Var<T> q = a.q(tok), k = a.k(tok), v = a.v(tok);
    Var<T> phi;
    if (hooks) {
      if (hooks->on_features) hooks->on_features(where, as_double(tok.value()));
      if (hooks->attend) {
        Tensor<double> r = hooks->attend(where, as_double(q.value()), as_double(k.value()), as_double(v.value()),
                                         as_double(tok.value()));
        if (r.numel()) {
          if (r.shape() != q.shape()) throw ContractError("attention hook returned tokens of the wrong shape");
          phi = Var<T>::constant(from_double(r));
        }
      }
    }
    if (!phi.defined()) phi = ad::attention(q, k, v);
    if (hooks && hooks->on_output) hooks->on_output(where, as_double(phi.value()));
    return ad::add(x, ad::reshape(a.o(phi), {F, H, W, C}));
  }

  static Tensor<double> as_double(const Tensor<T>& t) {
    if constexpr (std::is_same_v<T, double>) return t;
    else return Tensor<double>(t.shape(), std::vector<double>(t.storage().begin(), t.storage().end()));
  }
  static Tensor<T> from_double(const Tensor<double>& t) {
    if constexpr (std::is_same_v<T, double>) return t;
    else return Tensor<T>(t.shape(), std::vector<T>(t.storage().begin(), t.storage().end()));
  }

  ToyUNetConfig cfg_;
  ad::Conv2d<T> in0_, down1_, down2_, up1_, up0_, out_;
  ad::Linear<T> temb1_, temb2_;
  Attn attn_[2];
};

class ToyDenoiser final : public DenoiserBackend {
 public:
  explicit ToyDenoiser(const ToyUNetConfig& cfg = {}, NoiseSchedule s = NoiseSchedule::linear())
      : net_(std::make_shared<ToyUNet<double>>(cfg)), sched_(std::move(s)) {}

  std::string name() const override { return "toy_unet"; }
  const NoiseSchedule& schedule() const override { return sched_; }
  int num_blocks() const override { return ToyUNet<double>::kBlocks; }
  Tensor<double> eps(const Tensor<double>& x, BlockCall where, const AttentionHooks* hooks) const override {
    ad::NoGradGuard ng;
    return (*net_)(Var<double>::constant(x), where.timestep, where, hooks).value();
  }

  ToyUNet<double>& net() { return *net_; }
  const ToyUNet<double>& net() const { return *net_; }

  void save(const std::string& path, const nlohmann::json& extra = {}) const {
    ad::ArchiveWriter w;
    for (const auto& e : net_->params.entries()) w.add(e.name, e.var.value());
    w.set_meta("backend", name());
    w.set_meta("base_channels", net_->config().base_channels);
    w.set_meta("time_dim", net_->config().time_dim);
    w.set_meta("T", sched_.T());
    if (!extra.is_null()) w.set_meta("extra", extra);
    w.write(path);
  }

  static ToyDenoiser load(const std::string& path) {
    ad::ArchiveReader r(path);
    if (r.meta().value("backend", std::string()) != "toy_unet")
      throw CheckpointError("archive " + path + " does not hold a toy denoiser");
    ToyUNetConfig cfg;
    cfg.base_channels = r.meta().value("base_channels", 16);
    cfg.time_dim = r.meta().value("time_dim", 16);
    ToyDenoiser d(cfg, NoiseSchedule::linear(r.meta().value("T", 1000)));
    for (const auto& e : d.net_->params.entries()) {
      Tensor<double> t = r.get<double>(e.name);
      if (t.shape() != e.var.shape()) throw CheckpointError("shape mismatch for " + e.name);
      Var<double> v = e.var;
      v.mutable_value() = std::move(t);
    }
    return d;
  }

 private:
  std::shared_ptr<ToyUNet<double>> net_;
  NoiseSchedule sched_;
};

struct DenoiserTrainConfig {
  int steps = 300;
  int batch = 4;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

// Standard noise-prediction objective on latents [1,H,W,3] (all the same size).
// Returns the mean loss of the last 10% of steps.
inline double train_toy_denoiser(ToyDenoiser& d, const std::vector<Tensor<double>>& latents,
                                 const DenoiserTrainConfig& cfg) {
  if (latents.empty()) throw DataError("no images to train the denoiser on");
  auto& net = d.net();
  ad::Adam<double> opt(net.params.vars(), {cfg.lr});
  Rng rng(SeedTree(cfg.seed).seed_for("denoiser_train"));
  const auto& s = d.schedule();
  const auto H = latents[0].dim(1), W = latents[0].dim(2);
  double tail = 0;
  int tail_n = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    // One timestep per batch keeps the embedding a single row per call.
    const int t = static_cast<int>(uniform_int(rng, 1, s.T()));
    const double sa = std::sqrt(s.at(t)), sn = std::sqrt(1 - s.at(t));
    Tensor<double> xt({cfg.batch, H, W, 3}), noise({cfg.batch, H, W, 3});
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& x0 = latents[uniform_int(rng, 0, static_cast<std::int64_t>(latents.size()) - 1)];
      NVS_CHECK(x0.dim(1) == H && x0.dim(2) == W, "denoiser training latents differ in size");
      for (std::int64_t i = 0; i < H * W * 3; ++i) {
        const double n = normal<double>(rng);
        noise[b * H * W * 3 + i] = n;
        xt[b * H * W * 3 + i] = sa * x0[i] + sn * n;
      }
    }
    Var<double> pred = net(Var<double>::constant(xt), t);
    Var<double> loss = ad::mse(pred, Var<double>::constant(noise));
    const double lv = loss.value()[0];
    if (!std::isfinite(lv) || lv > 1e4)
      throw DivergenceError("denoiser loss diverged at step " + std::to_string(step));
    opt.zero_grad();
    ad::backward(loss, net.params.vars());
    opt.step();
    if (step >= cfg.steps - std::max(1, cfg.steps / 10)) {
      tail += lv;
      ++tail_n;
    }
  }
  return tail_n ? tail / tail_n : 0.0;
}

}  // namespace nvs::diff

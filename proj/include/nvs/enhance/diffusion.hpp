#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "nvs/substrate/attention.hpp"

// Image-space diffusion: the latent is the image mapped to [-1,1].

namespace nvs::diff {

using ad::Shape;
using ad::Tensor;
using ad::Var;

// Cumulative alphas for t = 0..T with alpha_bar[0] = 1.
struct NoiseSchedule {
  std::vector<double> alpha_bar;

  static NoiseSchedule linear(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02) {
    if (T < 1) throw ConfigError("noise schedule needs T >= 1");
    NoiseSchedule s;
    s.alpha_bar.push_back(1.0);
    double a = 1.0;
    for (int t = 1; t <= T; ++t) {
      const double beta = T == 1 ? beta_end : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
      a *= 1.0 - beta;
      s.alpha_bar.push_back(a);
    }
    return s;
  }

  int T() const { return static_cast<int>(alpha_bar.size()) - 1; }
  double at(int t) const { return alpha_bar.at(static_cast<std::size_t>(t)); }

  // 0 = tau_0 < tau_1 < ... < tau_S = T, evenly spaced.
  std::vector<int> timesteps(int steps) const {
    if (steps < 1) throw ConfigError("denoising needs at least one step");
    if (steps > T()) throw ConfigError("more denoising steps than schedule timesteps");
    std::vector<int> out{0};
    for (int k = 1; k <= steps; ++k) out.push_back(static_cast<int>(std::lround(static_cast<double>(k) * T() / steps)));
    return out;
  }
};

// Where an attention block sits in the pass that is running.
struct BlockCall {
  int step = 0;      // index k of tau_k in the inference timesteps
  int timestep = 0;  // tau_k
  int block = 0;
};

// Optional taps into a backend's self-attention blocks. Tokens are batched
// over the frames of one eps call: q, k, v [F, N, d]; features [F, N, C]
// are the block inputs.
struct AttentionHooks {
  // Returns replacement outputs [F, N, d], or an empty tensor to keep the
  // backend's own per-frame self-attention.
  std::function<Tensor<double>(const BlockCall&, const Tensor<double>& q, const Tensor<double>& k,
                               const Tensor<double>& v, const Tensor<double>& features)>
      attend;
  // Sees the tokens the block actually used, [F, N, d].
  std::function<void(const BlockCall&, const Tensor<double>& tokens)> on_output;
  // Sees the block inputs, [F, N, C].
  std::function<void(const BlockCall&, const Tensor<double>& features)> on_features;
};

// Noise predictor plus its schedule. Pretrained latent-diffusion weights
// would plug in here behind the same three calls.
class DenoiserBackend {
 public:
  virtual ~DenoiserBackend() = default;
  virtual std::string name() const = 0;
  virtual const NoiseSchedule& schedule() const = 0;
  virtual int num_blocks() const = 0;
  // x [F, H, W, 3] at timestep t; returns eps of the same shape.
  virtual Tensor<double> eps(const Tensor<double>& x, BlockCall where, const AttentionHooks* hooks) const = 0;
  // Conditional backends override both; guidance then mixes them.
  virtual bool supports_guidance() const { return false; }
  virtual Tensor<double> eps_unconditional(const Tensor<double>& x, BlockCall where,
                                           const AttentionHooks* hooks) const {
    return eps(x, where, hooks);
  }
};

// eps = 0 and a single pass-through attention block whose tokens are the
// pixels themselves; hooks observe but cannot change anything.
class IdentityBackend final : public DenoiserBackend {
 public:
  explicit IdentityBackend(NoiseSchedule s = NoiseSchedule::linear()) : sched_(std::move(s)) {}
  std::string name() const override { return "identity"; }
  const NoiseSchedule& schedule() const override { return sched_; }
  int num_blocks() const override { return 1; }
  Tensor<double> eps(const Tensor<double>& x, BlockCall where, const AttentionHooks* hooks) const override {
    if (hooks) {
      where.block = 0;
      const Tensor<double> tok = x.reshaped({x.dim(0), x.dim(1) * x.dim(2), x.dim(3)});
      if (hooks->on_features) hooks->on_features(where, tok);
      if (hooks->on_output) hooks->on_output(where, tok);
    }
    return Tensor<double>(x.shape());
  }

 private:
  NoiseSchedule sched_;
};

// Guided noise prediction; backends without a conditional pair run unguided.
inline Tensor<double> predict_eps(const DenoiserBackend& b, const Tensor<double>& x, BlockCall where,
                                  const AttentionHooks* hooks, double guidance) {
  if (!b.supports_guidance() || guidance == 1.0) return b.eps(x, where, hooks);
  Tensor<double> c = b.eps(x, where, hooks), u = b.eps_unconditional(x, where, hooks);
  for (std::int64_t i = 0; i < c.numel(); ++i) c[i] = u[i] + guidance * (c[i] - u[i]);
  return c;
}

// x at tau_c from x at tau_n (> tau_c) given the noise estimate.
inline Tensor<double> ddim_step(const Tensor<double>& x, const Tensor<double>& eps, double ab_from, double ab_to) {
  Tensor<double> out(x.shape());
  const double sf = std::sqrt(ab_from), nf = std::sqrt(1 - ab_from);
  const double st = std::sqrt(ab_to), nt = std::sqrt(1 - ab_to);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double x0 = (x[i] - nf * eps[i]) / sf;
    out[i] = st * x0 + nt * eps[i];
  }
  return out;
}

struct Trajectory {
  std::vector<int> timesteps;          // tau_0 .. tau_S
  std::vector<Tensor<double>> latents; // x at tau_0 .. tau_S
  int max_fixed_point_iters = 0;       // worst step
  double max_fixed_point_residual = 0;
};

struct InvertOptions {
  int fixed_point_iters = 30;
  double fixed_point_tol = 1e-12;  // L-inf change between iterates
  double guidance = 1.0;
};

inline void require_finite_latent(const Tensor<double>& x, const char* stage, int step) {
  if (!x.all_finite())
    throw DivergenceError(std::string("non-finite latent in ") + stage + " at step " + std::to_string(step));
}

// Deterministic inversion. Each step solves for the x_n that the sampler
// maps back onto x_c (fixed-point iteration on x_n = a x_c + b eps(x_n)),
// starting from the usual eps(x_c) estimate. Hooks observe one final call at
// the converged latent, which is the exact call the sampler will make.
inline Trajectory ddim_invert(const Tensor<double>& x0, const DenoiserBackend& b, int steps,
                              const AttentionHooks* hooks = nullptr, InvertOptions opt = {}) {
  const auto& s = b.schedule();
  Trajectory tr;
  tr.timesteps = s.timesteps(steps);
  tr.latents.push_back(x0);
  for (int k = 1; k <= steps; ++k) {
    const int tc = tr.timesteps[k - 1], tn = tr.timesteps[k];
    const double ac = s.at(tc), an = s.at(tn);
    const Tensor<double>& xc = tr.latents.back();
    const double a = std::sqrt(an / ac), bb = std::sqrt(1 - an) - std::sqrt(an / ac) * std::sqrt(1 - ac);
    auto update = [&](const Tensor<double>& e) {
      Tensor<double> y(xc.shape());
      for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = a * xc[i] + bb * e[i];
      return y;
    };
    Tensor<double> y = update(predict_eps(b, xc, {k - 1, tc, 0}, nullptr, opt.guidance));
    int it = 0;
    double change = 0;
    for (; it < opt.fixed_point_iters; ++it) {
      Tensor<double> y2 = update(predict_eps(b, y, {k, tn, 0}, nullptr, opt.guidance));
      change = 0;
      for (std::int64_t i = 0; i < y.numel(); ++i) change = std::max(change, std::abs(y2[i] - y[i]));
      y = std::move(y2);
      if (change <= opt.fixed_point_tol) break;
    }
    tr.max_fixed_point_iters = std::max(tr.max_fixed_point_iters, it + 1);
    tr.max_fixed_point_residual = std::max(tr.max_fixed_point_residual, change);
    require_finite_latent(y, "ddim inversion", k);
    if (hooks) predict_eps(b, y, {k, tn, 0}, hooks, opt.guidance);
    tr.latents.push_back(std::move(y));
  }
  return tr;
}

// Runs the sampler from x at tau_S down to tau_0.
inline Tensor<double> ddim_sample(const Tensor<double>& xT, const DenoiserBackend& b, int steps,
                                  const AttentionHooks* hooks = nullptr, double guidance = 1.0) {
  const auto& s = b.schedule();
  const auto ts = s.timesteps(steps);
  Tensor<double> x = xT;
  for (int k = steps; k >= 1; --k) {
    const Tensor<double> e = predict_eps(b, x, {k, ts[k], 0}, hooks, guidance);
    x = ddim_step(x, e, s.at(ts[k]), s.at(ts[k - 1]));
    require_finite_latent(x, "ddim sampling", k);
  }
  return x;
}

// Image [H,W,3] in [0,1] <-> latent [1,H,W,3] in [-1,1].
inline Tensor<double> encode_image(const Tensor<float>& img) {
  Tensor<double> x({1, img.dim(0), img.dim(1), 3});
  for (std::int64_t i = 0; i < img.numel(); ++i) x[i] = 2.0 * img[i] - 1.0;
  return x;
}

inline Tensor<float> decode_latent(const Tensor<double>& x) {
  Tensor<float> img({x.dim(1), x.dim(2), 3});
  for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>((x[i] + 1.0) * 0.5);
  return img;
}

}  // namespace nvs::diff

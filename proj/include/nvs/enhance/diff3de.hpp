#pragma once

#include <map>
#include <optional>

#include "nvs/enhance/diffusion.hpp"
#include "nvs/geometry/dome.hpp"
#include "nvs/substrate/archive.hpp"
#include "nvs/substrate/conv.hpp"

namespace nvs::diff {

struct EnhanceConfig {
  int keyframes = 40;
  int steps = 25;
  double guidance = 7.5;  // ignored by unconditional backends
  int working_res = 32;   // square side the denoiser runs at
  int fixed_point_iters = 30;

  void validate() const {
    if (keyframes < 3) throw ConfigError("enhance.keyframes must be >= 3");
    if (steps < 1) throw ConfigError("enhance.steps must be >= 1");
    if (working_res < 4 || working_res % 4 != 0) throw ConfigError("enhance.working_res must be a positive multiple of 4");
    if (!(guidance >= 1.0)) throw ConfigError("enhance.guidance must be >= 1");
    if (fixed_point_iters < 0) throw ConfigError("enhance.fixed_point_iters must be >= 0");
  }

  nlohmann::json to_json() const {
    return {{"keyframes", keyframes}, {"steps", steps}, {"guidance", guidance}, {"working_res", working_res},
            {"fixed_point_iters", fixed_point_iters}};
  }
};

// One query set attending over the concatenated keys/values of several
// frames: q [N, d], k[j] [M_j, d], v[j] [M_j, dv].
inline Tensor<double> attend_over_frames(const Tensor<double>& q, const std::vector<Tensor<double>>& k,
                                         const std::vector<Tensor<double>>& v) {
  if (k.empty() || k.size() != v.size()) throw ContractError("inflated attention needs matching key/value frames");
  if (q.rank() != 2) throw ContractError("inflated attention expects [N, d] queries");
  const auto d = q.dim(1), dv = v[0].dim(1);
  std::int64_t m = 0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    if (k[i].rank() != 2 || v[i].rank() != 2 || k[i].dim(1) != d || v[i].dim(1) != dv || k[i].dim(0) != v[i].dim(0))
      throw ContractError("inflated attention token dimension mismatch in frame " + std::to_string(i));
    m += k[i].dim(0);
  }
  Tensor<double> kc({m, d}), vc({m, dv});
  std::int64_t row = 0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    std::copy(k[i].data(), k[i].data() + k[i].numel(), kc.data() + row * d);
    std::copy(v[i].data(), v[i].data() + v[i].numel(), vc.data() + row * dv);
    row += k[i].dim(0);
  }
  return ad::kernel::attention(q, kc, vc);
}

// Each frame attends over the keys/values of all frames.
inline std::vector<Tensor<double>> inflated_self_attention(const std::vector<Tensor<double>>& q,
                                                           const std::vector<Tensor<double>>& k,
                                                           const std::vector<Tensor<double>>& v) {
  if (q.empty() || q.size() != k.size()) throw ContractError("inflated attention needs one q/k/v triple per frame");
  std::vector<Tensor<double>> out;
  for (const auto& qi : q) out.push_back(attend_over_frames(qi, k, v));
  return out;
}

// Frame f of a [F, N, d] stack as [N, d].
inline Tensor<double> frame_of(const Tensor<double>& t, std::int64_t f) {
  const auto n = t.dim(1), d = t.dim(2);
  return Tensor<double>({n, d}, std::vector<double>(t.data() + f * n * d, t.data() + (f + 1) * n * d));
}

inline Tensor<double> stack_frames(const std::vector<Tensor<double>>& xs) {
  const auto n = xs[0].dim(0), d = xs[0].dim(1);
  Tensor<double> out({static_cast<std::int64_t>(xs.size()), n, d});
  for (std::size_t i = 0; i < xs.size(); ++i) std::copy(xs[i].data(), xs[i].data() + n * d, out.data() + i * n * d);
  return out;
}

using StepBlock = std::pair<int, int>;  // (step k, block)

struct Keyframe {
  int index = 0;
  geo::Vec3 location = geo::Vec3::Zero();
  Tensor<float> frame;     // input at working resolution [H,W,3]
  Tensor<float> enhanced;  // jointly denoised output [H,W,3]
  Tensor<double> x_T;      // inverted latent at the last timestep
  std::map<StepBlock, Tensor<double>> tokens;    // phi [N, d]
  std::map<StepBlock, Tensor<double>> features;  // inversion block inputs [N, C]
  std::array<int, 3> neighbors{};
};

struct KeyframeSet {
  EnhanceConfig cfg;
  std::string backend;
  int blocks = 0;
  geo::DomeLayout layout;
  std::vector<Keyframe> frames;

  std::size_t cache_entries() const {
    std::size_t n = 0;
    for (const auto& k : frames) n += k.tokens.size();
    return n;
  }
};

inline Tensor<float> resize_image(const Tensor<float>& img, int side) {
  if (img.dim(0) == side && img.dim(1) == side) return img;
  return ad::kernel::resize_bilinear(img, side, side);
}

// Inverts one frame, recording block inputs at every (step, block).
inline Trajectory invert_with_features(const Tensor<double>& x0, const DenoiserBackend& b, const EnhanceConfig& cfg,
                                       std::map<StepBlock, Tensor<double>>& features) {
  AttentionHooks hooks;
  hooks.on_features = [&](const BlockCall& c, const Tensor<double>& f) {
    features[{c.step, c.block}] = frame_of(f, 0);
  };
  InvertOptions io;
  io.fixed_point_iters = cfg.fixed_point_iters;
  io.guidance = cfg.guidance;
  return ddim_invert(x0, b, cfg.steps, &hooks, io);
}

// Inverts every keyframe alone, then denoises all of them together. At each
// step and block, keyframe i attends over the keys/values of its three
// nearest dome neighbours (itself included); its outputs are cached.
inline KeyframeSet build_keyframes(const std::vector<Tensor<float>>& frames, const geo::DomeLayout& layout,
                                   const DenoiserBackend& b, const EnhanceConfig& cfg) {
  cfg.validate();
  if (static_cast<int>(frames.size()) != layout.size())
    throw DataError("keyframe build got " + std::to_string(frames.size()) + " frames for " +
                    std::to_string(layout.size()) + " dome poses");
  if (layout.size() < 3) throw ConfigError("keyframe build needs at least 3 dome poses");
  KeyframeSet set;
  set.cfg = cfg;
  set.backend = b.name();
  set.blocks = b.num_blocks();
  set.layout = layout;
  const int nk = layout.size(), R = cfg.working_res;
  const std::int64_t px = static_cast<std::int64_t>(R) * R * 3;

  Tensor<double> x({nk, R, R, 3});
  for (int i = 0; i < nk; ++i) {
    Keyframe kf;
    kf.index = i;
    kf.location = layout.locations[static_cast<std::size_t>(i)];
    kf.frame = resize_image(frames[static_cast<std::size_t>(i)], R);
    if (kf.frame.dim(2) != 3) throw DataError("keyframe " + std::to_string(i) + " is not an RGB image");
    kf.neighbors = geo::select_neighbors(kf.location, layout);
    if (std::find(kf.neighbors.begin(), kf.neighbors.end(), i) == kf.neighbors.end()) kf.neighbors[2] = i;
    Trajectory tr = invert_with_features(encode_image(kf.frame), b, cfg, kf.features);
    kf.x_T = tr.latents.back();
    std::copy(kf.x_T.data(), kf.x_T.data() + px, x.data() + i * px);
    set.frames.push_back(std::move(kf));
  }

  AttentionHooks hooks;
  hooks.attend = [&](const BlockCall&, const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& v,
                     const Tensor<double>&) {
    std::vector<Tensor<double>> out;
    for (int i = 0; i < nk; ++i) {
      std::vector<Tensor<double>> ks, vs;
      for (int j : set.frames[static_cast<std::size_t>(i)].neighbors) {
        ks.push_back(frame_of(k, j));
        vs.push_back(frame_of(v, j));
      }
      out.push_back(attend_over_frames(frame_of(q, i), ks, vs));
    }
    return stack_frames(out);
  };
  hooks.on_output = [&](const BlockCall& c, const Tensor<double>& tok) {
    for (int i = 0; i < nk; ++i) set.frames[static_cast<std::size_t>(i)].tokens[{c.step, c.block}] = frame_of(tok, i);
  };
  const auto& s = b.schedule();
  const auto ts = s.timesteps(cfg.steps);
  for (int k = cfg.steps; k >= 1; --k) {
    const Tensor<double> e = predict_eps(b, x, {k, ts[k], 0}, &hooks, cfg.guidance);
    x = ddim_step(x, e, s.at(ts[k]), s.at(ts[k - 1]));
    require_finite_latent(x, "keyframe denoising", k);
  }
  for (int i = 0; i < nk; ++i) {
    Tensor<double> xi({1, R, R, 3}, std::vector<double>(x.data() + i * px, x.data() + (i + 1) * px));
    set.frames[static_cast<std::size_t>(i)].enhanced = decode_latent(xi);
  }
  spdlog::info("built {} keyframes, {} cached token entries", nk, set.cache_entries());
  return set;
}

struct Correspondence {
  std::vector<std::int64_t> index;  // keyframe token position per target position
};

// Nearest keyframe token by cosine similarity of features. A position keeps
// its own index unless some other position is strictly more similar; other
// ties go to the lower index.
inline Correspondence match_features(const Tensor<double>& target, const Tensor<double>& key) {
  if (key.numel() == 0) throw ContractError("token propagation against an empty keyframe cache");
  NVS_CHECK(target.rank() == 2 && key.rank() == 2 && target.dim(1) == key.dim(1), "feature shape mismatch");
  const auto n = target.dim(0), m = key.dim(0), c = key.dim(1);
  auto normed = [c](const Tensor<double>& t) {
    Tensor<double> out = t;
    for (std::int64_t r = 0; r < t.dim(0); ++r) {
      double s = 0;
      for (std::int64_t j = 0; j < c; ++j) s += t[r * c + j] * t[r * c + j];
      s = std::sqrt(s);
      for (std::int64_t j = 0; j < c; ++j) out[r * c + j] = s > 0 ? t[r * c + j] / s : 0.0;
    }
    return out;
  };
  const Tensor<double> tn = normed(target), kn = normed(key);
  const Tensor<double> cs = ad::kernel::matmul(tn, kn, false, true);
  constexpr double kTie = 1e-12;
  Correspondence corr;
  corr.index.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = cs.data() + i * m;
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < m; ++j)
      if (row[j] > row[best] + kTie) best = j;
    if (i < m && row[i] >= row[best] - kTie) best = i;
    corr.index[static_cast<std::size_t>(i)] = best;
  }
  return corr;
}

inline Tensor<double> gather_tokens(const Tensor<double>& tokens, const Correspondence& corr) {
  const auto d = tokens.dim(1);
  Tensor<double> out({static_cast<std::int64_t>(corr.index.size()), d});
  for (std::size_t i = 0; i < corr.index.size(); ++i)
    std::copy(tokens.data() + corr.index[i] * d, tokens.data() + (corr.index[i] + 1) * d,
              out.data() + static_cast<std::int64_t>(i) * d);
  return out;
}

// phi^{d->g}: keyframe tokens carried to the target through feature matches.
inline Tensor<double> propagate_tokens(const Tensor<double>& target_features, const Keyframe& kf, int step, int block) {
  auto f = kf.features.find({step, block});
  auto t = kf.tokens.find({step, block});
  if (f == kf.features.end() || t == kf.tokens.end())
    throw ContractError("keyframe " + std::to_string(kf.index) + " has no cache entry for step " +
                        std::to_string(step) + " block " + std::to_string(block));
  return gather_tokens(t->second, match_features(target_features, f->second));
}

// Convex combination of per-keyframe tokens.
inline Tensor<double> blend_tokens(const std::vector<Tensor<double>>& toks, const std::array<double, 3>& w) {
  NVS_CHECK(toks.size() == 3, "blend expects three token sets");
  Tensor<double> out(toks[0].shape());
  for (int j = 0; j < 3; ++j) {
    if (toks[static_cast<std::size_t>(j)].shape() != out.shape())
      throw ContractError("propagated token shapes disagree across neighbours");
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += w[static_cast<std::size_t>(j)] * toks[static_cast<std::size_t>(j)][i];
  }
  return out;
}

struct EnhanceResult {
  Tensor<float> image;            // at the input frame's size
  Tensor<float> working;          // enhanced frame at working resolution
  std::array<int, 3> neighbors{};
  std::array<double, 3> weights{};
};

// Enhances one target frame against the cache. The denoiser runs at the
// working resolution; a frame of another size gets the low-resolution change
// added back onto it.
inline EnhanceResult enhance_view(const Tensor<float>& frame, const geo::Camera& cam, const KeyframeSet& set,
                                  const DenoiserBackend& b) {
  const auto& cfg = set.cfg;
  if (set.frames.size() < 3) throw ContractError("enhancement needs a built keyframe cache");
  if (b.name() != set.backend)
    throw ContractError("keyframe cache was built with backend '" + set.backend + "', not '" + b.name() + "'");
  const int R = cfg.working_res;
  EnhanceResult res;
  const geo::Vec3 g = cam.center();
  res.neighbors = geo::select_neighbors(g, set.layout);
  const auto& c = res.neighbors;
  res.weights = geo::barycentric_weights(g - set.layout.center, set.layout.relative(c[0]), set.layout.relative(c[1]),
                                         set.layout.relative(c[2]))
                    .w;

  const Tensor<float> small = resize_image(frame, R);
  std::map<StepBlock, Tensor<double>> feats;
  Trajectory tr = invert_with_features(encode_image(small), b, cfg, feats);

  AttentionHooks hooks;
  hooks.attend = [&](const BlockCall& call, const Tensor<double>& q, const Tensor<double>&, const Tensor<double>&,
                     const Tensor<double>&) {
    const auto it = feats.find({call.step, call.block});
    if (it == feats.end()) throw ContractError("target inversion has no features for this block");
    std::vector<Tensor<double>> toks;
    for (int j = 0; j < 3; ++j) {
      const Keyframe& kf = set.frames.at(static_cast<std::size_t>(c[static_cast<std::size_t>(j)]));
      if (res.weights[static_cast<std::size_t>(j)] == 0) {
        toks.emplace_back(Shape{q.dim(1), q.dim(2)});
        continue;
      }
      toks.push_back(propagate_tokens(it->second, kf, call.step, call.block));
    }
    Tensor<double> phi = blend_tokens(toks, res.weights);
    if (phi.dim(0) != q.dim(1) || phi.dim(1) != q.dim(2))
      throw ContractError("propagated tokens do not match the target block shape");
    return phi.reshaped({1, phi.dim(0), phi.dim(1)});
  };
  res.working = decode_latent(ddim_sample(tr.latents.back(), b, cfg.steps, &hooks, cfg.guidance));

  if (frame.dim(0) == R && frame.dim(1) == R) {
    res.image = res.working;
  } else {
    Tensor<float> delta(small.shape());
    for (std::int64_t i = 0; i < delta.numel(); ++i) delta[i] = res.working[i] - small[i];
    const Tensor<float> up = ad::kernel::resize_bilinear(delta, frame.dim(0), frame.dim(1));
    res.image = frame;
    for (std::int64_t i = 0; i < up.numel(); ++i) res.image[i] += up[i];
  }
  for (auto& v : res.image.storage()) v = std::clamp(v, 0.0f, 1.0f);
  return res;
}

// Archive layout: kf<i>/{frame,enhanced,x_T}, kf<i>/tok/<k>/<b>, kf<i>/feat/<k>/<b>.
inline void save_keyframe_cache(const KeyframeSet& set, const std::string& path) {
  ad::ArchiveWriter w;
  nlohmann::json locs = nlohmann::json::array(), nbrs = nlohmann::json::array();
  for (const auto& kf : set.frames) {
    const std::string p = "kf" + std::to_string(kf.index) + "/";
    w.add(p + "frame", kf.frame);
    w.add(p + "enhanced", kf.enhanced);
    w.add(p + "x_T", kf.x_T);
    for (const auto& [key, t] : kf.tokens) w.add(p + "tok/" + std::to_string(key.first) + "/" + std::to_string(key.second), t);
    for (const auto& [key, t] : kf.features)
      w.add(p + "feat/" + std::to_string(key.first) + "/" + std::to_string(key.second), t);
    locs.push_back({kf.location.x(), kf.location.y(), kf.location.z()});
    nbrs.push_back(kf.neighbors);
  }
  w.set_meta("kind", "keyframe_cache");
  w.set_meta("config", set.cfg.to_json());
  w.set_meta("backend", set.backend);
  w.set_meta("blocks", set.blocks);
  w.set_meta("center", {set.layout.center.x(), set.layout.center.y(), set.layout.center.z()});
  w.set_meta("radius", set.layout.radius);
  w.set_meta("locations", locs);
  w.set_meta("neighbors", nbrs);
  w.write(path);
}

// `layout` supplies the cameras; locations must match the cached ones.
inline KeyframeSet load_keyframe_cache(const std::string& path, const geo::DomeLayout& layout) {
  ad::ArchiveReader r(path);
  const auto& m = r.meta();
  if (m.value("kind", std::string()) != "keyframe_cache") throw CheckpointError(path + " is not a keyframe cache");
  KeyframeSet set;
  try {
    const auto& c = m.at("config");
    set.cfg.keyframes = c.at("keyframes");
    set.cfg.steps = c.at("steps");
    set.cfg.guidance = c.at("guidance");
    set.cfg.working_res = c.at("working_res");
    set.cfg.fixed_point_iters = c.at("fixed_point_iters");
    set.backend = m.at("backend");
    set.blocks = m.at("blocks");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("keyframe cache metadata is incomplete: " + std::string(e.what()));
  }
  const auto& locs = m.at("locations");
  if (static_cast<int>(locs.size()) != layout.size())
    throw CheckpointError("keyframe cache holds " + std::to_string(locs.size()) + " keyframes, layout has " +
                          std::to_string(layout.size()));
  set.layout = layout;
  for (int i = 0; i < layout.size(); ++i) {
    Keyframe kf;
    kf.index = i;
    kf.location = layout.locations[static_cast<std::size_t>(i)];
    const geo::Vec3 saved(locs[i][0].get<double>(), locs[i][1].get<double>(), locs[i][2].get<double>());
    if ((saved - kf.location).norm() > 1e-9) throw CheckpointError("keyframe cache layout differs at keyframe " + std::to_string(i));
    kf.neighbors = m.at("neighbors")[i].get<std::array<int, 3>>();
    const std::string p = "kf" + std::to_string(i) + "/";
    kf.frame = r.get<float>(p + "frame");
    kf.enhanced = r.get<float>(p + "enhanced");
    kf.x_T = r.get<double>(p + "x_T");
    for (int k = 1; k <= set.cfg.steps; ++k)
      for (int bl = 0; bl < set.blocks; ++bl) {
        const std::string sfx = std::to_string(k) + "/" + std::to_string(bl);
        kf.tokens[{k, bl}] = r.get<double>(p + "tok/" + sfx);
        kf.features[{k, bl}] = r.get<double>(p + "feat/" + sfx);
      }
    set.frames.push_back(std::move(kf));
  }
  return set;
}

}  // namespace nvs::diff

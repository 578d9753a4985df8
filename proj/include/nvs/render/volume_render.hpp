#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "nvs/render/raysampling.hpp"
#include "nvs/substrate/ops.hpp"

namespace nvs::render {

using ad::Shape;
using ad::Tensor;
using ad::Var;

// Quadrature weights for densities sigma [R,S] and intervals delta [R,S].
// Returns [R,S+1]: w_i = T_i (1 - exp(-sigma_i delta_i)) followed by the
// residual transmittance T_final, so each row sums to one.
template <class T>
Var<T> compositing_weights(const Var<T>& sigma, const Tensor<T>& delta) {
  NVS_CHECK(sigma.rank() == 2 && sigma.shape() == delta.shape(), "compositing_weights expects [R,S] inputs");
  const auto R = sigma.dim(0), S = sigma.dim(1);
  Tensor<T> out({R, S + 1});
  Tensor<T> ex({R, S});  // exp(-sigma delta)
  const T* ps = sigma.value().data();
  for (std::int64_t r = 0; r < R; ++r) {
    T trans = 1;
    for (std::int64_t s = 0; s < S; ++s) {
      const T sg = ps[r * S + s];
      if (!(sg >= 0)) throw ContractError("compositing_weights: negative or non-finite density");
      const T e = std::exp(-sg * delta[r * S + s]);
      ex[r * S + s] = e;
      out[r * (S + 1) + s] = trans * (T(1) - e);
      trans *= e;
    }
    out[r * (S + 1) + S] = trans;
  }
  Tensor<T> w = out;
  return ad::make_result<T>(std::move(out), {sigma}, [delta, ex, w, R, S](const Var<T>& g) {
    Tensor<T> gs({R, S});
    const T* pg = g.value().data();
    std::vector<T> tk(static_cast<std::size_t>(S));
    for (std::int64_t r = 0; r < R; ++r) {
      const T* wr = w.data() + r * (S + 1);
      const T* gr = pg + r * (S + 1);
      T tr = 1;
      for (std::int64_t k = 0; k < S; ++k) {
        tk[k] = tr;
        tr *= ex[r * S + k];
      }
      // d sigma_k = delta_k (T_k e_k g_k - sum_{i>k} g_i w_i - g_S T_final)
      T tail = gr[S] * wr[S];
      for (std::int64_t k = S - 1; k >= 0; --k) {
        const T d = delta[r * S + k];
        gs[r * S + k] = d * (tk[k] * ex[r * S + k] * gr[k] - tail);
        tail += gr[k] * wr[k];
      }
    }
    return std::vector<Var<T>>{Var<T>::constant(std::move(gs))};
  }, true);
}

// out[r,c] = sum_s w[r,s] v[r,s,c]; w is [R,S], v is [R,S,C].
template <class T>
Var<T> weighted_sum(const Var<T>& w, const Var<T>& v) {
  NVS_CHECK(w.rank() == 2 && v.rank() == 3 && v.dim(0) == w.dim(0) && v.dim(1) == w.dim(1),
            "weighted_sum expects w [R,S] and v [R,S,C]");
  const auto R = v.dim(0), S = v.dim(1), C = v.dim(2);
  Tensor<T> out({R, C});
  const T *pw = w.value().data(), *pv = v.value().data();
  for (std::int64_t r = 0; r < R; ++r)
    for (std::int64_t s = 0; s < S; ++s) {
      const T ws = pw[r * S + s];
      const T* vr = pv + (r * S + s) * C;
      T* o = out.data() + r * C;
      for (std::int64_t c = 0; c < C; ++c) o[c] += ws * vr[c];
    }
  return ad::make_result<T>(std::move(out), {w, v}, [w, v, R, S, C](const Var<T>& g) {
    const T* pg = g.value().data();
    Var<T> gw, gv;
    if (w.requires_grad()) {
      Tensor<T> t({R, S});
      const T* pv = v.value().data();
      for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t s = 0; s < S; ++s) {
          T acc = 0;
          for (std::int64_t c = 0; c < C; ++c) acc += pg[r * C + c] * pv[(r * S + s) * C + c];
          t[r * S + s] = acc;
        }
      gw = Var<T>::constant(std::move(t));
    }
    if (v.requires_grad()) {
      Tensor<T> t({R, S, C});
      const T* pw = w.value().data();
      for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t s = 0; s < S; ++s)
          for (std::int64_t c = 0; c < C; ++c) t[(r * S + s) * C + c] = pw[r * S + s] * pg[r * C + c];
      gv = Var<T>::constant(std::move(t));
    }
    return std::vector<Var<T>>{gw, gv};
  }, true);
}

// Per-point field outputs. Heads not requested stay undefined.
template <class T>
struct FieldOutput {
  Var<T> sigma;   // [P,1], >= 0
  Var<T> rgb;     // [P,3] in [0,1]
  Var<T> hidden;  // [P,h_m]
  Var<T> conf;    // [P,1] in [0,1]
};

struct Heads {
  bool rgb = true;
  bool hidden = false;
  bool conf = false;
  bool depth = false;
};

// Evaluates the field at world points x [P,3] with unit directions d [P,3].
template <class T>
using FieldFn = std::function<FieldOutput<T>(const Tensor<double>& x, const Tensor<double>& d, const Heads&)>;

template <class T>
struct RenderOutput {
  Var<T> rgb;        // [R,3]
  Var<T> hidden;     // [R,h_m]
  Var<T> conf;       // [R,1]
  Var<T> depth;      // [R,1] expected ray distance, residual mass at the far bound
  Var<T> t_final;    // [R,1]
  Var<T> weights;    // [R,S] quadrature weights of the merged samples
  Var<T> coarse_rgb; // [R,3] composite of the coarse level alone (training aid)
  std::int64_t queries = 0;
};

struct RenderOptions {
  int n_coarse = 64;
  int n_fine = 96;
  Heads heads;
  double background = 0;   // grey level added as T_final * background
  bool coarse_rgb = false; // also composite the coarse level on its own
};

namespace detail {

inline Tensor<double> points_along(const std::vector<Ray>& rays, const std::vector<std::vector<double>>& z,
                                   Tensor<double>* dirs) {
  std::int64_t n = 0;
  for (const auto& zz : z) n += static_cast<std::int64_t>(zz.size());
  Tensor<double> x({n, 3});
  *dirs = Tensor<double>({n, 3});
  std::int64_t k = 0;
  for (std::size_t r = 0; r < rays.size(); ++r)
    for (double t : z[r]) {
      const geo::Vec3 p = rays[r].at(t);
      for (int c = 0; c < 3; ++c) {
        x[k * 3 + c] = p[c];
        (*dirs)[k * 3 + c] = rays[r].d[c];
      }
      ++k;
    }
  return x;
}

template <class T>
Tensor<T> intervals(const std::vector<Ray>& rays, const std::vector<std::vector<double>>& z) {
  const auto R = static_cast<std::int64_t>(rays.size());
  const auto S = static_cast<std::int64_t>(z.empty() ? 0 : z[0].size());
  Tensor<T> d({R, S});
  for (std::int64_t r = 0; r < R; ++r)
    for (std::int64_t s = 0; s < S; ++s)
      d[r * S + s] = static_cast<T>((s + 1 < S ? z[r][s + 1] : rays[r].far) - z[r][s]);
  return d;
}

// Coarse weights without recording a graph; drives fine sampling.
template <class T>
std::vector<std::vector<double>> plain_weights(const Tensor<T>& sigma, const Tensor<T>& delta) {
  const auto R = sigma.dim(0), S = sigma.dim(1);
  std::vector<std::vector<double>> w(R, std::vector<double>(S));
  for (std::int64_t r = 0; r < R; ++r) {
    double trans = 1;
    for (std::int64_t s = 0; s < S; ++s) {
      const double e = std::exp(-static_cast<double>(sigma[r * S + s]) * delta[r * S + s]);
      w[r][s] = trans * (1 - e);
      trans *= e;
    }
  }
  return w;
}

template <class T>
Var<T> to_rs(const Var<T>& v, std::int64_t R, std::int64_t S) {
  return ad::reshape(v, {R, S, v.dim(-1)});
}

}  // namespace detail

// Composites already-evaluated outputs along merged samples z [R][S].
template <class T>
RenderOutput<T> composite(const std::vector<Ray>& rays, const std::vector<std::vector<double>>& z,
                          const FieldOutput<T>& out, const Heads& heads, double background = 0) {
  const auto R = static_cast<std::int64_t>(rays.size());
  const auto S = static_cast<std::int64_t>(z.empty() ? 0 : z[0].size());
  RenderOutput<T> ro;
  const Tensor<T> delta = detail::intervals<T>(rays, z);
  Var<T> wt = compositing_weights(ad::reshape(out.sigma, {R, S}), delta);
  ro.weights = ad::slice_last(wt, 0, S);
  ro.t_final = ad::slice_last(wt, S, S + 1);
  if (heads.rgb) {
    ro.rgb = weighted_sum(ro.weights, detail::to_rs(out.rgb, R, S));
    if (background != 0) {
      Tensor<T> bg = Tensor<T>::full({1, 3}, static_cast<T>(background));
      ro.rgb = ad::add(ro.rgb, ad::matmul(ro.t_final, Var<T>::constant(bg)));
    }
  }
  if (heads.hidden) ro.hidden = weighted_sum(ro.weights, detail::to_rs(out.hidden, R, S));
  if (heads.conf) ro.conf = weighted_sum(ro.weights, detail::to_rs(out.conf, R, S));
  if (heads.depth) {
    Tensor<T> zt({R, S, 1}), far({R, 1});
    for (std::int64_t r = 0; r < R; ++r) {
      for (std::int64_t s = 0; s < S; ++s) zt[r * S + s] = static_cast<T>(z[r][s]);
      far[r] = static_cast<T>(rays[r].far);
    }
    ro.depth = ad::add(weighted_sum(ro.weights, Var<T>::constant(std::move(zt))),
                       ad::mul_const(ro.t_final, far));
  }
  return ro;
}

// Two-level rendering of a ray list: the coarse level is evaluated once, the
// fine level only at the N_f new depths, and both are composited together.
// Field queries per ray are therefore exactly N_c + N_f.
template <class T>
RenderOutput<T> render_rays(const FieldFn<T>& field, const std::vector<Ray>& rays, const RenderOptions& opt,
                            Rng* jitter = nullptr) {
  const auto R = static_cast<std::int64_t>(rays.size());
  const int nc = opt.n_coarse, nf = opt.n_fine;
  NVS_CHECK(nc >= 1 && nf >= 0, "sample counts");
  std::vector<std::vector<double>> zc(R);
  for (std::int64_t r = 0; r < R; ++r) zc[r] = sample_coarse(rays[r].near, rays[r].far, nc, jitter);
  Tensor<double> dc;
  Tensor<double> xc = detail::points_along(rays, zc, &dc);
  FieldOutput<T> oc = field(xc, dc, opt.heads);
  std::int64_t queries = R * nc;

  RenderOutput<T> coarse_ro;
  const bool want_coarse = opt.coarse_rgb || nf == 0;
  if (want_coarse) coarse_ro = composite(rays, zc, oc, nf == 0 ? opt.heads : Heads{}, opt.background);
  if (nf == 0) {
    coarse_ro.coarse_rgb = coarse_ro.rgb;
    coarse_ro.queries = queries;
    return coarse_ro;
  }

  const auto wc = detail::plain_weights(oc.sigma.value().reshaped({R, nc}), detail::intervals<T>(rays, zc));
  std::vector<std::vector<double>> zf(R), zm(R);
  std::vector<std::int64_t> gather_idx;
  gather_idx.reserve(static_cast<std::size_t>(R * (nc + nf)));
  for (std::int64_t r = 0; r < R; ++r) {
    RaySamples rs = sample_depths(rays[r], nc, nf, wc[r], jitter, &zc[r]);
    zf[r] = rs.fine;
    zm[r] = rs.merged;
    for (int k : rs.order)
      gather_idx.push_back(k < nc ? r * nc + k : R * nc + r * nf + (k - nc));
  }
  Tensor<double> df;
  Tensor<double> xf = detail::points_along(rays, zf, &df);
  FieldOutput<T> of = field(xf, df, opt.heads);
  queries += R * nf;

  auto merge = [&](const Var<T>& a, const Var<T>& b) {
    return a.defined() ? ad::gather_rows(ad::concat_first(std::vector<Var<T>>{a, b}), gather_idx) : Var<T>{};
  };
  FieldOutput<T> om{merge(oc.sigma, of.sigma), merge(oc.rgb, of.rgb), merge(oc.hidden, of.hidden),
                    merge(oc.conf, of.conf)};
  RenderOutput<T> ro = composite(rays, zm, om, opt.heads, opt.background);
  if (want_coarse) ro.coarse_rgb = coarse_ro.rgb;
  ro.queries = queries;
  return ro;
}

// Image-shaped results of a batch, computed without a graph in ray chunks.
template <class T>
struct ImageOutputs {
  Tensor<T> rgb;     // [rows, cols, 3] (pixelwise batches: [R, 3])
  Tensor<T> hidden;  // [rows, cols, h_m]
  Tensor<T> conf;    // [rows, cols, 1]
  Tensor<T> depth;   // [rows, cols, 1] camera-space z of the expected ray distance
  std::int64_t queries = 0;
};

template <class T>
ImageOutputs<T> render_image(const FieldFn<T>& field, const RayBatch& batch, const RenderOptions& opt,
                             int chunk = 4096) {
  if (opt.heads.hidden && batch.strategy != Strategy::kGrid)
    throw ConfigError("hidden head requires a grid batch");
  ad::NoGradGuard ng;
  const auto R = static_cast<std::int64_t>(batch.rays.size());
  std::vector<Tensor<T>> parts_rgb, parts_hidden, parts_conf, parts_depth;
  ImageOutputs<T> io;
  for (std::int64_t b = 0; b < R; b += chunk) {
    const auto e = std::min<std::int64_t>(R, b + chunk);
    std::vector<Ray> sub(batch.rays.begin() + b, batch.rays.begin() + e);
    RenderOutput<T> ro;
    try {
      ro = render_rays(field, sub, opt);
    } catch (const Error& err) {
      throw DivergenceError("field evaluation failed in ray chunk starting at ray " + std::to_string(b) + ": " +
                            err.what());
    }
    io.queries += ro.queries;
    if (opt.heads.rgb) parts_rgb.push_back(ro.rgb.value());
    if (opt.heads.hidden) parts_hidden.push_back(ro.hidden.value());
    if (opt.heads.conf) parts_conf.push_back(ro.conf.value());
    if (opt.heads.depth) {
      Tensor<T> z = ro.depth.value();
      for (std::int64_t r = 0; r < z.numel(); ++r) z[r] *= static_cast<T>(sub[r].forward_cos);
      parts_depth.push_back(std::move(z));
    }
  }
  auto stitch = [&](const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) return Tensor<T>();
    const auto c = parts[0].dim(-1);
    std::vector<T> data;
    data.reserve(static_cast<std::size_t>(R * c));
    for (const auto& p : parts) data.insert(data.end(), p.storage().begin(), p.storage().end());
    Shape s = batch.strategy == Strategy::kPixelwise ? Shape{R, c} : Shape{batch.rows, batch.cols, c};
    return Tensor<T>(s, std::move(data));
  };
  io.rgb = stitch(parts_rgb);
  io.hidden = stitch(parts_hidden);
  io.conf = stitch(parts_conf);
  io.depth = stitch(parts_depth);
  return io;
}

}  // namespace nvs::render

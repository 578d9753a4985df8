#pragma once

#include "nvs/substrate/ops.hpp"

// Image ops on NHWC tensors. conv2d, conv2d_input_grad and conv2d_weight_grad
// form a set closed under differentiation, so discriminator gradients can be
// differentiated again for the R1 penalty.

namespace nvs::ad {

struct ConvGeom {
  std::int64_t n, h, w, ci, kh, kw, co, stride, pad, ho, wo;
};

inline ConvGeom conv_geom(const Shape& x, const Shape& w, std::int64_t stride, std::int64_t pad) {
  NVS_CHECK(x.size() == 4 && w.size() == 4, "conv expects NHWC input and KH,KW,CI,CO weight");
  NVS_CHECK(x[3] == w[2], "conv channel mismatch: input " + shape_str(x) + " weight " + shape_str(w));
  ConvGeom g{x[0], x[1], x[2], x[3], w[0], w[1], w[3], stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;
  NVS_CHECK(g.ho > 0 && g.wo > 0, "conv output would be empty");
  return g;
}

namespace kernel {

// cols[(oy*wo+ox), (ky*kw+kx)*ci + c] for one image.
template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const auto kcols = g.kh * g.kw * g.ci;
  for (std::int64_t oy = 0; oy < g.ho; ++oy)
    for (std::int64_t ox = 0; ox < g.wo; ++ox) {
      T* row = cols + (oy * g.wo + ox) * kcols;
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        const auto iy = oy * g.stride - g.pad + ky;
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const auto ix = ox * g.stride - g.pad + kx;
          T* dst = row + (ky * g.kw + kx) * g.ci;
          if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
            std::fill(dst, dst + g.ci, T(0));
          } else {
            const T* src = x + (iy * g.w + ix) * g.ci;
            std::copy(src, src + g.ci, dst);
          }
        }
      }
    }
}

template <class T>
void col2im_add(const T* cols, const ConvGeom& g, T* x) {
  const auto kcols = g.kh * g.kw * g.ci;
  for (std::int64_t oy = 0; oy < g.ho; ++oy)
    for (std::int64_t ox = 0; ox < g.wo; ++ox) {
      const T* row = cols + (oy * g.wo + ox) * kcols;
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        const auto iy = oy * g.stride - g.pad + ky;
        if (iy < 0 || iy >= g.h) continue;
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          const auto ix = ox * g.stride - g.pad + kx;
          if (ix < 0 || ix >= g.w) continue;
          const T* src = row + (ky * g.kw + kx) * g.ci;
          T* dst = x + (iy * g.w + ix) * g.ci;
          for (std::int64_t c = 0; c < g.ci; ++c) dst[c] += src[c];
        }
      }
    }
}

}  // namespace kernel

template <class T>
Var<T> conv2d_input_grad(const Var<T>& g, const Var<T>& w, const Shape& x_shape, std::int64_t stride,
                         std::int64_t pad);
template <class T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& g, const Shape& w_shape, std::int64_t stride,
                          std::int64_t pad);

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, std::int64_t stride = 1, std::int64_t pad = 1) {
  const ConvGeom cg = conv_geom(x.shape(), w.shape(), stride, pad);
  const auto kcols = cg.kh * cg.kw * cg.ci, npix = cg.ho * cg.wo;
  Tensor<T> out({cg.n, cg.ho, cg.wo, cg.co});
  std::vector<T> cols(static_cast<std::size_t>(npix * kcols));
  ConstMatMap<T> W(w.value().data(), kcols, cg.co);
  for (std::int64_t n = 0; n < cg.n; ++n) {
    kernel::im2col(x.value().data() + n * cg.h * cg.w * cg.ci, cg, cols.data());
    MatMap<T>(out.data() + n * npix * cg.co, npix, cg.co).noalias() = ConstMatMap<T>(cols.data(), npix, kcols) * W;
  }
  Shape xs = x.shape(), ws = w.shape();
  return make_result<T>(std::move(out), {x, w}, [x, w, xs, ws, stride, pad](const Var<T>& g) {
    return std::vector<Var<T>>{x.requires_grad() ? conv2d_input_grad(g, w, xs, stride, pad) : Var<T>{},
                               w.requires_grad() ? conv2d_weight_grad(x, g, ws, stride, pad) : Var<T>{}};
  });
}

template <class T>
Var<T> conv2d_input_grad(const Var<T>& g, const Var<T>& w, const Shape& x_shape, std::int64_t stride,
                         std::int64_t pad) {
  const ConvGeom cg = conv_geom(x_shape, w.shape(), stride, pad);
  const auto kcols = cg.kh * cg.kw * cg.ci, npix = cg.ho * cg.wo;
  NVS_CHECK(g.shape() == (Shape{cg.n, cg.ho, cg.wo, cg.co}), "conv2d_input_grad shape mismatch");
  Tensor<T> out(x_shape);
  std::vector<T> cols(static_cast<std::size_t>(npix * kcols));
  ConstMatMap<T> W(w.value().data(), kcols, cg.co);
  for (std::int64_t n = 0; n < cg.n; ++n) {
    MatMap<T>(cols.data(), npix, kcols).noalias() =
        ConstMatMap<T>(g.value().data() + n * npix * cg.co, npix, cg.co) * W.transpose();
    kernel::col2im_add(cols.data(), cg, out.data() + n * cg.h * cg.w * cg.ci);
  }
  Shape ws = w.shape(), gs = g.shape();
  return make_result<T>(std::move(out), {g, w}, [g, w, ws, stride, pad](const Var<T>& gg) {
    return std::vector<Var<T>>{g.requires_grad() ? conv2d(gg, w, stride, pad) : Var<T>{},
                               w.requires_grad() ? conv2d_weight_grad(gg, g, ws, stride, pad) : Var<T>{}};
  });
}

template <class T>
Var<T> conv2d_weight_grad(const Var<T>& x, const Var<T>& g, const Shape& w_shape, std::int64_t stride,
                          std::int64_t pad) {
  const ConvGeom cg = conv_geom(x.shape(), w_shape, stride, pad);
  const auto kcols = cg.kh * cg.kw * cg.ci, npix = cg.ho * cg.wo;
  Tensor<T> out(w_shape);
  std::vector<T> cols(static_cast<std::size_t>(npix * kcols));
  MatMap<T> W(out.data(), kcols, cg.co);
  for (std::int64_t n = 0; n < cg.n; ++n) {
    kernel::im2col(x.value().data() + n * cg.h * cg.w * cg.ci, cg, cols.data());
    W.noalias() += ConstMatMap<T>(cols.data(), npix, kcols).transpose() *
                   ConstMatMap<T>(g.value().data() + n * npix * cg.co, npix, cg.co);
  }
  Shape xs = x.shape();
  return make_result<T>(std::move(out), {x, g}, [x, g, xs, stride, pad](const Var<T>& gw) {
    return std::vector<Var<T>>{x.requires_grad() ? conv2d_input_grad(g, gw, xs, stride, pad) : Var<T>{},
                               g.requires_grad() ? conv2d(x, gw, stride, pad) : Var<T>{}};
  });
}

// Nearest-neighbour 2x upsampling.
template <class T>
Var<T> upsample2x(const Var<T>& x) {
  const auto n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  Tensor<T> out({n, 2 * h, 2 * w, c});
  const T* px = x.value().data();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t y = 0; y < 2 * h; ++y)
      for (std::int64_t xx = 0; xx < 2 * w; ++xx) {
        const T* src = px + ((b * h + y / 2) * w + xx / 2) * c;
        std::copy(src, src + c, out.data() + ((b * 2 * h + y) * 2 * w + xx) * c);
      }
  return make_result<T>(std::move(out), {x}, [n, h, w, c](const Var<T>& g) {
    Tensor<T> gx({n, h, w, c});
    const T* pg = g.value().data();
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t y = 0; y < 2 * h; ++y)
        for (std::int64_t xx = 0; xx < 2 * w; ++xx) {
          const T* src = pg + ((b * 2 * h + y) * 2 * w + xx) * c;
          T* dst = gx.data() + ((b * h + y / 2) * w + xx / 2) * c;
          for (std::int64_t k = 0; k < c; ++k) dst[k] += src[k];
        }
    return std::vector<Var<T>>{Var<T>::constant(std::move(gx))};
  }, true);
}

// Adds a per-sample channel bias: x[N,H,W,C] + b[N,C].
template <class T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& b) {
  const auto n = x.dim(0), c = x.dim(3), hw = x.dim(1) * x.dim(2);
  NVS_CHECK(b.shape() == (Shape{n, c}), "add_channel_bias expects [N,C] bias");
  Tensor<T> out = x.value();
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t p = 0; p < hw; ++p)
      for (std::int64_t k = 0; k < c; ++k) out[(s * hw + p) * c + k] += b.value()[s * c + k];
  return make_result<T>(std::move(out), {x, b}, [n, c, hw](const Var<T>& g) {
    Tensor<T> gb({n, c});
    for (std::int64_t s = 0; s < n; ++s)
      for (std::int64_t p = 0; p < hw; ++p)
        for (std::int64_t k = 0; k < c; ++k) gb[s * c + k] += g.value()[(s * hw + p) * c + k];
    return std::vector<Var<T>>{g, Var<T>::constant(std::move(gb))};
  }, true);
}

namespace kernel {

// Bilinear resize of an [H,W,C] array, sampling at pixel centres.
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& img, std::int64_t out_h, std::int64_t out_w) {
  const auto h = img.dim(0), w = img.dim(1), c = img.dim(2);
  Tensor<T> out({out_h, out_w, c});
  for (std::int64_t y = 0; y < out_h; ++y) {
    const double sy = std::clamp((y + 0.5) * static_cast<double>(h) / out_h - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::int64_t>(std::floor(sy));
    const auto y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (std::int64_t x = 0; x < out_w; ++x) {
      const double sx =
          std::clamp((x + 0.5) * static_cast<double>(w) / out_w - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::int64_t>(std::floor(sx));
      const auto x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      for (std::int64_t k = 0; k < c; ++k) {
        const double v = (1 - fy) * ((1 - fx) * img.at(y0, x0, k) + fx * img.at(y0, x1, k)) +
                         fy * ((1 - fx) * img.at(y1, x0, k) + fx * img.at(y1, x1, k));
        out.at(y, x, k) = static_cast<T>(v);
      }
    }
  }
  return out;
}

}  // namespace kernel

}  // namespace nvs::ad

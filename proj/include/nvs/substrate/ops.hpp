#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "nvs/substrate/autograd.hpp"

// Differentiable primitives. Ops whose backward is itself written with
// differentiable ops support double backward (needed for the R1 penalty);
// fused kernels are marked first-order-only.

namespace nvs::ad {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;

namespace kernel {

template <class T>
T sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}
template <class T>
T softplus(T x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <class Fn, class T>
Tensor<T> map(const Tensor<T>& a, Fn fn) {
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  T* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = fn(pa[i]);
  return out;
}

template <class Fn, class T>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, Fn fn) {
  NVS_CHECK(a.shape() == b.shape(), "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = fn(pa[i], pb[i]);
  return out;
}

// C = op(A) op(B) for 2-D row-major operands.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb) {
  NVS_CHECK(a.rank() == 2 && b.rank() == 2, "matmul expects 2-D operands");
  const auto am = a.dim(0), ak = a.dim(1), bm = b.dim(0), bk = b.dim(1);
  const auto m = ta ? ak : am, k = ta ? am : ak;
  const auto k2 = tb ? bk : bm, n = tb ? bm : bk;
  NVS_CHECK(k == k2, "matmul inner dimension mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor<T> out({m, n});
  ConstMatMap<T> A(a.data(), am, ak), B(b.data(), bm, bk);
  MatMap<T> C(out.data(), m, n);
  if (!ta && !tb) C.noalias() = A * B;
  else if (!ta && tb) C.noalias() = A * B.transpose();
  else if (ta && !tb) C.noalias() = A.transpose() * B;
  else C.noalias() = A.transpose() * B.transpose();
  return out;
}

template <class T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  NVS_CHECK(a.rank() == 2, "transpose expects 2-D");
  Tensor<T> out({a.dim(1), a.dim(0)});
  MatMap<T>(out.data(), a.dim(1), a.dim(0)) = ConstMatMap<T>(a.data(), a.dim(0), a.dim(1)).transpose();
  return out;
}

}  // namespace kernel

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return make_result<T>(kernel::zip(a.value(), b.value(), [](T x, T y) { return x + y; }), {a, b},
                        [](const Var<T>& g) { return std::vector<Var<T>>{g, g}; });
}

template <class T>
Var<T> accumulate_grad(const Var<T>& a, const Var<T>& b) {
  return add(a, b);
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  return make_result<T>(kernel::map(a.value(), [s](T x) { return x * s; }), {a},
                        [s](const Var<T>& g) { return std::vector<Var<T>>{scale(g, s)}; });
}

template <class T>
Var<T> neg(const Var<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return make_result<T>(kernel::zip(a.value(), b.value(), [](T x, T y) { return x - y; }), {a, b},
                        [](const Var<T>& g) { return std::vector<Var<T>>{g, neg(g)}; });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return make_result<T>(kernel::map(a.value(), [s](T x) { return x + s; }), {a},
                        [](const Var<T>& g) { return std::vector<Var<T>>{g}; });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return make_result<T>(kernel::zip(a.value(), b.value(), [](T x, T y) { return x * y; }), {a, b},
                        [a, b](const Var<T>& g) {
                          return std::vector<Var<T>>{a.requires_grad() ? mul(g, b) : Var<T>{},
                                                     b.requires_grad() ? mul(g, a) : Var<T>{}};
                        });
}

// Multiplies by a constant tensor of the same shape.
template <class T>
Var<T> mul_const(const Var<T>& a, const Tensor<T>& m) {
  return make_result<T>(kernel::zip(a.value(), m, [](T x, T y) { return x * y; }), {a},
                        [m](const Var<T>& g) { return std::vector<Var<T>>{mul_const(g, m)}; });
}

template <class T>
Var<T> square(const Var<T>& a) {
  return mul(a, a);
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Shape orig = a.shape();
  return make_result<T>(a.value().reshaped(std::move(shape)), {a},
                        [orig](const Var<T>& g) { return std::vector<Var<T>>{reshape(g, orig)}; });
}

template <class T>
Var<T> expand_scalar(const Var<T>& s, Shape shape);

template <class T>
Var<T> sum(const Var<T>& a) {
  Shape orig = a.shape();
  return make_result<T>(Tensor<T>::scalar(a.value().sum()), {a},
                        [orig](const Var<T>& g) { return std::vector<Var<T>>{expand_scalar(g, orig)}; });
}

template <class T>
Var<T> expand_scalar(const Var<T>& s, Shape shape) {
  NVS_CHECK(s.numel() == 1, "expand_scalar expects a scalar");
  return make_result<T>(Tensor<T>::full(std::move(shape), s.value()[0]), {s},
                        [](const Var<T>& g) { return std::vector<Var<T>>{sum(g)}; });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b, bool ta = false, bool tb = false) {
  return make_result<T>(kernel::matmul(a.value(), b.value(), ta, tb), {a, b}, [a, b, ta, tb](const Var<T>& g) {
    Var<T> ga, gb;
    if (a.requires_grad()) {
      if (!ta) ga = tb ? matmul(g, b) : matmul(g, b, false, true);
      else ga = tb ? matmul(b, g, true, true) : matmul(b, g, false, true);
    }
    if (b.requires_grad()) {
      if (!tb) gb = ta ? matmul(a, g) : matmul(a, g, true, false);
      else gb = ta ? matmul(g, a, true, true) : matmul(g, a, true, false);
    }
    return std::vector<Var<T>>{ga, gb};
  });
}

template <class T>
Var<T> broadcast_rowvec(const Var<T>& b, Shape shape);

// Sums every leading dimension away, leaving the trailing channel axis.
template <class T>
Var<T> sum_rows(const Var<T>& x) {
  const auto c = x.shape().back();
  const auto rows = x.numel() / c;
  Tensor<T> out({c});
  const T* px = x.value().data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < c; ++j) out[j] += px[r * c + j];
  Shape orig = x.shape();
  return make_result<T>(std::move(out), {x},
                        [orig](const Var<T>& g) { return std::vector<Var<T>>{broadcast_rowvec(g, orig)}; });
}

template <class T>
Var<T> broadcast_rowvec(const Var<T>& b, Shape shape) {
  const auto c = b.numel();
  NVS_CHECK(shape.back() == c, "broadcast_rowvec channel mismatch");
  Tensor<T> out(shape);
  const auto rows = out.numel() / c;
  for (std::int64_t r = 0; r < rows; ++r)
    std::copy(b.value().data(), b.value().data() + c, out.data() + r * c);
  return make_result<T>(std::move(out), {b}, [](const Var<T>& g) { return std::vector<Var<T>>{sum_rows(g)}; });
}

// x[..., C] + b[C]
template <class T>
Var<T> add_rowvec(const Var<T>& x, const Var<T>& b) {
  const auto c = b.numel();
  NVS_CHECK(x.shape().back() == c, "add_rowvec channel mismatch " + shape_str(x.shape()));
  Tensor<T> out = x.value();
  const auto rows = out.numel() / c;
  T* po = out.data();
  const T* pb = b.value().data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < c; ++j) po[r * c + j] += pb[j];
  return make_result<T>(std::move(out), {x, b}, [b](const Var<T>& g) {
    return std::vector<Var<T>>{g, b.requires_grad() ? sum_rows(g) : Var<T>{}};
  });
}

// x[M,K] W[K,N] + b[N]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return add_rowvec(matmul(x, w), b);
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> mask = kernel::map(x.value(), [](T v) { return v > 0 ? T(1) : T(0); });
  return mul_const(x, mask);
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope = T(0.2)) {
  Tensor<T> mask = kernel::map(x.value(), [slope](T v) { return v > 0 ? T(1) : slope; });
  return mul_const(x, mask);
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> s = kernel::map(x.value(), [](T v) { return kernel::sigmoid(v); });
  return make_result<T>(s, {x}, [x](const Var<T>& g) {
    Var<T> sv = sigmoid(x);
    Var<T> ds = mul(sv, add_scalar(neg(sv), T(1)));
    return std::vector<Var<T>>{mul(g, ds)};
  });
}

template <class T>
Var<T> softplus(const Var<T>& x) {
  return make_result<T>(kernel::map(x.value(), [](T v) { return kernel::softplus(v); }), {x},
                        [x](const Var<T>& g) { return std::vector<Var<T>>{mul(g, sigmoid(x))}; });
}

template <class T>
Var<T> exp(const Var<T>& x) {
  Tensor<T> e = kernel::map(x.value(), [](T v) { return std::exp(v); });
  return make_result<T>(e, {x}, [x](const Var<T>& g) { return std::vector<Var<T>>{mul(g, exp(x))}; });
}

template <class T>
Var<T> sin(const Var<T>& x);
template <class T>
Var<T> cos(const Var<T>& x) {
  return make_result<T>(kernel::map(x.value(), [](T v) { return std::cos(v); }), {x},
                        [x](const Var<T>& g) { return std::vector<Var<T>>{neg(mul(g, sin(x)))}; });
}
template <class T>
Var<T> sin(const Var<T>& x) {
  return make_result<T>(kernel::map(x.value(), [](T v) { return std::sin(v); }), {x},
                        [x](const Var<T>& g) { return std::vector<Var<T>>{mul(g, cos(x))}; });
}

template <class T>
Var<T> silu(const Var<T>& x) {
  Tensor<T> out = kernel::map(x.value(), [](T v) { return v * kernel::sigmoid(v); });
  return make_result<T>(
      std::move(out), {x},
      [x](const Var<T>& g) {
        Tensor<T> d = kernel::map(x.value(), [](T v) {
          T s = kernel::sigmoid(v);
          return s * (T(1) + v * (T(1) - s));
        });
        return std::vector<Var<T>>{mul_const(g, d)};
      },
      true);
}

template <class T>
Var<T> pad_last(const Var<T>& x, std::int64_t total, std::int64_t begin);

// x[..., begin:end]
template <class T>
Var<T> slice_last(const Var<T>& x, std::int64_t begin, std::int64_t end) {
  const auto c = x.shape().back();
  NVS_CHECK(0 <= begin && begin <= end && end <= c, "slice_last out of range");
  const auto rows = x.numel() / c, w = end - begin;
  Shape s = x.shape();
  s.back() = w;
  Tensor<T> out(s);
  const T* px = x.value().data();
  for (std::int64_t r = 0; r < rows; ++r) std::copy(px + r * c + begin, px + r * c + end, out.data() + r * w);
  return make_result<T>(std::move(out), {x},
                        [c, begin](const Var<T>& g) { return std::vector<Var<T>>{pad_last(g, c, begin)}; });
}

template <class T>
Var<T> pad_last(const Var<T>& x, std::int64_t total, std::int64_t begin) {
  const auto w = x.shape().back();
  const auto rows = x.numel() / w;
  Shape s = x.shape();
  s.back() = total;
  Tensor<T> out(s);
  const T* px = x.value().data();
  for (std::int64_t r = 0; r < rows; ++r) std::copy(px + r * w, px + (r + 1) * w, out.data() + r * total + begin);
  return make_result<T>(std::move(out), {x},
                        [begin, w](const Var<T>& g) { return std::vector<Var<T>>{slice_last(g, begin, begin + w)}; });
}

// Concatenates along the trailing axis; all leading dimensions must agree.
template <class T>
Var<T> concat_last(const std::vector<Var<T>>& xs) {
  NVS_CHECK(!xs.empty(), "concat of nothing");
  Shape s = xs[0].shape();
  const auto rows = xs[0].numel() / s.back();
  std::int64_t total = 0;
  for (const auto& x : xs) {
    NVS_CHECK(x.numel() / x.shape().back() == rows, "concat_last leading dims mismatch");
    total += x.shape().back();
  }
  s.back() = total;
  Tensor<T> out(s);
  std::int64_t off = 0;
  std::vector<std::pair<std::int64_t, std::int64_t>> ranges;
  for (const auto& x : xs) {
    const auto w = x.shape().back();
    const T* px = x.value().data();
    for (std::int64_t r = 0; r < rows; ++r) std::copy(px + r * w, px + (r + 1) * w, out.data() + r * total + off);
    ranges.push_back({off, off + w});
    off += w;
  }
  return make_result<T>(std::move(out), xs, [ranges, xs](const Var<T>& g) {
    std::vector<Var<T>> gs;
    for (std::size_t i = 0; i < ranges.size(); ++i)
      gs.push_back(xs[i].requires_grad() ? slice_last(g, ranges[i].first, ranges[i].second) : Var<T>{});
    return gs;
  });
}

// Concatenates along the leading axis.
template <class T>
Var<T> concat_first(const std::vector<Var<T>>& xs) {
  NVS_CHECK(!xs.empty(), "concat of nothing");
  Shape s = xs[0].shape();
  std::int64_t rows = 0;
  std::vector<std::int64_t> offsets;
  std::vector<T> data;
  for (const auto& x : xs) {
    NVS_CHECK(x.rank() == xs[0].rank(), "concat_first rank mismatch");
    offsets.push_back(static_cast<std::int64_t>(data.size()));
    data.insert(data.end(), x.value().storage().begin(), x.value().storage().end());
    rows += x.dim(0);
  }
  s[0] = rows;
  return make_result<T>(Tensor<T>(s, std::move(data)), xs, [xs, offsets](const Var<T>& g) {
    std::vector<Var<T>> gs;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (!xs[i].requires_grad()) {
        gs.emplace_back();
        continue;
      }
      const auto n = xs[i].numel();
      std::vector<T> part(g.value().data() + offsets[i], g.value().data() + offsets[i] + n);
      gs.push_back(Var<T>::constant(Tensor<T>(xs[i].shape(), std::move(part))));
    }
    return gs;
  }, true);
}

// Rows [begin, end) along the leading axis.
template <class T>
Var<T> slice_first(const Var<T>& x, std::int64_t begin, std::int64_t end) {
  NVS_CHECK(0 <= begin && begin <= end && end <= x.dim(0), "slice_first out of range");
  const auto inner = x.numel() / x.dim(0);
  Shape s = x.shape();
  s[0] = end - begin;
  std::vector<T> data(x.value().data() + begin * inner, x.value().data() + end * inner);
  Shape orig = x.shape();
  return make_result<T>(Tensor<T>(s, std::move(data)), {x}, [orig, begin, inner](const Var<T>& g) {
    Tensor<T> full(orig);
    std::copy(g.value().data(), g.value().data() + g.numel(), full.data() + begin * inner);
    return std::vector<Var<T>>{Var<T>::constant(std::move(full))};
  }, true);
}

// out[i] = x[idx[i]] over the leading axis; gradients scatter-add back.
template <class T>
Var<T> gather_rows(const Var<T>& x, std::vector<std::int64_t> idx) {
  const auto n = x.dim(0);
  const auto inner = x.numel() / n;
  Shape s = x.shape();
  s[0] = static_cast<std::int64_t>(idx.size());
  Tensor<T> out(s);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    NVS_CHECK(idx[i] >= 0 && idx[i] < n, "gather index out of range");
    std::copy_n(x.value().data() + idx[i] * inner, inner, out.data() + static_cast<std::int64_t>(i) * inner);
  }
  Shape orig = x.shape();
  return make_result<T>(std::move(out), {x}, [orig, idx = std::move(idx), inner](const Var<T>& g) {
    Tensor<T> full(orig);
    const T* pg = g.value().data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      T* dst = full.data() + idx[i] * inner;
      for (std::int64_t j = 0; j < inner; ++j) dst[j] += pg[static_cast<std::int64_t>(i) * inner + j];
    }
    return std::vector<Var<T>>{Var<T>::constant(std::move(full))};
  }, true);
}

template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  return mean(square(sub(a, b)));
}

// Elementwise a*alpha + b*(1-alpha) where alpha is per-row [R] and a,b are [R,C].
template <class T>
Var<T> blend_rows(const Var<T>& a, const Var<T>& b, const Var<T>& alpha) {
  const auto c = a.shape().back();
  const auto rows = a.numel() / c;
  NVS_CHECK(a.shape() == b.shape() && alpha.numel() == rows, "blend_rows shape mismatch");
  Tensor<T> out(a.shape());
  const T *pa = a.value().data(), *pb = b.value().data(), *pw = alpha.value().data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < c; ++j) out[r * c + j] = pa[r * c + j] * pw[r] + pb[r * c + j] * (T(1) - pw[r]);
  return make_result<T>(std::move(out), {a, b, alpha}, [a, b, alpha, rows, c](const Var<T>& g) {
    Tensor<T> ga(a.shape()), gb(a.shape()), gw(alpha.shape());
    const T *pg = g.value().data(), *pa = a.value().data(), *pb = b.value().data(), *pw = alpha.value().data();
    for (std::int64_t r = 0; r < rows; ++r) {
      T acc = 0;
      for (std::int64_t j = 0; j < c; ++j) {
        const auto i = r * c + j;
        ga[i] = pg[i] * pw[r];
        gb[i] = pg[i] * (T(1) - pw[r]);
        acc += pg[i] * (pa[i] - pb[i]);
      }
      gw[r] = acc;
    }
    return std::vector<Var<T>>{Var<T>::constant(std::move(ga)), Var<T>::constant(std::move(gb)),
                               Var<T>::constant(std::move(gw))};
  }, true);
}

}  // namespace nvs::ad

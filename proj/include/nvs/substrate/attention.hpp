#pragma once

#include "nvs/substrate/ops.hpp"

namespace nvs::ad {

namespace kernel {

// Row-wise softmax(Q K^T * scale) V for one frame: Q[n,d], K[m,d], V[m,dv].
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, Tensor<T>* probs = nullptr) {
  NVS_CHECK(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "attention expects 2-D tokens");
  NVS_CHECK(q.dim(1) == k.dim(1), "query/key dimension mismatch");
  NVS_CHECK(k.dim(0) == v.dim(0), "key/value count mismatch");
  const T s = T(1) / std::sqrt(static_cast<T>(q.dim(1)));
  Tensor<T> p = matmul(q, k, false, true);
  const auto n = p.dim(0), m = p.dim(1);
  for (std::int64_t i = 0; i < n; ++i) {
    T* row = p.data() + i * m;
    T mx = row[0] * s;
    for (std::int64_t j = 0; j < m; ++j) mx = std::max(mx, row[j] * s);
    T z = 0;
    for (std::int64_t j = 0; j < m; ++j) z += (row[j] = std::exp(row[j] * s - mx));
    for (std::int64_t j = 0; j < m; ++j) row[j] /= z;
  }
  Tensor<T> out = matmul(p, v, false, false);
  if (probs) *probs = std::move(p);
  return out;
}

}  // namespace kernel

// Batched scaled dot-product attention: Q[B,N,d], K[B,M,d], V[B,M,dv] -> [B,N,dv].
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
  const auto b = q.dim(0), n = q.dim(1), d = q.dim(2), m = k.dim(1), dv = v.dim(2);
  NVS_CHECK(k.dim(0) == b && v.dim(0) == b && k.dim(2) == d && v.dim(1) == m, "attention shape mismatch");
  Tensor<T> out({b, n, dv});
  std::vector<Tensor<T>> probs(static_cast<std::size_t>(b));
  auto frame = [](const Tensor<T>& t, std::int64_t i) {
    const auto rows = t.dim(1), cols = t.dim(2);
    return Tensor<T>({rows, cols}, std::vector<T>(t.data() + i * rows * cols, t.data() + (i + 1) * rows * cols));
  };
  for (std::int64_t i = 0; i < b; ++i) {
    Tensor<T> o = kernel::attention(frame(q.value(), i), frame(k.value(), i), frame(v.value(), i),
                                    &probs[static_cast<std::size_t>(i)]);
    std::copy(o.data(), o.data() + n * dv, out.data() + i * n * dv);
  }
  return make_result<T>(std::move(out), {q, k, v}, [q, k, v, probs, frame, b, n, m, d, dv](const Var<T>& g) {
    Tensor<T> gq(q.shape()), gk(k.shape()), gv(v.shape());
    const T s = T(1) / std::sqrt(static_cast<T>(d));
    for (std::int64_t i = 0; i < b; ++i) {
      const Tensor<T>& p = probs[static_cast<std::size_t>(i)];
      Tensor<T> go = frame(g.value(), i), qi = frame(q.value(), i), ki = frame(k.value(), i), vi = frame(v.value(), i);
      Tensor<T> dv_i = kernel::matmul(p, go, true, false);
      Tensor<T> dp = kernel::matmul(go, vi, false, true);
      for (std::int64_t r = 0; r < n; ++r) {
        T dot = 0;
        for (std::int64_t j = 0; j < m; ++j) dot += dp[r * m + j] * p[r * m + j];
        for (std::int64_t j = 0; j < m; ++j) dp[r * m + j] = p[r * m + j] * (dp[r * m + j] - dot) * s;
      }
      Tensor<T> dq = kernel::matmul(dp, ki, false, false);
      Tensor<T> dk = kernel::matmul(dp, qi, true, false);
      std::copy(dq.data(), dq.data() + n * d, gq.data() + i * n * d);
      std::copy(dk.data(), dk.data() + m * d, gk.data() + i * m * d);
      std::copy(dv_i.data(), dv_i.data() + m * dv, gv.data() + i * m * dv);
    }
    return std::vector<Var<T>>{Var<T>::constant(std::move(gq)), Var<T>::constant(std::move(gk)),
                               Var<T>::constant(std::move(gv))};
  }, true);
}

}  // namespace nvs::ad

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nvs/substrate/conv.hpp"
#include "nvs/substrate/rng.hpp"

namespace nvs::ad {

// Named, ordered collection of trainable tensors.
template <class T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Var<T> var;
  };

  Var<T> add(const std::string& name, Tensor<T> init) {
    for (const auto& e : entries_) NVS_CHECK(e.name != name, "duplicate parameter " + name);
    Var<T> v = Var<T>::parameter(std::move(init), name);
    entries_.push_back({name, v});
    return v;
  }

  void append(const ParamSet& other, const std::string& prefix = {}) {
    for (const auto& e : other.entries_) entries_.push_back({prefix + e.name, e.var});
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Var<T>> vars() const {
    std::vector<Var<T>> out;
    for (const auto& e : entries_) out.push_back(e.var);
    return out;
  }
  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.var.numel();
    return n;
  }
  void set_trainable(bool on) {
    for (auto& e : entries_) e.var.set_requires_grad(on);
  }
  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }
  const Var<T>* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e.var;
    return nullptr;
  }

 private:
  std::vector<Entry> entries_;
};

// Draws in double so float and double instantiations start bit-comparable.
template <class T>
Tensor<T> uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.storage()) v = static_cast<T>(dist(rng));
  return t;
}

template <class T>
struct Linear {
  Var<T> weight;  // [in, out]
  Var<T> bias;    // [out]

  Linear() = default;
  Linear(ParamSet<T>& ps, const std::string& name, std::int64_t in, std::int64_t out, Rng& rng,
         double gain = std::sqrt(2.0)) {
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(in));
    weight = ps.add(name + ".weight", uniform_init<T>({in, out}, bound, rng));
    bias = ps.add(name + ".bias", Tensor<T>::zeros({out}));
  }

  std::int64_t in_features() const { return weight.dim(0); }
  std::int64_t out_features() const { return weight.dim(1); }

  // Accepts [..., in] and returns [..., out].
  Var<T> operator()(const Var<T>& x) const {
    if (x.rank() == 2) return linear(x, weight, bias);
    Shape s = x.shape();
    const auto rows = x.numel() / s.back();
    s.back() = out_features();
    return reshape(linear(reshape(x, {rows, in_features()}), weight, bias), s);
  }
};

template <class T>
struct Conv2d {
  Var<T> weight;  // [k, k, in, out]
  Var<T> bias;    // [out]
  std::int64_t stride = 1;
  std::int64_t pad = 1;

  Conv2d() = default;
  Conv2d(ParamSet<T>& ps, const std::string& name, std::int64_t in, std::int64_t out, std::int64_t k, Rng& rng,
         std::int64_t stride_ = 1, double gain = std::sqrt(2.0))
      : stride(stride_), pad(k / 2) {
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(in * k * k));
    weight = ps.add(name + ".weight", uniform_init<T>({k, k, in, out}, bound, rng));
    bias = ps.add(name + ".bias", Tensor<T>::zeros({out}));
  }

  Var<T> operator()(const Var<T>& x) const { return add_rowvec(conv2d(x, weight, stride, pad), bias); }
};

}  // namespace nvs::ad

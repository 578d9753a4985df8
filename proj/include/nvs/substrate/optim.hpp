#pragma once

#include <cmath>
#include <vector>

#include "nvs/substrate/autograd.hpp"

namespace nvs::ad {

template <class T>
struct OptimState {
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::int64_t step = 0;
  double learning_rate = 1e-4;
};

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. A parameter that carries a gradient while frozen
// (requires_grad == false) is a bug in the caller and aborts the step.
template <class T>
class Adam {
 public:
  Adam(std::vector<Var<T>> params, AdamOptions opts = {}) : params_(std::move(params)), opts_(opts) {
    state_.learning_rate = opts.learning_rate;
    for (const auto& p : params_) {
      state_.first_moment.emplace_back(p.shape());
      state_.second_moment.emplace_back(p.shape());
    }
  }

  const std::vector<Var<T>>& params() const noexcept { return params_; }
  OptimState<T>& state() noexcept { return state_; }
  const OptimState<T>& state() const noexcept { return state_; }
  void set_learning_rate(double lr) { state_.learning_rate = lr; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++state_.step;
    const double b1 = opts_.beta1, b2 = opts_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state_.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state_.step));
    const double lr = state_.learning_rate;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Var<T> p = params_[i];
      if (!p.has_grad()) continue;
      if (!p.requires_grad())
        throw ContractError("optimizer asked to update frozen parameter " + p.name());
      const Tensor<T>& g = p.grad();
      NVS_CHECK(g.shape() == p.shape(), "gradient shape mismatch for " + p.name());
      T* w = p.mutable_value().data();
      T* m = state_.first_moment[i].data();
      T* v = state_.second_moment[i].data();
      const T* pg = g.data();
      for (std::int64_t k = 0; k < g.numel(); ++k) {
        m[k] = static_cast<T>(b1 * m[k] + (1 - b1) * pg[k]);
        v[k] = static_cast<T>(b2 * v[k] + (1 - b2) * pg[k] * pg[k]);
        const double mh = m[k] / c1, vh = v[k] / c2;
        w[k] -= static_cast<T>(lr * mh / (std::sqrt(vh) + opts_.eps));
      }
    }
  }

 private:
  std::vector<Var<T>> params_;
  AdamOptions opts_;
  OptimState<T> state_;
};

}  // namespace nvs::ad

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "nvs/substrate/autograd.hpp"
#include "nvs/substrate/rng.hpp"

namespace nvs::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  std::int64_t entries_checked = 0;
};

// Compares reverse-mode gradients of a scalar function against central finite
// differences. The error per entry is |analytic - fd| / (|analytic| + eps).
// max_entries_per_param > 0 checks a random subset of each parameter.
inline GradCheckResult grad_check(const std::function<Var<double>()>& f, const std::vector<Var<double>>& params,
                                  double eps, std::int64_t max_entries_per_param = -1, std::uint64_t seed = 0) {
  NVS_CHECK(eps > 0, "eps must be positive");
  Var<double> out = f();
  NVS_CHECK(out.numel() == 1, "grad_check needs a scalar function");
  std::vector<Var<double>> analytic = grad(out, params);
  GradCheckResult res;
  Rng rng(seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Var<double> p = params[pi];
    const Tensor<double>& g = analytic[pi].value();
    if (!g.all_finite()) throw DivergenceError("non-finite gradient in parameter '" + p.name() + "'");
    std::vector<std::int64_t> idx;
    const auto n = p.numel();
    if (max_entries_per_param > 0 && n > max_entries_per_param) {
      for (std::int64_t k = 0; k < max_entries_per_param; ++k) idx.push_back(uniform_int(rng, 0, n - 1));
    } else {
      for (std::int64_t k = 0; k < n; ++k) idx.push_back(k);
    }
    for (auto k : idx) {
      double& w = p.mutable_value()[k];
      const double orig = w;
      double fp, fm;
      // Grad mode stays on: f may itself take gradients (penalty terms).
      w = orig + eps;
      fp = f().value().item();
      w = orig - eps;
      fm = f().value().item();
      w = orig;
      const double fd = (fp - fm) / (2 * eps);
      const double err = std::abs(g[k] - fd) / (std::abs(g[k]) + eps);
      ++res.entries_checked;
      if (err > res.max_rel_error || !std::isfinite(err)) {
        res.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        res.worst_param = p.name().empty() ? "param#" + std::to_string(pi) : p.name();
        res.worst_index = k;
      }
    }
  }
  return res;
}

}  // namespace nvs::ad

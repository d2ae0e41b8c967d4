#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "whilter/error.hpp"
#include "whilter/tensor.hpp"

namespace whilter {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

/// Relative error with a small floor on the denominator so that exact zeros
/// compare by absolute difference.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients of the scalar `loss_fn` against central
/// finite differences for every element of `params`. `loss_fn` must rebuild
/// the graph from the current parameter values on each call.
inline GradCheckResult grad_check(const std::function<Tensor<double>()>& loss_fn,
                                  std::vector<std::pair<std::string, Tensor<double>>> params,
                                  double h = 1e-4) {
  for (auto& [name, p] : params) p.zero_grad();
  Tensor<double> loss = loss_fn();
  if (!std::isfinite(loss.item())) throw NumericError("grad_check: non-finite loss");
  loss.backward();

  GradCheckResult result;
  for (auto& [name, p] : params) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      double plus, minus;
      {
        NoGradGuard guard;
        values[i] = orig + h;
        plus = loss_fn().item();
        values[i] = orig - h;
        minus = loss_fn().item();
        values[i] = orig;
      }
      if (!std::isfinite(plus) || !std::isfinite(minus)) throw NumericError("grad_check: non-finite loss");
      const double numeric = (plus - minus) / (2.0 * h);
      const double err = relative_error(analytic[i], numeric);
      ++result.checked;
      if (err >= result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_param = name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace whilter

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "handocc/nn.hpp"

namespace handocc::testing {

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double max_relative_error = 0.0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps parameters whose true
/// gradient is (numerically) zero from being judged on rounding noise alone.
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares the analytic gradient of `loss` with central differences for
/// every `stride`-th parameter of `mlp`. A parameter that misses the
/// tolerance is re-checked at h/10 and 10h and judged on the best of the
/// three: a ReLU switching inside the interval spoils the estimate at large
/// steps, cancellation spoils tiny gradients at small steps, and a wrong
/// analytic gradient stays wrong at all of them. `loss(grads)` evaluates the loss at
/// the current parameters and, when grads is non-null, accumulates its
/// analytic gradient there.
template <typename LossFn>
GradCheckResult check_gradients(nn::Mlp& mlp, LossFn&& loss, double h = 1e-5, double tolerance = 1e-4,
                                double floor = 1e-7, std::size_t stride = 1) {
  auto grads = mlp.zero_gradients();
  loss(&grads);
  const std::vector<double> analytic = nn::flatten(grads);
  GradCheckResult result;
  std::size_t index = 0;
  mlp.for_each_parameter([&](double& p) {
    const std::size_t i = index++;
    if (i % stride != 0) return;
    const double saved = p;
    auto central = [&](double step) {
      p = saved + step;
      const double up = loss(nullptr);
      p = saved - step;
      const double down = loss(nullptr);
      p = saved;
      return (up - down) / (2.0 * step);
    };
    double err = relative_error(analytic[i], central(h), floor);
    if (err > tolerance) {
      err = std::min({err, relative_error(analytic[i], central(0.1 * h), floor),
                      relative_error(analytic[i], central(10.0 * h), floor)});
    }
    ++result.checked;
    result.max_relative_error = std::max(result.max_relative_error, err);
    if (err > tolerance) ++result.failed;
  });
  return result;
}

}  // namespace handocc::testing

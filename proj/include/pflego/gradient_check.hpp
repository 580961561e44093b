#pragma once

#include <cmath>
#include <functional>

#include "pflego/errors.hpp"
#include "pflego/param_vector.hpp"

namespace pflego {

// Central-difference check of an analytic gradient, coordinate by
// coordinate. Returns the worst relative error, where the relative error of
// analytic a against numeric b uses denominator max(|a|, |b|, 1e-8); the
// caller asserts its own threshold.
//
// Central differences carry roundoff noise of roughly eps * |f| / h, so on
// large models some correct coordinates are smaller than the noise itself.
// A nonzero absolute_floor exempts coordinates whose absolute disagreement
// stays below it; the default keeps the strict all-coordinates behavior.
inline double finite_difference_check(
    const std::function<double(const ParamVector&)>& loss_fn,
    const ParamVector& params, const ParamVector& analytic, double h,
    double absolute_floor = 0.0) {
  if (h <= 0.0) throw InputError("finite_difference_check: h must be > 0");
  require_same_layout(params, analytic, "finite_difference_check");

  double worst = 0.0;
  ParamVector probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double f_plus = loss_fn(probe);
    probe[i] = saved - h;
    const double f_minus = loss_fn(probe);
    probe[i] = saved;

    const double numeric = (f_plus - f_minus) / (2.0 * h);
    const double abs_err = std::abs(analytic[i] - numeric);
    if (abs_err <= absolute_floor) continue;
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, abs_err / denom);
  }
  return worst;
}

}  // namespace pflego

#pragma once

#include <cmath>
#include <cstdint>

#include "pflego/errors.hpp"
#include "pflego/param_vector.hpp"

namespace pflego {

// params - rate * grad. The input is left untouched; the result must be
// finite or the step is rejected as a numeric error.
inline ParamVector gd_step(const ParamVector& params, const ParamVector& grad,
                           double rate) {
  require_same_layout(params, grad, "gd_step");
  if (rate <= 0.0) throw ConfigError("gd_step: rate must be > 0");
  ParamVector out = axpy(params, -rate, grad);
  require_finite(out, "gd_step");
  return out;
}

// Adam with bias correction. Moments share the tracked parameter layout.
struct AdamState {
  ParamVector m;  // first moment
  ParamVector v;  // second moment
  std::uint64_t t = 0;
  double base_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState init(const ParamVector& like, double rate) {
    AdamState s;
    s.m = ParamVector(like.shapes());
    s.v = ParamVector(like.shapes());
    s.base_rate = rate;
    return s;
  }
};

inline ParamVector adam_step(AdamState& state, const ParamVector& params,
                             const ParamVector& grad) {
  require_same_layout(params, grad, "adam_step");
  require_same_layout(state.m, params, "adam_step");

  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));

  ParamVector out = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    out[i] -= state.base_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
  require_finite(out, "adam_step");
  return out;
}

enum class RateMode { Constant, RobbinsMonro };

// Server-side learning rate across rounds. RobbinsMonro yields rho0/t,
// whose sum diverges while the sum of squares converges.
struct LrSchedule {
  RateMode mode = RateMode::Constant;
  double rho0 = 0.001;

  double at(std::uint64_t round) const {  // rounds are 1-based
    if (mode == RateMode::Constant) return rho0;
    return rho0 / static_cast<double>(round);
  }
};

}  // namespace pflego

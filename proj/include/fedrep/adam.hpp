#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fedrep/errors.hpp"

namespace fedrep {

// Bias-corrected Adam. Moments always match the length of the parameter
// vector they track; step_count advances by exactly one per update.
struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::int64_t step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n)
      : first_moment(n, 0.0), second_moment(n, 0.0) {}
};

inline void adam_step(std::vector<double>& params,
                      const std::vector<double>& grad, AdamState& state,
                      double lr) {
  if (lr <= 0.0) throw ConfigError("adam_step: lr must be positive");
  if (grad.size() != params.size() ||
      state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size())
    throw ConfigError("adam_step: length mismatch between params (" +
                      std::to_string(params.size()) + "), grad (" +
                      std::to_string(grad.size()) + ") and state");
  for (double g : grad)
    if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * grad[i];
    v = state.beta2 * v + (1.0 - state.beta2) * grad[i] * grad[i];
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

}  // namespace fedrep

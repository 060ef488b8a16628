// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#include "nutime/optim.hpp"

#include <cmath>
#include <numbers>

#include "nutime/errors.hpp"

namespace nutime {

template <typename T>
void adamw_step(ParamStore<T>& params, const GradientSet<T>& grads, OptimizerState<T>& state, double lr) {
  if (lr < 0.0) throw UsageError("adamw_step: negative learning rate");
  for (const auto& [name, g] : grads) {
    if (g.shape() != params.value(name).shape()) {
      throw UsageError("adamw_step: gradient shape mismatch for " + name);
    }
  }
  ++state.step;
  const AdamWConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    Tensor<T>& p = params.mutable_value(name);
    auto [mit, m_new] = state.first_moment.try_emplace(name, p.shape(), T(0));
    auto [vit, v_new] = state.second_moment.try_emplace(name, p.shape(), T(0));
    Tensor<T>& m = mit->second;
    Tensor<T>& v = vit->second;
    if (m.shape() != p.shape() || v.shape() != p.shape()) {
      throw UsageError("adamw_step: moment shape mismatch for " + name);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
      p[i] = static_cast<T>(p[i] - lr * c.weight_decay * p[i] - lr * update);
    }
  }
}

template void adamw_step<float>(ParamStore<float>&, const GradientSet<float>&, OptimizerState<float>&, double);
template void adamw_step<double>(ParamStore<double>&, const GradientSet<double>&, OptimizerState<double>&, double);

std::int64_t LrSchedule::warmup_steps() const {
  return static_cast<std::int64_t>(std::llround(warmup_epochs * static_cast<double>(steps_per_epoch)));
}

std::int64_t LrSchedule::total_steps() const {
  return static_cast<std::int64_t>(std::llround(total_epochs * static_cast<double>(steps_per_epoch)));
}

void LrSchedule::validate() const {
  if (base_lr < 0.0) throw UsageError("lr schedule: negative base_lr");
  if (steps_per_epoch < 1) throw UsageError("lr schedule: steps_per_epoch must be >= 1");
  if (warmup_epochs < 0.0 || warmup_epochs > total_epochs) {
    throw UsageError("lr schedule: require 0 <= warmup_epochs <= total_epochs");
  }
}

double lr_at(const LrSchedule& s, std::int64_t step) {
  s.validate();
  const std::int64_t warm = s.warmup_steps();
  const std::int64_t total = s.total_steps();
  if (step < 0 || step > total) {
    throw UsageError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  }
  if (warm > 0 && step <= warm) return s.base_lr * static_cast<double>(step) / static_cast<double>(warm);
  if (total == warm) return s.base_lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(total - warm);
  return std::max(0.0, s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

}  // namespace nutime

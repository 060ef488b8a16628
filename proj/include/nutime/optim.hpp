// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The NuTime Authors

#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "nutime/autograd.hpp"

namespace nutime {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// First/second moment estimates per parameter plus the step counter.
template <typename T>
struct OptimizerState {
  AdamWConfig config;
  std::int64_t step = 0;
  std::map<std::string, Tensor<T>> first_moment;
  std::map<std::string, Tensor<T>> second_moment;
};

/// One AdamW update with decoupled weight decay:
///   p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)
/// Parameters absent from `grads` are left untouched and do not advance
/// their moments.
template <typename T>
void adamw_step(ParamStore<T>& params, const GradientSet<T>& grads, OptimizerState<T>& state, double lr);

/// Linear warmup from 0 to `base_lr`, then half-cosine decay to 0.
struct LrSchedule {
  double base_lr = 1e-3;
  double warmup_epochs = 10;
  double total_epochs = 100;
  std::int64_t steps_per_epoch = 1;

  std::int64_t warmup_steps() const;
  std::int64_t total_steps() const;
  void validate() const;
};

double lr_at(const LrSchedule& schedule, std::int64_t step);

}  // namespace nutime

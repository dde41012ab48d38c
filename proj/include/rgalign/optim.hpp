// Copyright (c) 2026 rgalign contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>

#include "rgalign/autodiff.hpp"
#include "rgalign/tensor.hpp"

namespace rgalign::diff {

// Linear warm-up followed by linear decay to zero. Step 0 of warm-up has
// effective lr 0.
struct LrSchedule {
  double base_lr = 0.1;
  double warmup_frac = 0.03;
  std::size_t total_steps = 1;

  double at(std::size_t step) const {
    if (total_steps == 0) throw std::invalid_argument("LrSchedule: total_steps == 0");
    const std::size_t warm = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(warmup_frac * total_steps)));
    if (step < warm)
      return base_lr * static_cast<double>(step) / static_cast<double>(warm);
    if (step >= total_steps) return 0.0;
    const std::size_t tail = std::max<std::size_t>(1, total_steps - warm);
    return base_lr * static_cast<double>(total_steps - step) /
           static_cast<double>(tail);
  }
};

// SGD with decoupled weight decay and global-norm clipping. Moment buffers
// exist for forward compatibility but the update rule does not use them.
struct OptimizerState {
  LrSchedule schedule;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  std::map<std::string, Dense> moments;
};

inline void optimizer_step(ParamStore& params, OptimizerState& state,
                           std::size_t step_index) {
  for (const auto& p : params.items())
    if (!p.grad.all_finite())
      throw std::runtime_error("optimizer_step: non-finite gradient in " + p.name);

  double scale = 1.0;
  if (state.clip_norm > 0.0) {
    const double norm = params.grad_norm();
    if (norm > state.clip_norm) scale = state.clip_norm / norm;
  }

  const double lr = state.schedule.at(step_index);
  if (lr < 0.0) throw std::runtime_error("optimizer_step: negative lr");

  for (auto& p : params.items()) {
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      p.value[k] -= lr * state.weight_decay * p.value[k];
      p.value[k] -= lr * scale * p.grad[k];
    }
  }
  params.zero_grads();
}

}  // namespace rgalign::diff

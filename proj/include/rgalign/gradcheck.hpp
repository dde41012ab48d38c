// Copyright (c) 2026 rgalign contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rgalign/autodiff.hpp"

namespace rgalign::diff {

struct GradCheckEntry {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  GradCheckEntry worst;
  std::size_t entries_checked = 0;
};

// Central-difference gradient check. The loss function must rebuild its
// forward pass from the current parameter values on every call and be
// deterministic (dropout and embedding noise off).
inline GradCheckReport grad_check(
    const std::function<Var(Tape&, ParamStore&)>& loss_fn, ParamStore& params,
    double h = 1e-5, double tol = 1e-4) {
  if (h < 1e-7 || h > 1e-3)
    throw std::invalid_argument("grad_check: h must be in [1e-7, 1e-3]");

  const auto eval = [&](ParamStore& ps) {
    Tape t;
    Var loss = loss_fn(t, ps);
    const double v = t.scalar(loss);
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite loss");
    return v;
  };

  params.zero_grads();
  {
    Tape t;
    Var loss = loss_fn(t, params);
    if (!std::isfinite(t.scalar(loss)))
      throw std::runtime_error("grad_check: non-finite loss");
    t.backward(loss);
  }

  GradCheckReport report;
  for (auto& p : params.items()) {
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double saved = p.value[k];
      p.value[k] = saved + h;
      const double up = eval(params);
      p.value[k] = saved - h;
      const double down = eval(params);
      p.value[k] = saved;

      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p.grad[k];
      const double denom =
          std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = GradCheckEntry{p.name, k, analytic, numeric, rel};
      }
    }
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace rgalign::diff

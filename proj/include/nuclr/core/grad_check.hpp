// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <string>

#include "nuclr/core/errors.hpp"
#include "nuclr/core/param_set.hpp"
#include "nuclr/core/tape.hpp"

namespace nuclr {

/// A scalar objective built on a tape from a parameter set.
template <class F, class T>
concept TapeObjective = std::invocable<F&, Tape<T>&, const ParamSet<T>&> &&
                        std::same_as<std::invoke_result_t<F&, Tape<T>&, const ParamSet<T>&>, Var>;

template <class T, class F>
  requires TapeObjective<F, T>
T evaluate_objective(F& f, const ParamSet<T>& params) {
  Tape<T> tape;
  return tape.scalar(f(tape, params));
}

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

/// Compare reverse-mode gradients against central differences with step
/// `step * max(1, |theta|)` for every entry of every parameter. The error per
/// entry is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// Leaves `params` values unchanged and its gradients holding the analytic
/// result.
template <class T, class F>
  requires TapeObjective<F, T>
GradCheckResult grad_check_detailed(F f, ParamSet<T>& params, T step) {
  require(step > T(0), ErrorCode::ConfigError, "grad_check step must be positive");
  {
    const T a = evaluate_objective(f, params);
    const T b = evaluate_objective(f, params);
    require(a == b || (std::isnan(a) && std::isnan(b)), ErrorCode::NondeterministicFunction,
            "objective returned different values at identical parameters");
  }
  params.zero_grad();
  {
    Tape<T> tape;
    Var loss = f(tape, params);
    tape.backward(loss);
    tape.accumulate_param_grads(params);
  }

  GradCheckResult res;
  for (auto& [name, entry] : params) {
    auto theta = entry.value.data();
    auto grad = entry.grad.data();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const T orig = theta[i];
      const T h = step * std::max(T(1), std::abs(orig));
      theta[i] = orig + h;
      const T fp = evaluate_objective(f, params);
      theta[i] = orig - h;
      const T fm = evaluate_objective(f, params);
      theta[i] = orig;
      const double numeric = (static_cast<double>(fp) - static_cast<double>(fm)) / (2.0 * static_cast<double>(h));
      const double analytic = grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double err = std::abs(analytic - numeric) / denom;
      ++res.entries_checked;
      if (err > res.max_relative_error || res.worst_param.empty()) {
        if (err >= res.max_relative_error) {
          res.max_relative_error = err;
          res.worst_param = name;
          res.worst_index = i;
        }
      }
    }
  }
  return res;
}

template <class T, class F>
  requires TapeObjective<F, T>
double grad_check(F f, ParamSet<T>& params, T step) {
  return grad_check_detailed(std::move(f), params, step).max_relative_error;
}

}  // namespace nuclr

// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "nuclr/core/errors.hpp"
#include "nuclr/core/param_set.hpp"

namespace nuclr {

/// Linear warmup over W steps, then cosine decay to zero at step S.
inline double lr_at(std::size_t step, std::size_t warmup, std::size_t total, double max_lr) {
  if (step < warmup) return max_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total <= warmup) return max_lr;
  const double frac = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return max_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay. Moment buffers are created on the
/// first step for every parameter and must keep covering the same names.
template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  std::size_t steps_taken() const { return t_; }

  void step(ParamSet<T>& params, double lr) {
    if (t_ == 0) {
      for (const auto& [name, e] : params) state_.emplace(name, Moments{std::vector<double>(e.value.numel(), 0.0),
                                                                        std::vector<double>(e.value.numel(), 0.0)});
    }
    require(state_.size() == params.size(), ErrorCode::MissingGradient, "optimizer state does not match parameters");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double decay = 1.0 - lr * cfg_.weight_decay;
    for (auto& [name, e] : params) {
      auto it = state_.find(name);
      require(it != state_.end() && it->second.m.size() == e.value.numel(), ErrorCode::MissingGradient,
              "no gradient slot for parameter " + name);
      auto& [m, v] = it->second;
      auto theta = e.value.data();
      auto g = e.grad.data();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = m[i] / bc1, vhat = v[i] / bc2;
        const double th = static_cast<double>(theta[i]) * decay;
        theta[i] = static_cast<T>(th - lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> state_;
};

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class T>
double clip_grad_norm(ParamSet<T>& params, double max_norm) {
  double ss = 0.0;
  for (const auto& [_, e] : params)
    for (T g : e.grad.data()) ss += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(ss);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& [_, e] : params)
      for (auto& g : e.grad.storage()) g *= s;
  }
  return norm;
}

}  // namespace nuclr

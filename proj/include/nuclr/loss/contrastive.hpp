// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "nuclr/core/errors.hpp"
#include "nuclr/core/tape.hpp"
#include "nuclr/core/tensor.hpp"

namespace nuclr {

struct LossConfig {
  double temperature = 0.1;

  void validate() const { require(temperature > 0.0, ErrorCode::ConfigError, "temperature must be positive"); }
};

template <class T>
T cosine_sim(std::span<const T> u, std::span<const T> v) {
  require(u.size() == v.size(), ErrorCode::ShapeMismatch, "cosine_sim length mismatch");
  T uv = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  require(uu > T(0) && vv > T(0), ErrorCode::ZeroVector, "cosine similarity of a zero vector");
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

/// Decoupled symmetric InfoNCE between the projections p1 [N1, D] and
/// p2 [N2, D] of two views, with positives given by `matched`.
template <class T>
Var pair_loss(Tape<T>& tape, Var p1, Var p2, std::span<const MatchedPair> matched, T tau) {
  Var z1 = tape.normalize_rows(p1);
  Var z2 = tape.normalize_rows(p2);
  return tape.dcl_loss(tape.matmul_nt(z1, z1), tape.matmul_nt(z1, z2), tape.matmul_nt(z2, z2), matched, tau);
}

template <class T>
T pair_loss_value(const Tensor<T>& p1, const Tensor<T>& p2, std::span<const MatchedPair> matched, T tau) {
  Tape<T> tape;
  return tape.scalar(pair_loss(tape, tape.constant(p1), tape.constant(p2), matched, tau));
}

struct PairLossTerm {
  double loss = 0.0;
  std::size_t n_b = 0;
};

/// Batch objective: sum_b N_b L_b / sum_b N_b.
inline double batch_loss(std::span<const PairLossTerm> terms) {
  double num = 0.0;
  std::size_t den = 0;
  for (const auto& t : terms) {
    if (t.n_b == 0) continue;
    num += static_cast<double>(t.n_b) * t.loss;
    den += t.n_b;
  }
  require(den > 0, ErrorCode::AllEmpty, "no view pair in the batch has a matched neuron");
  return num / static_cast<double>(den);
}

}  // namespace nuclr

// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

// Naive reference implementations used to cross-check the library.

#pragma once

#include <cmath>
#include <vector>

#include "nuclr/core/tape.hpp"
#include "nuclr/core/tensor.hpp"

namespace nuclr::oracle {

inline double cosine(const Tensor<double>& a, std::size_t i, const Tensor<double>& b, std::size_t j) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    ab += a.at(i, c) * b.at(j, c);
    aa += a.at(i, c) * a.at(i, c);
    bb += b.at(j, c) * b.at(j, c);
  }
  return ab / std::sqrt(aa * bb);
}

inline bool in_matched(const std::vector<MatchedPair>& m, std::size_t a, std::size_t b) {
  for (const auto& p : m)
    if (p.first == a && p.second == b) return true;
  return false;
}

/// Direct evaluation of the decoupled loss with explicit exponentials.
inline double pair_loss(const Tensor<double>& p1, const Tensor<double>& p2, const std::vector<MatchedPair>& matched,
                        double tau) {
  const std::size_t n1 = p1.rows(), n2 = p2.rows();
  double sum1 = 0.0, sum2 = 0.0;
  for (const auto& [n, m] : matched) {
    const double num = std::exp(cosine(p1, n, p2, m) / tau);
    double den = 0.0;
    for (std::size_t k = 0; k < n1; ++k)
      if (k != n) den += std::exp(cosine(p1, n, p1, k) / tau);
    for (std::size_t k = 0; k < n2; ++k)
      if (!in_matched(matched, n, k)) den += std::exp(cosine(p1, n, p2, k) / tau);
    sum1 += -std::log(num / den);

    double den2 = 0.0;
    for (std::size_t k = 0; k < n2; ++k)
      if (k != m) den2 += std::exp(cosine(p2, m, p2, k) / tau);
    for (std::size_t k = 0; k < n1; ++k)
      if (!in_matched(matched, k, m)) den2 += std::exp(cosine(p2, m, p1, k) / tau);
    sum2 += -std::log(num / den2);
  }
  return sum1 / static_cast<double>(matched.size()) + sum2 / static_cast<double>(matched.size());
}

/// Random matched-pair instance: two subsets of a shared neuron universe.
struct LossInstance {
  Tensor<double> p1, p2;
  std::vector<MatchedPair> matched;
};

inline LossInstance random_loss_instance(RngStream& rng, std::size_t max_n = 12, std::size_t max_d = 8) {
  for (;;) {
    const std::size_t universe = 2 + rng.below(max_n - 1);
    const std::size_t d = 1 + rng.below(max_d);
    std::vector<std::size_t> a, b;
    for (std::size_t i = 0; i < universe; ++i) {
      if (rng.uniform() < 0.75) a.push_back(i);
      if (rng.uniform() < 0.75) b.push_back(i);
    }
    LossInstance inst;
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < b.size(); ++j)
        if (a[i] == b[j]) inst.matched.push_back({i, j});
    if (inst.matched.empty() || a.size() + b.size() <= 2) continue;
    inst.p1 = Tensor<double>({a.size(), d});
    inst.p2 = Tensor<double>({b.size(), d});
    for (auto& v : inst.p1.storage()) v = rng.normal();
    for (auto& v : inst.p2.storage()) v = rng.normal();
    return inst;
  }
}

/// Macro-F1 from per-class precision and recall counted directly.
inline double macro_f1(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& truth, std::size_t k) {
  double sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = 0, predicted = 0, actual = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      tp += (pred[i] == c && truth[i] == c);
      predicted += (pred[i] == c);
      actual += (truth[i] == c);
    }
    if (tp == 0) continue;
    const double p = tp / predicted, r = tp / actual;
    sum += 2 * p * r / (p + r);
  }
  return sum / static_cast<double>(k);
}

}  // namespace nuclr::oracle

// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "nuclr/core/errors.hpp"
#include "nuclr/core/kernels.hpp"
#include "nuclr/core/rng.hpp"

namespace nuclr {

struct ProbeOptions {
  double l2 = 1e-3;
  double grad_tol = 1e-6;
  std::size_t max_iter = 5000;
  /// Keep label_ratio of every class (true) or of the whole set (false).
  bool stratified = true;
};

/// Indices kept when subsampling `labels` to `ratio`. Stratified mode keeps
/// round(ratio * n_c), at least one, of each class c.
inline std::vector<std::size_t> subsample_labels(const std::vector<std::size_t>& labels, double ratio,
                                                 bool stratified, RngStream rng) {
  require(ratio > 0.0 && ratio <= 1.0, ErrorCode::ConfigError, "label_ratio must lie in (0, 1]");
  std::vector<std::size_t> keep;
  auto take = [&](std::vector<std::size_t> idx) {
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size()))));
    rng.shuffle(idx);
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(n, idx.size())));
  };
  if (ratio >= 1.0) {
    keep.resize(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) keep[i] = i;
    return keep;
  }
  if (stratified) {
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    for (auto& [_, idx] : by_class) take(std::move(idx));
  } else {
    std::vector<std::size_t> all(labels.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    take(std::move(all));
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

/// Multinomial logistic regression on standardized features.
struct LinearProbe {
  std::size_t n_classes = 0;
  std::size_t dim = 0;
  std::vector<double> mean, scale;
  std::vector<double> weights;  // [n_classes, dim]
  std::vector<double> bias;     // [n_classes]
  std::size_t iterations = 0;
  double final_grad_norm = 0.0;

  std::vector<double> logits(const std::vector<double>& x) const {
    std::vector<double> z(bias);
    for (std::size_t c = 0; c < n_classes; ++c)
      for (std::size_t j = 0; j < dim; ++j) z[c] += weights[c * dim + j] * (x[j] - mean[j]) / scale[j];
    return z;
  }

  std::size_t predict(const std::vector<double>& x) const {
    const auto z = logits(x);
    return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
  }
};

/// Full-batch gradient descent on mean cross-entropy + (l2/2)||W||^2 with
/// step 1/L, L = lambda_max(X^T X / n) / 2 + l2 for the bias-augmented X.
inline LinearProbe fit_probe(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& y,
                             std::size_t n_classes, const ProbeOptions& opt = {}) {
  require(!x.empty() && x.size() == y.size(), ErrorCode::ShapeMismatch, "probe needs one label per sample");
  std::vector<bool> present(n_classes, false);
  for (auto c : y) {
    require(c < n_classes, ErrorCode::IndexOutOfRange, "label outside the class set");
    present[c] = true;
  }
  require(std::count(present.begin(), present.end(), true) >= 2, ErrorCode::SingleClass,
          "probe training set holds fewer than 2 classes");
  const std::size_t n = x.size(), d = x[0].size();
  LinearProbe p;
  p.n_classes = n_classes;
  p.dim = d;
  p.mean.assign(d, 0.0);
  p.scale.assign(d, 0.0);
  for (const auto& r : x) {
    require(r.size() == d, ErrorCode::ShapeMismatch, "ragged probe features");
    for (std::size_t j = 0; j < d; ++j) p.mean[j] += r[j] / static_cast<double>(n);
  }
  for (const auto& r : x)
    for (std::size_t j = 0; j < d; ++j) p.scale[j] += (r[j] - p.mean[j]) * (r[j] - p.mean[j]) / static_cast<double>(n);
  for (auto& s : p.scale) s = s > 1e-24 ? std::sqrt(s) : 1.0;
  // Standardized design matrix with a trailing bias column.
  const std::size_t da = d + 1;
  std::vector<double> z(n * da);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) z[i * da + j] = (x[i][j] - p.mean[j]) / p.scale[j];
    z[i * da + d] = 1.0;
  }
  // Power iteration for the largest eigenvalue of Z^T Z / n.
  std::vector<double> v(da, 1.0 / std::sqrt(static_cast<double>(da))), zv(n), w(da);
  double lam = 1.0;
  for (int it = 0; it < 100; ++it) {
    kernels::gemm(z.data(), v.data(), zv.data(), n, da, 1, false, false, false);
    kernels::gemm(z.data(), zv.data(), w.data(), da, n, 1, true, false, false);
    double norm = 0.0;
    for (double& e : w) norm += (e /= static_cast<double>(n)) * e;
    norm = std::sqrt(norm);
    if (norm <= 0.0) break;
    lam = norm;
    for (std::size_t j = 0; j < da; ++j) v[j] = w[j] / norm;
  }
  const double step = 1.0 / (0.5 * lam * 1.01 + opt.l2);

  std::vector<double> theta(n_classes * da, 0.0), grad(n_classes * da), logits(n * n_classes);
  for (std::size_t iter = 0; iter < opt.max_iter; ++iter) {
    kernels::gemm(z.data(), theta.data(), logits.data(), n, da, n_classes, false, true, false);
    kernels::softmax_rows(logits.data(), n, n_classes);
    for (std::size_t i = 0; i < n; ++i) logits[i * n_classes + y[i]] -= 1.0;
    kernels::gemm(logits.data(), z.data(), grad.data(), n_classes, n, da, true, false, false);
    double gn = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c)
      for (std::size_t j = 0; j < da; ++j) {
        double& g = grad[c * da + j];
        g /= static_cast<double>(n);
        if (j < d) g += opt.l2 * theta[c * da + j];
        gn += g * g;
      }
    p.final_grad_norm = std::sqrt(gn);
    p.iterations = iter;
    if (p.final_grad_norm < opt.grad_tol) break;
    for (std::size_t k = 0; k < theta.size(); ++k) theta[k] -= step * grad[k];
    p.iterations = iter + 1;
  }
  p.weights.resize(n_classes * d);
  p.bias.resize(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t j = 0; j < d; ++j) p.weights[c * d + j] = theta[c * da + j];
    p.bias[c] = theta[c * da + d];
  }
  return p;
}

}  // namespace nuclr

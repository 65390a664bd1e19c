// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "nuclr/core/errors.hpp"

namespace nuclr {

/// confusion[i][j] = count of true class i predicted as class j.
inline std::vector<std::vector<std::size_t>> confusion_matrix(const std::vector<std::size_t>& predictions,
                                                              const std::vector<std::size_t>& labels,
                                                              std::size_t n_classes) {
  require(predictions.size() == labels.size(), ErrorCode::ShapeMismatch, "predictions and labels differ in length");
  std::vector<std::vector<std::size_t>> cm(n_classes, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < n_classes && predictions[i] < n_classes, ErrorCode::IndexOutOfRange,
            "class index outside the class set");
    ++cm[labels[i]][predictions[i]];
  }
  return cm;
}

/// F1 = 2TP / (2TP + FP + FN) per class; 0 when the class is neither
/// predicted nor present.
inline std::vector<double> per_class_f1(const std::vector<std::vector<std::size_t>>& cm) {
  const std::size_t k = cm.size();
  std::vector<double> f1(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t fp = 0, fn = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == c) continue;
      fn += cm[c][j];
      fp += cm[j][c];
    }
    const double tp2 = 2.0 * static_cast<double>(cm[c][c]);
    const double den = tp2 + static_cast<double>(fp + fn);
    f1[c] = den > 0.0 ? tp2 / den : 0.0;
  }
  return f1;
}

inline double macro_f1(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& labels,
                       std::size_t n_classes) {
  const auto f1 = per_class_f1(confusion_matrix(predictions, labels, n_classes));
  double s = 0.0;
  for (double v : f1) s += v;
  return n_classes ? s / static_cast<double>(n_classes) : 0.0;
}

}  // namespace nuclr

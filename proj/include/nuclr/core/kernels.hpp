// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

// Raw-span compute kernels shared by the forward-only ops and the tape.
// All matrices are row-major.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

namespace nuclr::kernels {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

/// C (+)= op(A) * op(B), with op(A) of shape [m,k] and op(B) of shape [k,n].
template <class T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool trans_a,
          bool trans_b, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
             N = static_cast<Eigen::Index>(n);
  MapMat<T> C(c, M, N);
  if (!accumulate) C.setZero();
  if (!trans_a && !trans_b) C.noalias() += CMapMat<T>(a, M, K) * CMapMat<T>(b, K, N);
  else if (trans_a && !trans_b) C.noalias() += CMapMat<T>(a, K, M).transpose() * CMapMat<T>(b, K, N);
  else if (!trans_a && trans_b) C.noalias() += CMapMat<T>(a, M, K) * CMapMat<T>(b, N, K).transpose();
  else C.noalias() += CMapMat<T>(a, K, M).transpose() * CMapMat<T>(b, N, K).transpose();
}

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

/// d/dx GELU(x) = Phi(x) + x * phi(x).
template <class T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(T(-0.5) * x * x) * (std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>);
  return cdf + x * pdf;
}

/// In-place softmax of each length-n row (max-subtracted).
template <class T>
void softmax_rows(T* x, std::size_t rows, std::size_t n) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = x + r * n;
    const T mx = *std::max_element(row, row + n);
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  }
}

/// log(sum(exp(x))) over a list of values; -inf for an empty list.
template <class T>
T logsumexp(std::span<const T> x) {
  if (x.empty()) return -std::numeric_limits<T>::infinity();
  const T mx = *std::max_element(x.begin(), x.end());
  T sum = 0;
  for (T v : x) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

/// Per-row LayerNorm. Stores mean and 1/sqrt(var+eps) per row when the
/// stash pointers are non-null.
template <class T>
void layer_norm(const T* x, const T* gamma, const T* beta, T* out, std::size_t rows, std::size_t d, T eps,
                T* mean_out = nullptr, T* rstd_out = nullptr) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(d);
    const T rstd = T(1) / std::sqrt(var + eps);
    T* o = out + r * d;
    for (std::size_t j = 0; j < d; ++j) o[j] = (xr[j] - mean) * rstd * gamma[j] + beta[j];
    if (mean_out) mean_out[r] = mean;
    if (rstd_out) rstd_out[r] = rstd;
  }
}

/// cos/sin tables for rotary time embeddings, shape [length, pairs].
/// Pair i turns at angular frequency 2*pi / period_i with periods spaced
/// geometrically from t_min to t_max. Angles are evaluated in double so that
/// large absolute timestamps do not lose precision at f32.
template <class T>
struct RotaryTable {
  std::size_t length = 0;
  std::size_t pairs = 0;
  std::vector<T> cos;
  std::vector<T> sin;

  static std::vector<double> periods(std::size_t pairs, double t_min, double t_max) {
    std::vector<double> out(pairs);
    for (std::size_t i = 0; i < pairs; ++i) {
      const double frac = pairs > 1 ? static_cast<double>(i) / static_cast<double>(pairs - 1) : 0.0;
      out[i] = t_min * std::pow(t_max / t_min, frac);
    }
    return out;
  }

  static RotaryTable build(std::span<const double> timestamps, std::size_t head_dim, double t_min, double t_max) {
    RotaryTable tab;
    tab.length = timestamps.size();
    tab.pairs = head_dim / 2;
    tab.cos.resize(tab.length * tab.pairs);
    tab.sin.resize(tab.length * tab.pairs);
    const auto per = periods(tab.pairs, t_min, t_max);
    for (std::size_t l = 0; l < tab.length; ++l) {
      for (std::size_t i = 0; i < tab.pairs; ++i) {
        // Reduce t modulo the period before scaling so the angle stays small.
        const double phase = std::fmod(timestamps[l], per[i]) / per[i];
        const double angle = 2.0 * std::numbers::pi * phase;
        tab.cos[l * tab.pairs + i] = static_cast<T>(std::cos(angle));
        tab.sin[l * tab.pairs + i] = static_cast<T>(std::sin(angle));
      }
    }
    return tab;
  }
};

/// Rotate consecutive pairs of a d-vector by the table row `l`. With
/// `inverse`, rotates by the negative angle.
template <class T>
void rotate_pairs(const T* in, T* out, const RotaryTable<T>& tab, std::size_t l, bool inverse) {
  const T* c = tab.cos.data() + l * tab.pairs;
  const T* s = tab.sin.data() + l * tab.pairs;
  for (std::size_t i = 0; i < tab.pairs; ++i) {
    const T x = in[2 * i], y = in[2 * i + 1];
    const T sn = inverse ? -s[i] : s[i];
    out[2 * i] = x * c[i] - y * sn;
    out[2 * i + 1] = x * sn + y * c[i];
  }
}

}  // namespace nuclr::kernels

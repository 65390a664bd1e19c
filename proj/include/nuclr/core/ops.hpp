// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

// Forward-only tensor operations on whole Tensors. The differentiable
// versions live on Tape; both share the kernels in kernels.hpp.

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "nuclr/core/errors.hpp"
#include "nuclr/core/kernels.hpp"
#include "nuclr/core/tensor.hpp"

namespace nuclr::ops {

/// Batched matrix product [..,M,K] x [..,K,N] with numpy-style broadcasting
/// of the leading dimensions.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() >= 2 && b.rank() >= 2, ErrorCode::ShapeMismatch, "matmul needs rank >= 2");
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t k2 = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  require(k == k2, ErrorCode::ShapeMismatch, "matmul inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));

  const Shape ab(a.shape().begin(), a.shape().end() - 2);
  const Shape bb(b.shape().begin(), b.shape().end() - 2);
  const std::size_t rank = std::max(ab.size(), bb.size());
  Shape batch(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i + ab.size() >= rank ? ab[i + ab.size() - rank] : 1;
    const std::size_t db = i + bb.size() >= rank ? bb[i + bb.size() - rank] : 1;
    require(da == db || da == 1 || db == 1, ErrorCode::ShapeMismatch,
            "matmul batch dims not broadcastable: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    batch[i] = std::max(da, db);
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out(out_shape);

  const std::size_t nb = shape_numel(batch);
  std::vector<std::size_t> idx(rank);
  for (std::size_t flat = 0; flat < nb; ++flat) {
    std::size_t rem = flat;
    for (std::size_t i = rank; i-- > 0;) {
      idx[i] = rem % batch[i];
      rem /= batch[i];
    }
    auto offset = [&](const Shape& s) {
      std::size_t off = 0;
      for (std::size_t i = 0; i < s.size(); ++i) {
        const std::size_t bi = idx[i + rank - s.size()];
        off = off * s[i] + (s[i] == 1 ? 0 : bi);
      }
      return off;
    };
    kernels::gemm(a.data().data() + offset(ab) * m * k, b.data().data() + offset(bb) * k * n,
                  out.data().data() + flat * m * n, m, k, n, false, false, false);
  }
  return out;
}

template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  Tensor<T> out = x;
  kernels::softmax_rows(out.data().data(), x.rows(), x.cols());
  return out;
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  require(eps > T(0), ErrorCode::ConfigError, "layer_norm eps must be positive");
  require(gamma.numel() == x.cols() && beta.numel() == x.cols(), ErrorCode::ShapeMismatch, "layer_norm affine size");
  Tensor<T> out(x.shape());
  kernels::layer_norm(x.data().data(), gamma.data().data(), beta.data().data(), out.data().data(), x.rows(), x.cols(),
                      eps);
  return out;
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.storage()) v = kernels::gelu(v);
  return out;
}

template <class T>
struct GegluWeights {
  Tensor<T> w_a, b_a;      // D x 4D, 4D
  Tensor<T> w_b, b_b;      // D x 4D, 4D
  Tensor<T> w_out, b_out;  // 4D x D, D
};

/// W_out * (GELU(x W_a + b_a) * (x W_b + b_b)) + b_out, row-wise.
template <class T>
Tensor<T> geglu_ffn(const Tensor<T>& x, const GegluWeights<T>& p) {
  const std::size_t d = x.cols(), rows = x.rows();
  require(p.w_a.rank() == 2 && p.w_a.dim(0) == d, ErrorCode::ShapeMismatch, "geglu W_a " + shape_str(p.w_a.shape()));
  const std::size_t h = p.w_a.dim(1);
  require(p.w_b.shape() == p.w_a.shape() && p.b_a.numel() == h && p.b_b.numel() == h, ErrorCode::ShapeMismatch,
          "geglu gate weights");
  require(p.w_out.rank() == 2 && p.w_out.dim(0) == h && p.b_out.numel() == p.w_out.dim(1), ErrorCode::ShapeMismatch,
          "geglu output weights");
  const std::size_t dout = p.w_out.dim(1);
  std::vector<T> u(rows * h), g(rows * h);
  kernels::gemm(x.data().data(), p.w_a.data().data(), u.data(), rows, d, h, false, false, false);
  kernels::gemm(x.data().data(), p.w_b.data().data(), g.data(), rows, d, h, false, false, false);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < h; ++c)
      u[r * h + c] = kernels::gelu(u[r * h + c] + p.b_a[c]) * (g[r * h + c] + p.b_b[c]);
  Shape os = x.shape();
  os.back() = dout;
  Tensor<T> out(os);
  kernels::gemm(u.data(), p.w_out.data().data(), out.data().data(), rows, h, dout, false, false, false);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < dout; ++c) out.data()[r * dout + c] += p.b_out[c];
  return out;
}

/// softmax(Q K^T / sqrt(d)) V for each leading index of [.., H, L, d]
/// tensors. No masking.
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v) {
  require(q.rank() >= 2 && q.shape() == k.shape() && q.shape() == v.shape(), ErrorCode::ShapeMismatch,
          "attention q/k/v shapes");
  const std::size_t d = q.dim(q.rank() - 1), L = q.dim(q.rank() - 2);
  require(d >= 2 && d % 2 == 0, ErrorCode::OddHeadDim, "head dim must be even and >= 2");
  const std::size_t blocks = q.numel() / (L * d);
  Tensor<T> out(q.shape());
  std::vector<T> s(L * L);
  const T scale = T(1) / std::sqrt(T(d));
  for (std::size_t b = 0; b < blocks; ++b) {
    const T* pq = q.data().data() + b * L * d;
    const T* pk = k.data().data() + b * L * d;
    const T* pv = v.data().data() + b * L * d;
    kernels::gemm(pq, pk, s.data(), L, d, L, false, true, false);
    for (auto& x : s) x *= scale;
    kernels::softmax_rows(s.data(), L, L);
    kernels::gemm(s.data(), pv, out.data().data() + b * L * d, L, L, d, false, false, false);
  }
  return out;
}

/// Rotate each (2i, 2i+1) pair of the last dimension of [heads, L, d] by the
/// angle 2*pi*t/T_i of its token's timestamp, with T_i geometric from t_min
/// to t_max.
template <class T>
Tensor<T> rotary_rotate(const Tensor<T>& x, std::span<const double> timestamps, double t_min, double t_max) {
  require(x.rank() >= 2, ErrorCode::ShapeMismatch, "rotary_rotate needs [.., L, d]");
  const std::size_t d = x.dim(x.rank() - 1), L = x.dim(x.rank() - 2);
  require(d % 2 == 0, ErrorCode::OddHeadDim, "rotary needs an even head dim, got " + std::to_string(d));
  require(timestamps.size() == L, ErrorCode::ShapeMismatch, "one timestamp per token required");
  const auto tab = kernels::RotaryTable<T>::build(timestamps, d, t_min, t_max);
  Tensor<T> out(x.shape());
  const std::size_t blocks = x.numel() / (L * d);
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t off = (b * L + l) * d;
      kernels::rotate_pairs(x.data().data() + off, out.data().data() + off, tab, l, false);
    }
  return out;
}

}  // namespace nuclr::ops

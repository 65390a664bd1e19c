// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode differentiation over the small set of primitives the encoder
// and loss need. A Tape records one forward evaluation; backward() may run
// once per tape.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nuclr/core/errors.hpp"
#include "nuclr/core/kernels.hpp"
#include "nuclr/core/param_set.hpp"
#include "nuclr/core/rng.hpp"
#include "nuclr/core/tensor.hpp"

namespace nuclr {

struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

/// Row layout of grouped self-attention over an [M, D] token matrix: member i
/// of group g sits at row g * group_stride + i * member_stride.
struct AttentionLayout {
  std::size_t groups = 1;
  std::size_t length = 1;
  std::size_t group_stride = 1;
  std::size_t member_stride = 1;

  std::size_t row(std::size_t g, std::size_t i) const { return g * group_stride + i * member_stride; }
};

/// One matched neuron pair: row in view 1, row in view 2.
struct MatchedPair {
  std::size_t first = 0;
  std::size_t second = 0;
  friend bool operator==(const MatchedPair&, const MatchedPair&) = default;
};

template <class T>
class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ---- leaves ----------------------------------------------------------

  Var constant(Tensor<T> t) { return push(t.shape(), std::move(t.storage()), false); }
  Var input(Tensor<T> t) { return push(t.shape(), std::move(t.storage()), true); }

  /// Bind a named parameter. The tape reads `value` in place, so it must
  /// outlive the tape. Binding the same name twice returns the same Var.
  Var param(const std::string& name, const Tensor<T>& value) {
    if (auto it = params_.find(name); it != params_.end()) return it->second;
    Node n;
    n.shape = value.shape();
    n.ext = value.data().data();
    n.requires_grad = true;
    n.param_name = name;
    nodes_.push_back(std::move(n));
    Var v{static_cast<std::uint32_t>(nodes_.size() - 1)};
    params_.emplace(name, v);
    return v;
  }

  Var param(const ParamSet<T>& ps, const std::string& name) { return param(name, ps.value(name)); }

  // ---- access ----------------------------------------------------------

  const Shape& shape(Var v) const { return nodes_.at(v.id).shape; }
  std::size_t numel(Var v) const { return shape_numel(shape(v)); }
  std::span<const T> value(Var v) const { return {val(v.id), numel(v)}; }
  Tensor<T> tensor(Var v) const {
    auto s = value(v);
    return Tensor<T>(shape(v), std::vector<T>(s.begin(), s.end()));
  }
  T scalar(Var v) const {
    require(numel(v) == 1, ErrorCode::ShapeMismatch, "scalar() on " + shape_str(shape(v)));
    return val(v.id)[0];
  }
  /// Gradient of the last backward() target w.r.t. v (zeros if unreached).
  Tensor<T> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) return Tensor<T>(n.shape);
    return Tensor<T>(n.shape, n.grad);
  }
  std::size_t size() const { return nodes_.size(); }
  bool used() const { return used_; }

  // ---- primitives ------------------------------------------------------

  /// [M,K] x [K,N].
  Var matmul(Var a, Var b) {
    const auto [m, k] = mat_dims(a);
    const auto [k2, n] = mat_dims(b);
    require(k == k2, ErrorCode::ShapeMismatch, "matmul inner dims " + shape_str(shape(a)) + " x " + shape_str(shape(b)));
    std::vector<T> out(m * n);
    kernels::gemm(val(a.id), val(b.id), out.data(), m, k, n, false, false, false);
    Var o = push({m, n}, std::move(out), rg(a) || rg(b));
    set_back(o, [this, a, b, o, m, k, n] {
      const T* g = gbuf(o.id);
      if (rg(a)) kernels::gemm(g, val(b.id), gref(a.id), m, n, k, false, true, true);
      if (rg(b)) kernels::gemm(val(a.id), g, gref(b.id), k, m, n, true, false, true);
    });
    return o;
  }

  /// [M,D] x [N,D]^T -> [M,N].
  Var matmul_nt(Var a, Var b) {
    const auto [m, d] = mat_dims(a);
    const auto [n, d2] = mat_dims(b);
    require(d == d2, ErrorCode::ShapeMismatch, "matmul_nt dims " + shape_str(shape(a)) + " x " + shape_str(shape(b)));
    std::vector<T> out(m * n);
    kernels::gemm(val(a.id), val(b.id), out.data(), m, d, n, false, true, false);
    Var o = push({m, n}, std::move(out), rg(a) || rg(b));
    set_back(o, [this, a, b, o, m, d, n] {
      const T* g = gbuf(o.id);
      if (rg(a)) kernels::gemm(g, val(b.id), gref(a.id), m, n, d, false, false, true);
      if (rg(b)) kernels::gemm(g, val(a.id), gref(b.id), n, m, d, true, false, true);
    });
    return o;
  }

  /// x[..,K] * W[K,N] + bias[N]; bias may be an invalid Var.
  Var linear(Var x, Var w, Var bias = {}) {
    const std::size_t k = shape(x).back();
    const std::size_t m = numel(x) / k;
    const auto [k2, n] = mat_dims(w);
    require(k == k2, ErrorCode::ShapeMismatch, "linear: input " + shape_str(shape(x)) + " weight " + shape_str(shape(w)));
    if (bias.valid()) require(numel(bias) == n, ErrorCode::ShapeMismatch, "linear: bias " + shape_str(shape(bias)));
    std::vector<T> out(m * n);
    kernels::gemm(val(x.id), val(w.id), out.data(), m, k, n, false, false, false);
    if (bias.valid()) {
      const T* b = val(bias.id);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) out[r * n + c] += b[c];
    }
    Shape os = shape(x);
    os.back() = n;
    Var o = push(std::move(os), std::move(out), rg(x) || rg(w) || (bias.valid() && rg(bias)));
    set_back(o, [this, x, w, bias, o, m, k, n] {
      const T* g = gbuf(o.id);
      if (rg(x)) kernels::gemm(g, val(w.id), gref(x.id), m, n, k, false, true, true);
      if (rg(w)) kernels::gemm(val(x.id), g, gref(w.id), k, m, n, true, false, true);
      if (bias.valid() && rg(bias)) {
        T* gb = gref(bias.id);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
      }
    });
    return o;
  }

  Var add(Var a, Var b) {
    require(shape(a) == shape(b), ErrorCode::ShapeMismatch, "add " + shape_str(shape(a)) + " + " + shape_str(shape(b)));
    const std::size_t n = numel(a);
    std::vector<T> out(n);
    const T *pa = val(a.id), *pb = val(b.id);
    for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
    Var o = push(shape(a), std::move(out), rg(a) || rg(b));
    set_back(o, [this, a, b, o, n] {
      const T* g = gbuf(o.id);
      for (Var in : {a, b}) {
        if (!rg(in)) continue;
        T* gi = gref(in.id);
        for (std::size_t i = 0; i < n; ++i) gi[i] += g[i];
      }
    });
    return o;
  }

  /// Elementwise product.
  Var mul(Var a, Var b) {
    require(shape(a) == shape(b), ErrorCode::ShapeMismatch, "mul " + shape_str(shape(a)) + " * " + shape_str(shape(b)));
    const std::size_t n = numel(a);
    std::vector<T> out(n);
    const T *pa = val(a.id), *pb = val(b.id);
    for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
    Var o = push(shape(a), std::move(out), rg(a) || rg(b));
    set_back(o, [this, a, b, o, n] {
      const T* g = gbuf(o.id);
      if (rg(a)) {
        T* ga = gref(a.id);
        const T* pb = val(b.id);
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
      }
      if (rg(b)) {
        T* gb = gref(b.id);
        const T* pa = val(a.id);
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
      }
    });
    return o;
  }

  Var scale(Var a, T s) {
    return unary(a, [s](T x) { return x * s; }, [s](T) { return s; });
  }

  Var sin(Var a) {
    return unary(a, [](T x) { return std::sin(x); }, [](T x) { return std::cos(x); });
  }

  Var gelu(Var a) { return unary(a, kernels::gelu<T>, kernels::gelu_grad<T>); }

  /// GELU(u) * g elementwise (the GEGLU gate).
  Var geglu(Var u, Var g) {
    require(shape(u) == shape(g), ErrorCode::ShapeMismatch, "geglu gate shapes differ");
    const std::size_t n = numel(u);
    std::vector<T> out(n);
    const T *pu = val(u.id), *pg = val(g.id);
    for (std::size_t i = 0; i < n; ++i) out[i] = kernels::gelu(pu[i]) * pg[i];
    Var o = push(shape(u), std::move(out), rg(u) || rg(g));
    set_back(o, [this, u, g, o, n] {
      const T* go = gbuf(o.id);
      const T *pu = val(u.id), *pg = val(g.id);
      if (rg(u)) {
        T* gu = gref(u.id);
        for (std::size_t i = 0; i < n; ++i) gu[i] += go[i] * pg[i] * kernels::gelu_grad(pu[i]);
      }
      if (rg(g)) {
        T* gg = gref(g.id);
        for (std::size_t i = 0; i < n; ++i) gg[i] += go[i] * kernels::gelu(pu[i]);
      }
    });
    return o;
  }

  /// Sum of all entries -> shape [1].
  Var sum(Var a) {
    const std::size_t n = numel(a);
    const T* p = val(a.id);
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += p[i];
    Var o = push({1}, {s}, rg(a));
    set_back(o, [this, a, o, n] {
      const T g = gbuf(o.id)[0];
      T* ga = gref(a.id);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g;
    });
    return o;
  }

  Var layer_norm(Var x, Var gamma, Var beta, T eps) {
    require(eps > T(0), ErrorCode::ConfigError, "layer_norm eps must be positive");
    const std::size_t d = shape(x).back();
    const std::size_t rows = numel(x) / d;
    require(numel(gamma) == d && numel(beta) == d, ErrorCode::ShapeMismatch, "layer_norm affine size");
    std::vector<T> out(rows * d), mean(rows), rstd(rows);
    kernels::layer_norm(val(x.id), val(gamma.id), val(beta.id), out.data(), rows, d, eps, mean.data(), rstd.data());
    Var o = push(shape(x), std::move(out), rg(x) || rg(gamma) || rg(beta));
    set_back(o, [this, x, gamma, beta, o, rows, d, mean = std::move(mean), rstd = std::move(rstd)] {
      const T* g = gbuf(o.id);
      const T* px = val(x.id);
      const T* pg = val(gamma.id);
      T* gx = rg(x) ? gref(x.id) : nullptr;
      T* ggam = rg(gamma) ? gref(gamma.id) : nullptr;
      T* gbet = rg(beta) ? gref(beta.id) : nullptr;
      std::vector<T> xhat(d), dxhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = px + r * d;
        const T* gr = g + r * d;
        T m1 = 0, m2 = 0;
        for (std::size_t j = 0; j < d; ++j) {
          xhat[j] = (xr[j] - mean[r]) * rstd[r];
          dxhat[j] = gr[j] * pg[j];
          m1 += dxhat[j];
          m2 += dxhat[j] * xhat[j];
          if (ggam) ggam[j] += gr[j] * xhat[j];
          if (gbet) gbet[j] += gr[j];
        }
        if (!gx) continue;
        m1 /= T(d);
        m2 /= T(d);
        T* gxr = gx + r * d;
        for (std::size_t j = 0; j < d; ++j) gxr[j] += rstd[r] * (dxhat[j] - m1 - xhat[j] * m2);
      }
    });
    return o;
  }

  /// Inverted dropout: keep with probability 1-p and scale by 1/(1-p).
  /// p == 0 returns x unchanged without consuming randomness.
  Var dropout(Var x, T p, RngStream& rng) {
    if (p <= T(0)) return x;
    require(p < T(1), ErrorCode::ConfigError, "dropout probability must be < 1");
    const std::size_t n = numel(x);
    std::vector<T> mask(n);
    const T keep_scale = T(1) / (T(1) - p);
    for (std::size_t i = 0; i < n; ++i) mask[i] = rng.uniform() >= static_cast<double>(p) ? keep_scale : T(0);
    return apply_mask(x, std::move(mask));
  }

  /// x * mask elementwise with a fixed (non-differentiable) mask.
  Var apply_mask(Var x, std::vector<T> mask) {
    const std::size_t n = numel(x);
    require(mask.size() == n, ErrorCode::ShapeMismatch, "mask size");
    std::vector<T> out(n);
    const T* px = val(x.id);
    for (std::size_t i = 0; i < n; ++i) out[i] = px[i] * mask[i];
    Var o = push(shape(x), std::move(out), rg(x));
    set_back(o, [this, x, o, n, mask = std::move(mask)] {
      const T* g = gbuf(o.id);
      T* gx = gref(x.id);
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * mask[i];
    });
    return o;
  }

  /// Softmax over the last dimension.
  Var softmax(Var x) {
    const std::size_t n = shape(x).back();
    const std::size_t rows = numel(x) / n;
    std::vector<T> out(val(x.id), val(x.id) + rows * n);
    kernels::softmax_rows(out.data(), rows, n);
    Var o = push(shape(x), std::move(out), rg(x));
    set_back(o, [this, x, o, rows, n] {
      const T* g = gbuf(o.id);
      const T* y = val(o.id);
      T* gx = gref(x.id);
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
      }
    });
    return o;
  }

  /// log-sum-exp over the last dimension -> [rows, 1].
  Var logsumexp(Var x) {
    const std::size_t n = shape(x).back();
    const std::size_t rows = numel(x) / n;
    std::vector<T> out(rows);
    const T* px = val(x.id);
    for (std::size_t r = 0; r < rows; ++r) out[r] = kernels::logsumexp<T>({px + r * n, n});
    Var o = push({rows, 1}, std::move(out), rg(x));
    set_back(o, [this, x, o, rows, n] {
      const T* g = gbuf(o.id);
      const T* px = val(x.id);
      const T* lse = val(o.id);
      T* gx = gref(x.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[r] * std::exp(px[r * n + j] - lse[r]);
    });
    return o;
  }

  /// Scale each row to unit L2 norm. Throws ZeroVector for a zero row.
  Var normalize_rows(Var x) {
    const std::size_t d = shape(x).back();
    const std::size_t rows = numel(x) / d;
    std::vector<T> out(rows * d), norms(rows);
    const T* px = val(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      T ss = 0;
      for (std::size_t j = 0; j < d; ++j) ss += px[r * d + j] * px[r * d + j];
      require(ss > T(0), ErrorCode::ZeroVector, "cosine similarity of a zero vector (row " + std::to_string(r) + ")");
      norms[r] = std::sqrt(ss);
      for (std::size_t j = 0; j < d; ++j) out[r * d + j] = px[r * d + j] / norms[r];
    }
    Var o = push(shape(x), std::move(out), rg(x));
    set_back(o, [this, x, o, rows, d, norms = std::move(norms)] {
      const T* g = gbuf(o.id);
      const T* z = val(o.id);
      T* gx = gref(x.id);
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += z[r * d + j] * g[r * d + j];
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += (g[r * d + j] - z[r * d + j] * dot) / norms[r];
      }
    });
    return o;
  }

  /// Mean over consecutive blocks of `block` rows: [N*block, D] -> [N, D].
  Var mean_pool(Var x, std::size_t block) {
    const std::size_t d = shape(x).back();
    const std::size_t rows = numel(x) / d;
    require(block > 0 && rows % block == 0, ErrorCode::ShapeMismatch, "mean_pool block does not divide rows");
    const std::size_t n = rows / block;
    std::vector<T> out(n * d, T(0));
    const T* px = val(x.id);
    const T inv = T(1) / T(block);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < block; ++p)
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] += px[(i * block + p) * d + j];
    for (auto& v : out) v *= inv;
    Var o = push({n, d}, std::move(out), rg(x));
    set_back(o, [this, x, o, n, block, d, inv] {
      const T* g = gbuf(o.id);
      T* gx = gref(x.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < block; ++p)
          for (std::size_t j = 0; j < d; ++j) gx[(i * block + p) * d + j] += g[i * d + j] * inv;
    });
    return o;
  }

  /// Multi-head scaled-dot-product self-attention within groups of rows.
  /// q, k, v are [M, heads*head_dim]. With a rotary table, queries and keys
  /// are rotated by their member's time, values by the key time, and the
  /// output counter-rotated by the query time, so scores and outputs depend
  /// on time differences only. Attention dropout acts on the probabilities.
  Var attention(Var q, Var k, Var v, const AttentionLayout& lay, std::size_t heads,
                const kernels::RotaryTable<T>* rot = nullptr, T attn_dropout = T(0), RngStream* rng = nullptr) {
    const auto [m, width] = mat_dims(q);
    require(shape(k) == shape(q) && shape(v) == shape(q), ErrorCode::ShapeMismatch, "attention q/k/v shapes differ");
    require(heads > 0 && width % heads == 0, ErrorCode::ShapeMismatch, "width not divisible by heads");
    const std::size_t d = width / heads;
    require(d >= 2 && d % 2 == 0, ErrorCode::OddHeadDim, "head dim must be even and >= 2, got " + std::to_string(d));
    const std::size_t L = lay.length;
    require(lay.row(lay.groups - 1, L - 1) < m, ErrorCode::ShapeMismatch, "attention layout exceeds rows");
    if (rot) require(rot->length == L && rot->pairs == d / 2, ErrorCode::ShapeMismatch, "rotary table shape");
    const bool use_drop = attn_dropout > T(0);
    if (use_drop) require(rng != nullptr, ErrorCode::ConfigError, "attention dropout needs an rng");

    const T scale = T(1) / std::sqrt(T(d));
    std::vector<T> probs(lay.groups * heads * L * L);
    std::vector<T> mask(use_drop ? probs.size() : 0);
    std::vector<T> out(m * width, T(0));
    std::vector<T> qt(L * d), kt(L * d), vt(L * d), ob(d);
    const T *pq = val(q.id), *pk = val(k.id), *pv = val(v.id);
    for (std::size_t g = 0; g < lay.groups; ++g) {
      for (std::size_t h = 0; h < heads; ++h) {
        gather_heads(pq, pk, pv, lay, g, h, d, width, rot, qt, kt, vt);
        T* a = probs.data() + (g * heads + h) * L * L;
        for (std::size_t i = 0; i < L; ++i)
          for (std::size_t j = 0; j < L; ++j) {
            T s = 0;
            for (std::size_t c = 0; c < d; ++c) s += qt[i * d + c] * kt[j * d + c];
            a[i * L + j] = s * scale;
          }
        kernels::softmax_rows(a, L, L);
        T* mk = use_drop ? mask.data() + (g * heads + h) * L * L : nullptr;
        if (mk) {
          const T keep = T(1) / (T(1) - attn_dropout);
          for (std::size_t i = 0; i < L * L; ++i)
            mk[i] = rng->uniform() >= static_cast<double>(attn_dropout) ? keep : T(0);
        }
        for (std::size_t i = 0; i < L; ++i) {
          std::fill(ob.begin(), ob.end(), T(0));
          for (std::size_t j = 0; j < L; ++j) {
            const T w = mk ? a[i * L + j] * mk[i * L + j] : a[i * L + j];
            for (std::size_t c = 0; c < d; ++c) ob[c] += w * vt[j * d + c];
          }
          T* dst = out.data() + lay.row(g, i) * width + h * d;
          if (rot) kernels::rotate_pairs(ob.data(), dst, *rot, i, true);
          else std::copy(ob.begin(), ob.end(), dst);
        }
      }
    }
    Var o = push(shape(q), std::move(out), rg(q) || rg(k) || rg(v));
    set_back(o, [this, q, k, v, o, lay, heads, d, width, L, scale, rot_copy = rot ? std::optional(*rot) : std::nullopt,
                 probs = std::move(probs), mask = std::move(mask)] {
      const kernels::RotaryTable<T>* rot = rot_copy ? &*rot_copy : nullptr;
      const T* go = gbuf(o.id);
      const T *pq = val(q.id), *pk = val(k.id), *pv = val(v.id);
      T* gq = rg(q) ? gref(q.id) : nullptr;
      T* gk = rg(k) ? gref(k.id) : nullptr;
      T* gv = rg(v) ? gref(v.id) : nullptr;
      std::vector<T> qt(L * d), kt(L * d), vt(L * d), dob(L * d), dqt(L * d), dkt(L * d), dvt(L * d), da(L), tmp(d);
      for (std::size_t g = 0; g < lay.groups; ++g) {
        for (std::size_t h = 0; h < heads; ++h) {
          gather_heads(pq, pk, pv, lay, g, h, d, width, rot, qt, kt, vt);
          const T* a = probs.data() + (g * heads + h) * L * L;
          const T* mk = mask.empty() ? nullptr : mask.data() + (g * heads + h) * L * L;
          for (std::size_t i = 0; i < L; ++i) {
            const T* src = go + lay.row(g, i) * width + h * d;
            if (rot) kernels::rotate_pairs(src, dob.data() + i * d, *rot, i, false);
            else std::copy(src, src + d, dob.begin() + static_cast<std::ptrdiff_t>(i * d));
          }
          std::fill(dqt.begin(), dqt.end(), T(0));
          std::fill(dkt.begin(), dkt.end(), T(0));
          std::fill(dvt.begin(), dvt.end(), T(0));
          for (std::size_t i = 0; i < L; ++i) {
            T rowdot = 0;
            for (std::size_t j = 0; j < L; ++j) {
              T dprob = 0;
              for (std::size_t c = 0; c < d; ++c) dprob += dob[i * d + c] * vt[j * d + c];
              const T w = mk ? a[i * L + j] * mk[i * L + j] : a[i * L + j];
              for (std::size_t c = 0; c < d; ++c) dvt[j * d + c] += w * dob[i * d + c];
              da[j] = mk ? dprob * mk[i * L + j] : dprob;
              rowdot += a[i * L + j] * da[j];
            }
            for (std::size_t j = 0; j < L; ++j) {
              const T ds = a[i * L + j] * (da[j] - rowdot) * scale;
              for (std::size_t c = 0; c < d; ++c) {
                dqt[i * d + c] += ds * kt[j * d + c];
                dkt[j * d + c] += ds * qt[i * d + c];
              }
            }
          }
          for (std::size_t i = 0; i < L; ++i) {
            const std::size_t off = lay.row(g, i) * width + h * d;
            scatter_add(gq, off, dqt.data() + i * d, rot, i, tmp);
            scatter_add(gk, off, dkt.data() + i * d, rot, i, tmp);
            scatter_add(gv, off, dvt.data() + i * d, rot, i, tmp);
          }
        }
      }
    });
    return o;
  }

  /// Symmetric decoupled InfoNCE over matched pairs, from the cosine
  /// similarity matrices s11 [N1,N1], s12 [N1,N2], s22 [N2,N2]:
  ///   L = mean_M l1(n,m) + mean_M l2(m,n),
  ///   l1(n,m) = -s12[n,m]/tau + lse({s11[n,n']/tau : n' != n} u {s12[n,k]/tau : k != m}),
  /// and l2 the mirror image with s22 and the columns of s12.
  Var dcl_loss(Var s11, Var s12, Var s22, std::span<const MatchedPair> matched, T tau) {
    require(tau > T(0), ErrorCode::ConfigError, "temperature must be positive");
    require(!matched.empty(), ErrorCode::EmptyMatched, "no matched pairs");
    const auto [n1, n1b] = mat_dims(s11);
    const auto [n2, n2b] = mat_dims(s22);
    require(n1 == n1b && n2 == n2b && shape(s12) == Shape{n1, n2}, ErrorCode::ShapeMismatch, "dcl similarity shapes");
    require(n1 + n2 > 2, ErrorCode::EmptyDenominator, "both views hold a single neuron");
    for (const auto& mp : matched)
      require(mp.first < n1 && mp.second < n2, ErrorCode::IndexOutOfRange, "matched pair out of range");

    const T *p11 = val(s11.id), *p12 = val(s12.id), *p22 = val(s22.id);
    const T inv_tau = T(1) / tau;
    const T inv_m = T(1) / T(matched.size());
    std::vector<T> buf;
    T total = 0;
    for (const auto& [n, m] : matched) {
      const T pos = p12[n * n2 + m] * inv_tau;
      total += inv_m * (denominator_lse(p11, n1, n, p12, {n * n2, 1, n2, m}, inv_tau, buf) - pos);
      total += inv_m * (denominator_lse(p22, n2, m, p12, {m, n2, n1, n}, inv_tau, buf) - pos);
    }
    std::vector<MatchedPair> mcopy(matched.begin(), matched.end());
    Var o = push({1}, {total}, rg(s11) || rg(s12) || rg(s22));
    set_back(o, [this, s11, s12, s22, o, n1, n2, inv_tau, inv_m, mcopy = std::move(mcopy)] {
      const T g = gbuf(o.id)[0];
      const T *p11 = val(s11.id), *p12 = val(s12.id), *p22 = val(s22.id);
      T* g11 = rg(s11) ? gref(s11.id) : nullptr;
      T* g12 = rg(s12) ? gref(s12.id) : nullptr;
      T* g22 = rg(s22) ? gref(s22.id) : nullptr;
      const T c = g * inv_m * inv_tau;
      std::vector<T> buf;
      for (const auto& [n, m] : mcopy) {
        if (g12) g12[n * n2 + m] -= T(2) * c;
        // view 1 -> 2: row n of s11 (minus diagonal) and row n of s12 (minus m)
        backprop_direction(p11, g11, n1, n, p12, g12, {n * n2, 1, n2, m}, inv_tau, c, buf);
        // view 2 -> 1: row m of s22 (minus diagonal) and column m of s12 (minus n)
        backprop_direction(p22, g22, n2, m, p12, g12, {m, n2, n1, n}, inv_tau, c, buf);
      }
    });
    return o;
  }

  // ---- differentiation -------------------------------------------------

  /// Reverse pass from a scalar. Throws GraphReuse on a second call.
  void backward(Var loss) {
    require(!used_, ErrorCode::GraphReuse, "backward() already ran on this tape");
    require(numel(loss) == 1, ErrorCode::ShapeMismatch, "backward target must be a scalar");
    used_ = true;
    if (!rg(loss)) return;
    gref(loss.id)[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.back && !n.grad.empty()) n.back();
    }
  }

  /// Add `weight` times each bound parameter's gradient into `ps`.
  void accumulate_param_grads(ParamSet<T>& ps, T weight = T(1)) const {
    for (const auto& [name, v] : params_) {
      const Node& n = nodes_[v.id];
      if (n.grad.empty()) continue;
      auto g = ps.grad(name).data();
      require(g.size() == n.grad.size(), ErrorCode::ShapeMismatch, "gradient size for " + name);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += weight * n.grad[i];
    }
  }

  const std::unordered_map<std::string, Var>& bound_params() const { return params_; }

 private:
  struct Node {
    Shape shape;
    std::vector<T> own;
    const T* ext = nullptr;
    std::vector<T> grad;
    bool requires_grad = false;
    std::function<void()> back;
    std::string param_name;
  };

  Var push(Shape s, std::vector<T> data, bool requires_grad) {
    Node n;
    n.shape = std::move(s);
    n.own = std::move(data);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  void set_back(Var o, std::function<void()> fn) {
    if (nodes_[o.id].requires_grad) nodes_[o.id].back = std::move(fn);
  }

  template <class F, class G>
  Var unary(Var a, F f, G df) {
    const std::size_t n = numel(a);
    std::vector<T> out(n);
    const T* pa = val(a.id);
    for (std::size_t i = 0; i < n; ++i) out[i] = f(pa[i]);
    Var o = push(shape(a), std::move(out), rg(a));
    set_back(o, [this, a, o, n, df] {
      const T* g = gbuf(o.id);
      const T* pa = val(a.id);
      T* ga = gref(a.id);
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * df(pa[i]);
    });
    return o;
  }

  std::pair<std::size_t, std::size_t> mat_dims(Var v) const {
    const Shape& s = shape(v);
    require(s.size() == 2, ErrorCode::ShapeMismatch, "expected a matrix, got " + shape_str(s));
    return {s[0], s[1]};
  }

  bool rg(Var v) const { return nodes_[v.id].requires_grad; }
  const T* val(std::uint32_t id) const { return nodes_[id].ext ? nodes_[id].ext : nodes_[id].own.data(); }
  const T* gbuf(std::uint32_t id) const { return nodes_[id].grad.data(); }
  T* gref(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(shape_numel(n.shape), T(0));
    return n.grad.data();
  }

  static void gather_heads(const T* pq, const T* pk, const T* pv, const AttentionLayout& lay, std::size_t g,
                           std::size_t h, std::size_t d, std::size_t width, const kernels::RotaryTable<T>* rot,
                           std::vector<T>& qt, std::vector<T>& kt, std::vector<T>& vt) {
    for (std::size_t i = 0; i < lay.length; ++i) {
      const std::size_t off = lay.row(g, i) * width + h * d;
      if (rot) {
        kernels::rotate_pairs(pq + off, qt.data() + i * d, *rot, i, false);
        kernels::rotate_pairs(pk + off, kt.data() + i * d, *rot, i, false);
        kernels::rotate_pairs(pv + off, vt.data() + i * d, *rot, i, false);
      } else {
        std::copy(pq + off, pq + off + d, qt.data() + i * d);
        std::copy(pk + off, pk + off + d, kt.data() + i * d);
        std::copy(pv + off, pv + off + d, vt.data() + i * d);
      }
    }
  }

  // Gradient of a rotated vector flows back through the inverse rotation.
  static void scatter_add(T* dst, std::size_t off, const T* src, const kernels::RotaryTable<T>* rot, std::size_t i,
                          std::vector<T>& tmp) {
    if (!dst) return;
    const std::size_t d = tmp.size();
    if (rot) {
      kernels::rotate_pairs(src, tmp.data(), *rot, i, true);
      src = tmp.data();
    }
    for (std::size_t c = 0; c < d; ++c) dst[off + c] += src[c];
  }

  // One denominator of the decoupled loss: row `self` of the intra-view
  // matrix without its diagonal, plus a strided line of s12 (a row for the
  // view-1 anchor, a column for the view-2 anchor) without the partner.
  struct CrossLine {
    std::size_t offset;
    std::size_t stride;
    std::size_t count;
    std::size_t partner;
    std::size_t at(std::size_t k) const { return offset + k * stride; }
  };

  static void backprop_direction(const T* intra, T* g_intra, std::size_t n_intra, std::size_t self, const T* s12,
                                 T* g12, const CrossLine& line, T inv_tau, T c, std::vector<T>& buf) {
    const T lse = denominator_lse(intra, n_intra, self, s12, line, inv_tau, buf);
    if (g_intra)
      for (std::size_t j = 0; j < n_intra; ++j)
        if (j != self) g_intra[self * n_intra + j] += c * std::exp(intra[self * n_intra + j] * inv_tau - lse);
    if (g12)
      for (std::size_t k = 0; k < line.count; ++k)
        if (k != line.partner) g12[line.at(k)] += c * std::exp(s12[line.at(k)] * inv_tau - lse);
  }

  static T denominator_lse(const T* intra, std::size_t n_intra, std::size_t self, const T* s12, const CrossLine& line,
                           T inv_tau, std::vector<T>& buf) {
    buf.clear();
    for (std::size_t j = 0; j < n_intra; ++j)
      if (j != self) buf.push_back(intra[self * n_intra + j] * inv_tau);
    for (std::size_t k = 0; k < line.count; ++k)
      if (k != line.partner) buf.push_back(s12[line.at(k)] * inv_tau);
    return kernels::logsumexp<T>(buf);
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, Var> params_;
  bool used_ = false;
};

}  // namespace nuclr

// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

// Spatiotemporal set encoder. Tokens are held as an [N*P, D] matrix with the
// token of neuron n at patch p in row n*P + p. Temporal layers attend within
// a neuron's P tokens (with rotary time embeddings); spatial layers attend
// across the N neurons sharing a patch index, with no positional signal.

#pragma once

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nuclr/core/errors.hpp"
#include "nuclr/core/kernels.hpp"
#include "nuclr/core/param_set.hpp"
#include "nuclr/core/rng.hpp"
#include "nuclr/core/tape.hpp"
#include "nuclr/core/tensor.hpp"
#include "nuclr/data/binning.hpp"

namespace nuclr {

enum class LayerKind { Temporal, Spatial };

struct EncoderConfig {
  std::size_t D = 256;
  std::size_t heads = 4;
  std::size_t L_T = 2;
  std::size_t L_ST = 2;
  std::size_t F = 50;
  std::size_t P = 10;
  double linear_dropout = 0.2;
  double attention_dropout = 0.0;
  double rotary_t_min_s = 1.0;
  double rotary_t_max_s = 80.0;
  /// Replace every spatial sub-layer with a temporal one (ablation).
  bool no_spatial = false;

  /// Derive F, P and the rotary range from the preprocessing settings.
  static EncoderConfig for_data(const DataConfig& dc, double sample_rate_hz = 0.0) {
    EncoderConfig c;
    c.set_data(dc, sample_rate_hz);
    return c;
  }

  void set_data(const DataConfig& dc, double sample_rate_hz = 0.0) {
    P = patches_per_window(dc);
    F = patch_features(dc, sample_rate_hz);
    rotary_t_min_s = dc.t_patch_s;
    rotary_t_max_s = 8.0 * dc.t_ctx_s;
  }

  std::size_t head_dim() const { return heads ? D / heads : 0; }
  std::size_t num_layers() const { return L_T + 2 * L_ST; }

  std::vector<LayerKind> layer_kinds() const {
    std::vector<LayerKind> k(L_T, LayerKind::Temporal);
    for (std::size_t i = 0; i < L_ST; ++i) {
      k.push_back(no_spatial ? LayerKind::Temporal : LayerKind::Spatial);
      k.push_back(LayerKind::Temporal);
    }
    return k;
  }

  void validate() const {
    require(D > 0 && heads > 0 && D % heads == 0, ErrorCode::ConfigError,
            "D=" + std::to_string(D) + " is not divisible by heads=" + std::to_string(heads));
    require(head_dim() % 2 == 0, ErrorCode::OddHeadDim, "head dim " + std::to_string(head_dim()) + " is odd");
    require(F > 0 && P > 0, ErrorCode::ConfigError, "F and P must be positive");
    require(linear_dropout >= 0.0 && linear_dropout < 1.0 && attention_dropout >= 0.0 && attention_dropout < 1.0,
            ErrorCode::ConfigError, "dropout rates must lie in [0, 1)");
    require(rotary_t_min_s > 0.0 && rotary_t_max_s >= rotary_t_min_s, ErrorCode::ConfigError,
            "rotary periods need 0 < T_min <= T_max");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"D", c.D},
          {"heads", c.heads},
          {"L_T", c.L_T},
          {"L_ST", c.L_ST},
          {"F", c.F},
          {"P", c.P},
          {"linear_dropout", c.linear_dropout},
          {"attention_dropout", c.attention_dropout},
          {"rotary_t_min_s", c.rotary_t_min_s},
          {"rotary_t_max_s", c.rotary_t_max_s},
          {"no_spatial", c.no_spatial}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  try {
    c.D = j.at("D").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.L_T = j.at("L_T").get<std::size_t>();
    c.L_ST = j.at("L_ST").get<std::size_t>();
    c.F = j.at("F").get<std::size_t>();
    c.P = j.at("P").get<std::size_t>();
    c.linear_dropout = j.at("linear_dropout").get<double>();
    c.attention_dropout = j.at("attention_dropout").get<double>();
    c.rotary_t_min_s = j.at("rotary_t_min_s").get<double>();
    c.rotary_t_max_s = j.at("rotary_t_max_s").get<double>();
    c.no_spatial = j.at("no_spatial").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::SchemaError, std::string("encoder config: ") + e.what());
  }
  return c;
}

namespace detail {

inline std::string layer_prefix(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "layer%02zu.", i);
  return buf;
}

template <class T>
Tensor<T> trunc_normal(Shape s, RngStream& rng, double sd) {
  Tensor<T> t(std::move(s));
  for (auto& v : t.storage()) v = static_cast<T>(rng.truncated_normal(sd));
  return t;
}

}  // namespace detail

/// Fresh parameters. Attention and FFN weights are N(0, 0.02^2) truncated at
/// 2 sd with residual output projections scaled by 1/sqrt(2 * layers); patch
/// embedding and head weights use sd 1/sqrt(fan_in); biases 0, LN gains 1.
template <class T>
ParamSet<T> init_encoder_params(const EncoderConfig& cfg, RngStream rng) {
  cfg.validate();
  const std::size_t D = cfg.D, H = 4 * cfg.D;
  const double sd = 0.02;
  const double out_sd = sd / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(1, cfg.num_layers())));
  ParamSet<T> ps;
  auto ln = [&](const std::string& name) {
    ps.add(name + ".g", Tensor<T>({D}, T(1)));
    ps.add(name + ".b", Tensor<T>({D}));
  };
  ps.add("embed.w", detail::trunc_normal<T>({cfg.F, D}, rng, 1.0 / std::sqrt(static_cast<double>(cfg.F))));
  ps.add("embed.b", Tensor<T>({D}));
  for (std::size_t l = 0; l < cfg.num_layers(); ++l) {
    const std::string p = detail::layer_prefix(l);
    ln(p + "ln1");
    ps.add(p + "attn.wq", detail::trunc_normal<T>({D, D}, rng, sd));
    ps.add(p + "attn.wk", detail::trunc_normal<T>({D, D}, rng, sd));
    ps.add(p + "attn.wv", detail::trunc_normal<T>({D, D}, rng, sd));
    ps.add(p + "attn.wo", detail::trunc_normal<T>({D, D}, rng, out_sd));
    ps.add(p + "attn.bo", Tensor<T>({D}));
    ln(p + "ln2");
    ps.add(p + "ffn.wa", detail::trunc_normal<T>({D, H}, rng, sd));
    ps.add(p + "ffn.ba", Tensor<T>({H}));
    ps.add(p + "ffn.wb", detail::trunc_normal<T>({D, H}, rng, sd));
    ps.add(p + "ffn.bb", Tensor<T>({H}));
    ps.add(p + "ffn.wo", detail::trunc_normal<T>({H, D}, rng, out_sd));
    ps.add(p + "ffn.bo", Tensor<T>({D}));
  }
  ln("final_ln");
  const double head_sd = 1.0 / std::sqrt(static_cast<double>(D));
  ps.add("head.w1", detail::trunc_normal<T>({D, D}, rng, head_sd));
  ps.add("head.b1", Tensor<T>({D}));
  ps.add("head.w2", detail::trunc_normal<T>({D, D}, rng, head_sd));
  ps.add("head.b2", Tensor<T>({D}));
  return ps;
}

/// Dropout settings for one forward pass. `rng == nullptr` means eval mode.
struct ForwardMode {
  RngStream* rng = nullptr;
  bool train() const { return rng != nullptr; }

  static ForwardMode eval() { return {}; }
  static ForwardMode training(RngStream& r) { return {&r}; }
};

inline constexpr float kLayerNormEps = 1e-5f;

/// Patch projection: [N, P, F] patches -> [N*P, D] tokens.
template <class T>
Var embed_patches(Tape<T>& tape, const ParamSet<T>& ps, const EncoderConfig& cfg, const Tensor<T>& patches) {
  require(patches.rank() == 3 && patches.dim(1) == cfg.P && patches.dim(2) == cfg.F, ErrorCode::ShapeMismatch,
          "patches " + shape_str(patches.shape()) + " do not match P=" + std::to_string(cfg.P) +
              ", F=" + std::to_string(cfg.F));
  Var x = tape.constant(patches.reshaped({patches.dim(0) * cfg.P, cfg.F}));
  return tape.linear(x, tape.param(ps, "embed.w"), tape.param(ps, "embed.b"));
}

/// One pre-norm transformer layer over [N*P, D] tokens. Temporal layers use
/// `rot` (rotary table over the P patch times); spatial layers ignore it.
template <class T>
Var encoder_layer(Tape<T>& tape, const ParamSet<T>& ps, const EncoderConfig& cfg, std::size_t index, LayerKind kind,
                  Var x, std::size_t N, const kernels::RotaryTable<T>& rot, ForwardMode mode) {
  const std::string p = detail::layer_prefix(index);
  auto w = [&](const char* s) { return tape.param(ps, p + s); };
  const std::size_t P = cfg.P;
  const AttentionLayout lay = kind == LayerKind::Temporal ? AttentionLayout{N, P, P, 1} : AttentionLayout{P, N, 1, P};
  const T lin_drop = mode.train() ? static_cast<T>(cfg.linear_dropout) : T(0);
  const T att_drop = mode.train() ? static_cast<T>(cfg.attention_dropout) : T(0);

  Var h = tape.layer_norm(x, w("ln1.g"), w("ln1.b"), T(kLayerNormEps));
  Var q = tape.linear(h, w("attn.wq"));
  Var k = tape.linear(h, w("attn.wk"));
  Var v = tape.linear(h, w("attn.wv"));
  Var a = tape.attention(q, k, v, lay, cfg.heads, kind == LayerKind::Temporal ? &rot : nullptr, att_drop, mode.rng);
  Var o = tape.linear(a, w("attn.wo"), w("attn.bo"));
  if (mode.train()) o = tape.dropout(o, lin_drop, *mode.rng);
  x = tape.add(x, o);

  h = tape.layer_norm(x, w("ln2.g"), w("ln2.b"), T(kLayerNormEps));
  Var u = tape.linear(h, w("ffn.wa"), w("ffn.ba"));
  Var g = tape.linear(h, w("ffn.wb"), w("ffn.bb"));
  Var z = tape.geglu(u, g);
  if (mode.train()) z = tape.dropout(z, lin_drop, *mode.rng);
  return tape.add(x, tape.linear(z, w("ffn.wo"), w("ffn.bo")));
}

/// Per-neuron representations [N, D]. With `tap` = i < num_layers(), returns
/// the mean-pooled tokens after layer i (0 = after patch embedding) instead.
template <class T>
Var encode(Tape<T>& tape, const ParamSet<T>& ps, const EncoderConfig& cfg, const Tensor<T>& patches,
           std::span<const double> patch_times_s, ForwardMode mode = {}, std::optional<std::size_t> tap = {}) {
  require(patches.rank() == 3 && patches.dim(0) > 0, ErrorCode::EmptyView, "encode needs at least one neuron");
  require(patch_times_s.size() == cfg.P, ErrorCode::ShapeMismatch, "one timestamp per patch required");
  const std::size_t layers = cfg.num_layers();
  if (tap) require(*tap <= layers, ErrorCode::IndexOutOfRange, "layer tap " + std::to_string(*tap) + " > " +
                                                                   std::to_string(layers));
  const std::size_t N = patches.dim(0);
  const auto rot = kernels::RotaryTable<T>::build(patch_times_s, cfg.head_dim(), cfg.rotary_t_min_s, cfg.rotary_t_max_s);
  Var x = embed_patches(tape, ps, cfg, patches);
  if (tap && *tap == 0 && layers > 0) return tape.mean_pool(x, cfg.P);
  const auto kinds = cfg.layer_kinds();
  for (std::size_t l = 0; l < layers; ++l) {
    x = encoder_layer(tape, ps, cfg, l, kinds[l], x, N, rot, mode);
    if (tap && *tap == l + 1 && l + 1 < layers) return tape.mean_pool(x, cfg.P);
  }
  x = tape.layer_norm(x, tape.param(ps, "final_ln.g"), tape.param(ps, "final_ln.b"), T(kLayerNormEps));
  return tape.mean_pool(x, cfg.P);
}

template <class T>
Var encode(Tape<T>& tape, const ParamSet<T>& ps, const EncoderConfig& cfg, const PatchedView& view,
           ForwardMode mode = {}, std::optional<std::size_t> tap = {}) {
  require(view.neurons() > 0, ErrorCode::EmptyView, "encode needs at least one neuron");
  return encode(tape, ps, cfg, view.patches.cast<T>(), view.patch_timestamps_s, mode, tap);
}

/// Eval-mode representations as a tensor.
template <class T>
Tensor<T> encode_eval(const ParamSet<T>& ps, const EncoderConfig& cfg, const PatchedView& view,
                      std::optional<std::size_t> tap = {}) {
  Tape<T> tape;
  return tape.tensor(encode(tape, ps, cfg, view, ForwardMode::eval(), tap));
}

/// Projection head W2 GELU(W1 y + b1) + b2, used only by the training loss.
template <class T>
Var project_head(Tape<T>& tape, const ParamSet<T>& ps, Var y) {
  Var h = tape.gelu(tape.linear(y, tape.param(ps, "head.w1"), tape.param(ps, "head.b1")));
  return tape.linear(h, tape.param(ps, "head.w2"), tape.param(ps, "head.b2"));
}

}  // namespace nuclr

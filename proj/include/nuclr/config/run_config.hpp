// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdlib>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "nuclr/core/errors.hpp"
#include "nuclr/data/binning.hpp"
#include "nuclr/eval/evaluation.hpp"
#include "nuclr/eval/probe.hpp"
#include "nuclr/loss/contrastive.hpp"
#include "nuclr/model/encoder.hpp"
#include "nuclr/sampler/view_sampler.hpp"
#include "nuclr/synth/generator.hpp"
#include "nuclr/train/trainer.hpp"

namespace nuclr {

/// Probe and split settings.
struct EvalConfig {
  Setting setting = Setting::InductiveZeroShot;
  Task task = Task::CellType;
  double label_ratio = 1.0;
  double test_fraction = 0.5;
  /// Empty means the encoder output.
  std::optional<std::size_t> layer_tap;
  std::vector<std::string> pretrain_sessions;
  std::vector<std::string> train_sessions;
  std::vector<std::string> test_sessions;
  ProbeOptions probe;
  std::uint64_t seed = 0;

  SplitSpec split() const {
    return {setting, train_sessions, test_sessions, label_ratio, test_fraction};
  }
};

struct RunConfig {
  DataConfig data;
  SamplerConfig sampler;
  EncoderConfig encoder;
  LossConfig loss;
  TrainConfig trainer;
  EvalConfig eval;
  SynthConfig synth;

  static RunConfig defaults_for(Modality m) {
    RunConfig c;
    c.data = DataConfig::defaults_for(m);
    c.sampler = SamplerConfig::defaults_for(m);
    c.trainer = TrainConfig::defaults_for(m);
    c.synth.modality = m;
    c.encoder.set_data(c.data, c.synth.sample_rate_hz);
    return c;
  }

  PretrainSetup setup() const { return {data, sampler, encoder, loss, trainer}; }

  void validate() const {
    patches_per_window(data);
    encoder.validate();
    loss.validate();
    trainer.validate();
    synth.validate();
    require(sampler.max_neuron_dropout >= 0.0 && sampler.max_neuron_dropout < 1.0 && sampler.delta_t_max_s >= 0.0,
            ErrorCode::ConfigError, "invalid sampler settings");
  }
};

namespace detail {

/// Reads keys from one JSON object and rejects any it did not consume.
class SectionReader {
 public:
  SectionReader(const nlohmann::json& j, std::string name) : j_(j), name_(std::move(name)) {
    require(j.is_object(), ErrorCode::ConfigError, "config section '" + name_ + "' must be an object");
  }

  template <class V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorCode::ConfigError, "config key " + name_ + "." + key + " has the wrong type");
    }
  }

  template <class V>
  void read(const char* key, std::optional<V>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    V v{};
    read(key, v);
    out = v;
  }

  template <class E, class Parse>
  void read_enum(const char* key, E& out, Parse parse) {
    std::string s;
    if (!j_.contains(key)) {
      seen_.insert(key);
      return;
    }
    read(key, s);
    out = parse(s);
  }

  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      require(seen_.contains(k), ErrorCode::ConfigError, "unknown config key " + name_ + "." + k);
  }

 private:
  const nlohmann::json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline nlohmann::json to_json(const DataConfig& c) {
  return {{"modality", to_string(c.modality)},
          {"bin_size_s", c.bin_size_s},
          {"t_ctx_s", c.t_ctx_s},
          {"t_patch_s", c.t_patch_s},
          {"count_transform", c.count_transform}};
}

inline nlohmann::json to_json(const SamplerConfig& c) {
  return {{"delta_t_max_s", c.delta_t_max_s},
          {"max_neuron_dropout", c.max_neuron_dropout},
          {"allow_view_overlap", c.allow_view_overlap}};
}

inline nlohmann::json to_json(const LossConfig& c) { return {{"temperature", c.temperature}}; }

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"total_steps", c.total_steps},   {"batch_size", c.batch_size},
          {"max_lr", c.max_lr},             {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},               {"beta2", c.beta2},
          {"eps", c.eps},                   {"warmup_steps", c.warmup_steps},
          {"seed", c.seed},                 {"checkpoint_every", c.checkpoint_every},
          {"grad_clip", c.grad_clip},       {"threads", c.threads}};
}

inline nlohmann::json to_json(const EvalConfig& c) {
  return {{"setting", to_string(c.setting)},
          {"task", to_string(c.task)},
          {"label_ratio", c.label_ratio},
          {"test_fraction", c.test_fraction},
          {"layer_tap", c.layer_tap ? nlohmann::json(*c.layer_tap) : nlohmann::json()},
          {"pretrain_sessions", c.pretrain_sessions},
          {"train_sessions", c.train_sessions},
          {"test_sessions", c.test_sessions},
          {"probe_l2", c.probe.l2},
          {"probe_grad_tol", c.probe.grad_tol},
          {"probe_max_iter", c.probe.max_iter},
          {"stratified", c.probe.stratified},
          {"seed", c.seed}};
}

inline nlohmann::json to_json(const SynthConfig& c) {
  return {{"n_animals", c.n_animals},
          {"groups_per_animal", c.groups_per_animal},
          {"neurons_per_group", c.neurons_per_group},
          {"duration_s", c.duration_s},
          {"n_types", c.n_types},
          {"phase_span", c.phase_span},
          {"n_regions", c.n_regions},
          {"region_freqs_hz", c.region_freqs_hz},
          {"amp_lo", c.amp_lo},
          {"amp_hi", c.amp_hi},
          {"base_lo", c.base_lo},
          {"base_hi", c.base_hi},
          {"modality", to_string(c.modality)},
          {"sample_rate_hz", c.sample_rate_hz},
          {"calcium_decay_s", c.calcium_decay_s},
          {"calcium_noise_sd", c.calcium_noise_sd},
          {"seed", c.seed}};
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"data", to_json(c.data)},       {"sampler", to_json(c.sampler)}, {"encoder", to_json(c.encoder)},
          {"loss", to_json(c.loss)},       {"trainer", to_json(c.trainer)}, {"eval", to_json(c.eval)},
          {"synth", to_json(c.synth)}};
}

/// Effective config from a JSON document layered over the defaults for its
/// modality. Encoder P, F and rotary range follow the data section unless
/// set explicitly. Throws ConfigError on unknown keys or bad values.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::ConfigError, "config must be a JSON object");
  for (const auto& [k, _] : j.items())
    require(k == "data" || k == "sampler" || k == "encoder" || k == "loss" || k == "trainer" || k == "eval" ||
                k == "synth",
            ErrorCode::ConfigError, "unknown config section '" + k + "'");
  const auto section = [&](const char* name) { return j.contains(name) ? j.at(name) : nlohmann::json::object(); };
  const auto jd = section("data"), js = section("sampler"), je = section("encoder"), jl = section("loss"),
             jt = section("trainer"), jv = section("eval"), jy = section("synth");

  Modality m = Modality::Spikes;
  auto parse_mod = [](const std::string& s) {
    try {
      return parse_modality(s);
    } catch (const Error& e) {
      fail(ErrorCode::ConfigError, e.message());
    }
  };
  if (jd.is_object() && jd.contains("modality") && jd["modality"].is_string()) m = parse_mod(jd["modality"]);
  else if (jy.is_object() && jy.contains("modality") && jy["modality"].is_string()) m = parse_mod(jy["modality"]);
  RunConfig c = RunConfig::defaults_for(m);

  detail::SectionReader d(jd, "data");
  d.read_enum("modality", c.data.modality, parse_mod);
  d.read("bin_size_s", c.data.bin_size_s);
  d.read("t_ctx_s", c.data.t_ctx_s);
  d.read("t_patch_s", c.data.t_patch_s);
  d.read("count_transform", c.data.count_transform);
  d.finish();
  require(c.data.count_transform == "raw" || c.data.count_transform == "log1p", ErrorCode::ConfigError,
          "data.count_transform must be 'raw' or 'log1p'");

  detail::SectionReader s(js, "sampler");
  s.read("delta_t_max_s", c.sampler.delta_t_max_s);
  s.read("max_neuron_dropout", c.sampler.max_neuron_dropout);
  s.read("allow_view_overlap", c.sampler.allow_view_overlap);
  s.finish();

  detail::SectionReader y(jy, "synth");
  y.read("n_animals", c.synth.n_animals);
  y.read("groups_per_animal", c.synth.groups_per_animal);
  y.read("neurons_per_group", c.synth.neurons_per_group);
  y.read("duration_s", c.synth.duration_s);
  y.read("n_types", c.synth.n_types);
  y.read("phase_span", c.synth.phase_span);
  y.read("n_regions", c.synth.n_regions);
  y.read("region_freqs_hz", c.synth.region_freqs_hz);
  y.read("amp_lo", c.synth.amp_lo);
  y.read("amp_hi", c.synth.amp_hi);
  y.read("base_lo", c.synth.base_lo);
  y.read("base_hi", c.synth.base_hi);
  y.read_enum("modality", c.synth.modality, parse_mod);
  y.read("sample_rate_hz", c.synth.sample_rate_hz);
  y.read("calcium_decay_s", c.synth.calcium_decay_s);
  y.read("calcium_noise_sd", c.synth.calcium_noise_sd);
  y.read("seed", c.synth.seed);
  y.finish();
  if (!jy.contains("modality")) c.synth.modality = c.data.modality;

  c.encoder.set_data(c.data, c.synth.sample_rate_hz);
  detail::SectionReader e(je, "encoder");
  e.read("D", c.encoder.D);
  e.read("heads", c.encoder.heads);
  e.read("L_T", c.encoder.L_T);
  e.read("L_ST", c.encoder.L_ST);
  e.read("F", c.encoder.F);
  e.read("P", c.encoder.P);
  e.read("linear_dropout", c.encoder.linear_dropout);
  e.read("attention_dropout", c.encoder.attention_dropout);
  e.read("rotary_t_min_s", c.encoder.rotary_t_min_s);
  e.read("rotary_t_max_s", c.encoder.rotary_t_max_s);
  e.read("no_spatial", c.encoder.no_spatial);
  e.finish();

  detail::SectionReader l(jl, "loss");
  l.read("temperature", c.loss.temperature);
  l.finish();

  detail::SectionReader t(jt, "trainer");
  t.read("total_steps", c.trainer.total_steps);
  t.read("batch_size", c.trainer.batch_size);
  t.read("max_lr", c.trainer.max_lr);
  t.read("weight_decay", c.trainer.weight_decay);
  t.read("beta1", c.trainer.beta1);
  t.read("beta2", c.trainer.beta2);
  t.read("eps", c.trainer.eps);
  t.read("warmup_steps", c.trainer.warmup_steps);
  t.read("seed", c.trainer.seed);
  t.read("checkpoint_every", c.trainer.checkpoint_every);
  t.read("grad_clip", c.trainer.grad_clip);
  t.read("threads", c.trainer.threads);
  t.finish();

  detail::SectionReader v(jv, "eval");
  v.read_enum("setting", c.eval.setting, parse_setting);
  v.read_enum("task", c.eval.task, parse_task);
  v.read("label_ratio", c.eval.label_ratio);
  v.read("test_fraction", c.eval.test_fraction);
  v.read("layer_tap", c.eval.layer_tap);
  v.read("pretrain_sessions", c.eval.pretrain_sessions);
  v.read("train_sessions", c.eval.train_sessions);
  v.read("test_sessions", c.eval.test_sessions);
  v.read("probe_l2", c.eval.probe.l2);
  v.read("probe_grad_tol", c.eval.probe.grad_tol);
  v.read("probe_max_iter", c.eval.probe.max_iter);
  v.read("stratified", c.eval.probe.stratified);
  v.read("seed", c.eval.seed);
  v.finish();

  c.validate();
  return c;
}

/// Seed fallback from the NUCLR_SEED environment variable.
inline std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("NUCLR_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const auto v = std::strtoull(s, &end, 10);
  require(end && *end == '\0', ErrorCode::ConfigError, std::string("NUCLR_SEED is not an integer: ") + s);
  return v;
}

}  // namespace nuclr

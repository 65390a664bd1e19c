// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "nuclr/config/run_config.hpp"
#include "nuclr/eval/evaluation.hpp"
#include "nuclr/model/checkpoint.hpp"
#include "nuclr/train/trainer.hpp"

namespace nuclr {

/// Sessions pretrained on: the explicit list, or every session outside the
/// test set for inductive splits, or every session otherwise.
inline std::vector<std::string> pretrain_sessions_for(const std::vector<Recording>& recs, const EvalConfig& ev) {
  if (!ev.pretrain_sessions.empty()) return ev.pretrain_sessions;
  const std::set<std::string> test(ev.test_sessions.begin(), ev.test_sessions.end());
  std::vector<std::string> out;
  for (const auto& r : recs)
    if (ev.setting != Setting::InductiveZeroShot || !test.contains(r.session_id)) out.push_back(r.session_id);
  return out;
}

inline std::vector<Recording> select_sessions(const std::vector<Recording>& recs,
                                              const std::vector<std::string>& sessions) {
  const std::set<std::string> want(sessions.begin(), sessions.end());
  std::vector<Recording> out;
  for (const auto& r : recs)
    if (want.contains(r.session_id)) out.push_back(r);
  require(out.size() == want.size(), ErrorCode::ConfigError, "pretrain session list names unknown sessions");
  return out;
}

/// Sample rate used to size calcium patches; 0 for spikes.
inline double data_sample_rate(const std::vector<Recording>& recs) {
  for (const auto& r : recs)
    if (r.modality == Modality::Calcium) return r.sample_rate_hz;
  return 0.0;
}

/// Pretrain a fresh encoder on the named sessions and package it.
inline Checkpoint<float> pretrain_checkpoint(const std::vector<Recording>& recs, const RunConfig& cfg,
                                             const std::vector<std::string>& sessions,
                                             const TrainHooks<float>& hooks = {}) {
  const auto train = select_sessions(recs, sessions);
  Checkpoint<float> c;
  c.encoder = cfg.encoder;
  c.step = cfg.trainer.total_steps;
  c.pretrain_sessions = sessions;
  std::set<std::string> subjects;
  for (const auto& r : train) subjects.insert(r.subject_id);
  c.pretrain_subjects.assign(subjects.begin(), subjects.end());
  c.config = to_json(cfg);
  c.params = initial_params<float>(cfg.encoder, cfg.trainer.seed);
  pretrain<float>(train, cfg.setup(), c.params, hooks);
  return c;
}

enum class Variant { Full, NoSpatial, NoNeuronDropout };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoSpatial: return "no_spatial";
    case Variant::NoNeuronDropout: return "no_neuron_dropout";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::Full;
  if (s == "no_spatial") return Variant::NoSpatial;
  if (s == "no_neuron_dropout") return Variant::NoNeuronDropout;
  fail(ErrorCode::ConfigError, "unknown ablation variant '" + s + "'");
}

inline RunConfig apply_variant(RunConfig cfg, Variant v) {
  if (v == Variant::NoSpatial) cfg.encoder.no_spatial = true;
  if (v == Variant::NoNeuronDropout) cfg.sampler.max_neuron_dropout = 0.0;
  return cfg;
}

struct AblationResult {
  Variant variant = Variant::Full;
  std::vector<ProbeReport> reports;  // one per task
};

/// Pretrain the variant and probe each task on the configured split. Every
/// variant shares the data, the split and the seeds.
inline AblationResult run_ablation(const std::vector<Recording>& recs, const RunConfig& base, Variant v,
                                   const std::vector<Task>& tasks, const TrainHooks<float>& hooks = {}) {
  const RunConfig cfg = apply_variant(base, v);
  const auto sessions = pretrain_sessions_for(recs, cfg.eval);
  const auto ckpt = pretrain_checkpoint(recs, cfg, sessions, hooks);
  const auto id = checkpoint_id(serialize_checkpoint(ckpt));
  AblationResult out{v, {}};
  for (Task t : tasks) {
    auto rep = run_setting(recs, cfg.eval.split(), ckpt, id, cfg.data, t, cfg.eval.seed, cfg.eval.layer_tap,
                           cfg.eval.probe);
    rep.config["variant"] = to_string(v);
    out.reports.push_back(std::move(rep));
  }
  return out;
}

/// Cache key of a pretraining run: hash of the effective config minus the
/// fields that do not change the checkpoint.
inline std::string pretrain_cache_key(const RunConfig& cfg, const std::vector<std::string>& sessions) {
  nlohmann::json j = to_json(cfg);
  j.erase("eval");
  j.erase("synth");
  j["trainer"].erase("threads");
  j["trainer"].erase("checkpoint_every");
  j["sessions"] = sessions;
  return checkpoint_id(j.dump());
}

struct BinSweepEntry {
  double bin_size_s = 0.0;
  bool cache_hit = false;
  ProbeReport report;
};

/// Pretrain (or reuse a cached checkpoint) and probe once per bin size.
inline std::vector<BinSweepEntry> sweep_bin_size(const std::vector<Recording>& recs, const std::vector<double>& bins,
                                                 const RunConfig& base, const std::filesystem::path& cache_dir,
                                                 const TrainHooks<float>& hooks = {}) {
  require(!bins.empty(), ErrorCode::ConfigError, "bin-size sweep needs at least one bin size");
  for (double b : bins)
    require(detail::exact_ratio(base.data.t_patch_s, b) > 0, ErrorCode::NonDivisibleBin,
            "bin size " + std::to_string(b) + " s does not divide T_patch " + std::to_string(base.data.t_patch_s) + " s");
  std::filesystem::create_directories(cache_dir);
  std::vector<BinSweepEntry> out;
  for (double b : bins) {
    RunConfig cfg = base;
    cfg.data.bin_size_s = b;
    cfg.encoder.F = patch_features(cfg.data, data_sample_rate(recs));
    const auto sessions = pretrain_sessions_for(recs, cfg.eval);
    const auto path = cache_dir / (pretrain_cache_key(cfg, sessions) + ".ckpt");
    BinSweepEntry e;
    e.bin_size_s = b;
    Checkpoint<float> ckpt;
    if (std::filesystem::exists(path)) {
      ckpt = load_checkpoint<float>(path);
      e.cache_hit = true;
    } else {
      ckpt = pretrain_checkpoint(recs, cfg, sessions, hooks);
      save_checkpoint(ckpt, path);
    }
    const auto id = checkpoint_id(serialize_checkpoint(ckpt));
    e.report = run_setting(recs, cfg.eval.split(), ckpt, id, cfg.data, cfg.eval.task, cfg.eval.seed,
                           cfg.eval.layer_tap, cfg.eval.probe);
    e.report.config["bin_size_s"] = b;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace nuclr

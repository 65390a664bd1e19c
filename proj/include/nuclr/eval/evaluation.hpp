// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "nuclr/core/errors.hpp"
#include "nuclr/core/rng.hpp"
#include "nuclr/data/binning.hpp"
#include "nuclr/data/recording.hpp"
#include "nuclr/eval/metrics.hpp"
#include "nuclr/eval/probe.hpp"
#include "nuclr/model/checkpoint.hpp"
#include "nuclr/model/encoder.hpp"

namespace nuclr {

struct NeuronEmbedding {
  std::string neuron_id;
  std::string session_id;
  std::string subject_id;
  std::string group_id;
  std::vector<double> vector;
  std::size_t layer_tap = 0;
};

/// Average of eval-mode encoder outputs over the windows [k T_ctx, (k+1) T_ctx)
/// that fit in the recording. Each group is encoded as its own population.
template <class T>
std::vector<NeuronEmbedding> extract_embeddings(const ParamSet<T>& params, const EncoderConfig& ec,
                                                const DataConfig& dc, const Recording& rec,
                                                std::optional<std::size_t> layer_tap = {}) {
  require(rec.duration_s >= dc.t_ctx_s, ErrorCode::RecordingTooShort,
          rec.session_id + " is shorter than one window of " + std::to_string(dc.t_ctx_s) + " s");
  const auto windows = static_cast<std::size_t>(std::floor(rec.duration_s / dc.t_ctx_s + 1e-9));
  const std::size_t tap = layer_tap.value_or(ec.num_layers());
  std::vector<NeuronEmbedding> out(rec.neurons.size());
  for (const auto& g : rec.groups()) {
    std::vector<std::vector<double>> acc(g.neurons.size(), std::vector<double>(ec.D, 0.0));
    for (std::size_t w = 0; w < windows; ++w) {
      const auto view = make_view(rec, g.neurons, static_cast<double>(w) * dc.t_ctx_s, dc);
      const auto y = encode_eval(params, ec, view, tap);
      for (std::size_t i = 0; i < g.neurons.size(); ++i)
        for (std::size_t j = 0; j < ec.D; ++j) acc[i][j] += static_cast<double>(y.at(i, j));
    }
    for (std::size_t i = 0; i < g.neurons.size(); ++i) {
      const auto& n = rec.neurons[g.neurons[i]];
      auto& e = out[g.neurons[i]];
      e = {n.neuron_id, rec.session_id, rec.subject_id, n.group_id, std::move(acc[i]), tap};
      for (auto& v : e.vector) v /= static_cast<double>(windows);
    }
  }
  return out;
}

enum class Setting { Transductive, TransductiveZeroShot, InductiveZeroShot };
enum class Task { CellType, Region };

inline const char* to_string(Setting s) {
  switch (s) {
    case Setting::Transductive: return "transductive";
    case Setting::TransductiveZeroShot: return "transductive_zero_shot";
    case Setting::InductiveZeroShot: return "inductive_zero_shot";
  }
  return "?";
}

inline Setting parse_setting(const std::string& s) {
  if (s == "transductive") return Setting::Transductive;
  if (s == "transductive_zero_shot") return Setting::TransductiveZeroShot;
  if (s == "inductive_zero_shot") return Setting::InductiveZeroShot;
  fail(ErrorCode::ConfigError, "unknown setting '" + s + "'");
}

inline const char* to_string(Task t) { return t == Task::CellType ? "cell_type" : "region"; }

inline Task parse_task(const std::string& s) {
  if (s == "cell_type") return Task::CellType;
  if (s == "region") return Task::Region;
  fail(ErrorCode::ConfigError, "unknown task '" + s + "'");
}

/// Which sessions train the probe and which are evaluated. In the
/// transductive setting train and test sessions coincide and neurons are
/// split by `test_fraction`.
struct SplitSpec {
  Setting setting = Setting::InductiveZeroShot;
  std::vector<std::string> train_sessions;
  std::vector<std::string> test_sessions;
  double label_ratio = 1.0;
  double test_fraction = 0.5;
};

inline nlohmann::json to_json(const SplitSpec& s) {
  return {{"setting", to_string(s.setting)},
          {"train_sessions", s.train_sessions},
          {"test_sessions", s.test_sessions},
          {"label_ratio", s.label_ratio},
          {"test_fraction", s.test_fraction}};
}

/// Check a split against the data and the sessions the encoder was
/// pretrained on. Throws SplitLeakage or ConfigError.
inline void validate_split(const SplitSpec& s, const std::vector<Recording>& recs,
                           const std::vector<std::string>& pretrain_sessions,
                           const std::vector<std::string>& pretrain_subjects) {
  require(s.label_ratio > 0.0 && s.label_ratio <= 1.0, ErrorCode::ConfigError, "label_ratio must lie in (0, 1]");
  require(!s.train_sessions.empty() && !s.test_sessions.empty(), ErrorCode::ConfigError,
          "split needs probe-train and test sessions");
  std::map<std::string, std::string> subject_of;
  for (const auto& r : recs) subject_of[r.session_id] = r.subject_id;
  auto subjects = [&](const std::vector<std::string>& sessions) {
    std::set<std::string> out;
    for (const auto& id : sessions) {
      auto it = subject_of.find(id);
      require(it != subject_of.end(), ErrorCode::ConfigError, "split names unknown session " + id);
      out.insert(it->second);
    }
    return out;
  };
  const auto train_subj = subjects(s.train_sessions);
  const auto test_subj = subjects(s.test_sessions);
  const std::set<std::string> pre(pretrain_sessions.begin(), pretrain_sessions.end());
  const std::set<std::string> pre_subj(pretrain_subjects.begin(), pretrain_subjects.end());
  switch (s.setting) {
    case Setting::Transductive:
      require(s.test_fraction > 0.0 && s.test_fraction < 1.0, ErrorCode::ConfigError, "test_fraction must lie in (0, 1)");
      for (const auto& id : s.test_sessions)
        require(pre.contains(id), ErrorCode::SplitLeakage, "transductive test session " + id + " was not pretrained on");
      require(s.train_sessions == s.test_sessions, ErrorCode::ConfigError,
              "transductive splits use the same sessions for probe training and testing");
      break;
    case Setting::TransductiveZeroShot:
      for (const auto& id : s.test_sessions)
        require(pre.contains(id), ErrorCode::SplitLeakage,
                "transductive zero-shot test session " + id + " was not pretrained on");
      break;
    case Setting::InductiveZeroShot:
      for (const auto& id : s.test_sessions) {
        require(!pre.contains(id), ErrorCode::SplitLeakage, "inductive test session " + id + " was used in pretraining");
        require(!pre_subj.contains(subject_of[id]), ErrorCode::SplitLeakage,
                "inductive test subject " + subject_of[id] + " was used in pretraining");
      }
      break;
  }
  if (s.setting != Setting::Transductive)
    for (const auto& subj : test_subj)
      require(!train_subj.contains(subj), ErrorCode::SplitLeakage,
              "subject " + subj + " appears on both sides of a zero-shot split");
}

struct ProbeReport {
  Setting setting = Setting::InductiveZeroShot;
  Task task = Task::CellType;
  double macro_f1 = 0.0;
  std::vector<std::string> classes;
  std::vector<double> per_class_f1;
  std::vector<std::vector<std::size_t>> confusion;
  double label_ratio = 1.0;
  std::size_t layer_tap = 0;
  std::string checkpoint_id;
  std::uint64_t seed = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  nlohmann::json config = nlohmann::json::object();
};

inline nlohmann::json to_json(const ProbeReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t c = 0; c < r.classes.size(); ++c) per[r.classes[c]] = r.per_class_f1[c];
  return {{"setting", to_string(r.setting)}, {"task", to_string(r.task)},   {"macro_f1", r.macro_f1},
          {"per_class_f1", per},            {"classes", r.classes},        {"confusion", r.confusion},
          {"label_ratio", r.label_ratio},   {"layer_tap", r.layer_tap},    {"checkpoint_id", r.checkpoint_id},
          {"seed", r.seed},                 {"n_train", r.n_train},        {"n_test", r.n_test},
          {"config", r.config}};
}

inline std::optional<std::string> neuron_label(const NeuronRecord& n, Task t) {
  return t == Task::CellType ? n.cell_type : n.region;
}

/// Probe a frozen embedding table: fit on the probe-train part of the split,
/// score macro-F1 on the test part.
inline ProbeReport probe_embeddings(const std::vector<NeuronEmbedding>& embeddings, const std::vector<Recording>& recs,
                                    const SplitSpec& split, Task task, std::uint64_t seed,
                                    const ProbeOptions& opt = {}) {
  std::map<std::pair<std::string, std::string>, const NeuronEmbedding*> emb;
  for (const auto& e : embeddings) emb[{e.session_id, e.neuron_id}] = &e;
  struct Sample {
    const NeuronEmbedding* e;
    std::string label;
  };
  auto collect = [&](const std::vector<std::string>& sessions) {
    std::vector<Sample> out;
    const std::set<std::string> want(sessions.begin(), sessions.end());
    for (const auto& r : recs) {
      if (!want.contains(r.session_id)) continue;
      for (const auto& n : r.neurons) {
        const auto label = neuron_label(n, task);
        if (!label) continue;
        auto it = emb.find({r.session_id, n.neuron_id});
        require(it != emb.end(), ErrorCode::ConfigError, "no embedding for " + r.session_id + "/" + n.neuron_id);
        out.push_back({it->second, *label});
      }
    }
    return out;
  };
  const RngStream base(seed, stream_id({0x70726f6265ull}));
  std::vector<Sample> train, test;
  if (split.setting == Setting::Transductive) {
    auto all = collect(split.test_sessions);
    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < all.size(); ++i) by_class[all[i].label].push_back(i);
    RngStream sr = base.fork({0});
    for (auto& [_, idx] : by_class) {
      sr.shuffle(idx);
      const auto n_test = static_cast<std::size_t>(std::llround(split.test_fraction * static_cast<double>(idx.size())));
      for (std::size_t k = 0; k < idx.size(); ++k) (k < n_test ? test : train).push_back(all[idx[k]]);
    }
  } else {
    train = collect(split.train_sessions);
    test = collect(split.test_sessions);
  }
  std::set<std::string> class_set;
  for (const auto& s : train) class_set.insert(s.label);
  for (const auto& s : test) class_set.insert(s.label);
  ProbeReport rep;
  rep.setting = split.setting;
  rep.task = task;
  rep.label_ratio = split.label_ratio;
  rep.seed = seed;
  rep.classes.assign(class_set.begin(), class_set.end());
  std::map<std::string, std::size_t> cls;
  for (std::size_t c = 0; c < rep.classes.size(); ++c) cls[rep.classes[c]] = c;
  std::vector<std::size_t> ytrain;
  for (const auto& s : train) ytrain.push_back(cls[s.label]);
  const auto keep = subsample_labels(ytrain, split.label_ratio, opt.stratified, base.fork({1}));
  std::vector<std::vector<double>> x;
  std::vector<std::size_t> y;
  for (auto i : keep) {
    x.push_back(train[i].e->vector);
    y.push_back(ytrain[i]);
  }
  require(!test.empty(), ErrorCode::ConfigError, "split has no labelled test neurons");
  require(!x.empty(), ErrorCode::SingleClass, "split has no labelled probe-train neurons");
  const auto probe = fit_probe(x, y, rep.classes.size(), opt);
  std::vector<std::size_t> pred, truth;
  for (const auto& s : test) {
    pred.push_back(probe.predict(s.e->vector));
    truth.push_back(cls[s.label]);
  }
  rep.confusion = confusion_matrix(pred, truth, rep.classes.size());
  rep.per_class_f1 = per_class_f1(rep.confusion);
  double sum = 0.0;
  for (double f : rep.per_class_f1) sum += f;
  rep.macro_f1 = sum / static_cast<double>(rep.classes.size());
  rep.layer_tap = test.front().e->layer_tap;
  rep.n_train = x.size();
  rep.n_test = test.size();
  return rep;
}

/// Extract embeddings for the split's sessions with a checkpoint and probe them.
template <class T>
ProbeReport run_setting(const std::vector<Recording>& recs, const SplitSpec& split, const Checkpoint<T>& ckpt,
                        const std::string& ckpt_id, const DataConfig& dc, Task task, std::uint64_t seed,
                        std::optional<std::size_t> layer_tap = {}, const ProbeOptions& opt = {}) {
  validate_split(split, recs, ckpt.pretrain_sessions, ckpt.pretrain_subjects);
  std::set<std::string> needed(split.train_sessions.begin(), split.train_sessions.end());
  needed.insert(split.test_sessions.begin(), split.test_sessions.end());
  std::vector<NeuronEmbedding> emb;
  for (const auto& r : recs) {
    if (!needed.contains(r.session_id)) continue;
    auto e = extract_embeddings(ckpt.params, ckpt.encoder, dc, r, layer_tap);
    emb.insert(emb.end(), std::make_move_iterator(e.begin()), std::make_move_iterator(e.end()));
  }
  auto rep = probe_embeddings(emb, recs, split, task, seed, opt);
  rep.checkpoint_id = ckpt_id;
  rep.config = {{"split", to_json(split)}, {"checkpoint", ckpt.config}};
  return rep;
}

}  // namespace nuclr

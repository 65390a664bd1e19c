// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "nuclr/config/run_config.hpp"
#include "nuclr/eval/evaluation.hpp"
#include "nuclr/eval/experiments.hpp"
#include "nuclr/eval/metrics.hpp"
#include "nuclr/eval/probe.hpp"
#include "nuclr/synth/generator.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace nuclr;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::IoError;
}

EncoderConfig small_encoder(const DataConfig& dc) {
  auto c = EncoderConfig::for_data(dc);
  c.D = 16;
  c.heads = 2;
  c.L_T = 1;
  c.L_ST = 1;
  return c;
}

/// Four 60 s animals with 8 neurons each and a fast tiny encoder.
RunConfig tiny_run(const std::vector<Recording>& recs) {
  RunConfig c = RunConfig::defaults_for(Modality::Spikes);
  c.encoder = small_encoder(c.data);
  c.trainer.total_steps = 30;
  c.trainer.batch_size = 4;
  c.trainer.max_lr = 1e-3;
  c.trainer.seed = 3;
  for (std::size_t i = 0; i < 3; ++i) c.eval.train_sessions.push_back(recs[i].session_id);
  c.eval.test_sessions = {recs[3].session_id};
  return c;
}

std::vector<Recording> tiny_data() {
  SynthConfig s;
  s.n_animals = 4;
  s.neurons_per_group = 8;
  s.duration_s = 60.0;
  return generate_dataset(s);
}

}  // namespace

TEST(MacroF1, HandExamples) {
  EXPECT_DOUBLE_EQ(macro_f1({0, 0, 0}, {0, 0, 1}, 2), 0.4);
  EXPECT_DOUBLE_EQ(macro_f1({0, 1, 2, 1}, {0, 1, 2, 1}, 3), 1.0);
  const auto f1 = per_class_f1(confusion_matrix({0, 0, 0}, {0, 0, 1}, 2));
  EXPECT_DOUBLE_EQ(f1[0], 0.8);
  EXPECT_DOUBLE_EQ(f1[1], 0.0);
}

TEST(MacroF1, AllOneClassOnBalancedClasses) {
  for (std::size_t k = 2; k <= 6; ++k) {
    std::vector<std::size_t> truth, pred;
    for (std::size_t c = 0; c < k; ++c)
      for (int r = 0; r < 5; ++r) {
        truth.push_back(c);
        pred.push_back(0);
      }
    const double expect = (2.0 / (static_cast<double>(k) + 1.0)) / static_cast<double>(k);
    EXPECT_NEAR(macro_f1(pred, truth, k), expect, 1e-15);
    EXPECT_NEAR(oracle::macro_f1(pred, truth, k), expect, 1e-15);
  }
}

TEST(MacroF1, MatchesPrecisionRecallOracle) {
  RngStream rng(11, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.below(4);
    const std::size_t n = 1 + rng.below(40);
    std::vector<std::size_t> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = rng.below(k);
      truth[i] = rng.below(k);
    }
    EXPECT_NEAR(macro_f1(pred, truth, k), oracle::macro_f1(pred, truth, k), 1e-12);
  }
  EXPECT_EQ(code_of([] { confusion_matrix({3}, {0}, 2); }), ErrorCode::IndexOutOfRange);
}

TEST(LabelSubsampling, StratifiedArithmetic) {
  std::vector<std::size_t> labels(80);
  for (std::size_t i = 0; i < 80; ++i) labels[i] = i % 2;
  const auto keep = subsample_labels(labels, 0.125, true, RngStream(1, 1));
  ASSERT_EQ(keep.size(), 10u);
  std::map<std::size_t, int> per;
  for (auto i : keep) ++per[labels[i]];
  EXPECT_EQ(per[0], 5);
  EXPECT_EQ(per[1], 5);
  EXPECT_EQ(subsample_labels(labels, 1.0, true, RngStream(1, 1)).size(), 80u);
  EXPECT_EQ(subsample_labels(labels, 0.125, false, RngStream(1, 1)).size(), 10u);
  // Rare classes keep at least one sample.
  std::vector<std::size_t> skewed(40, 0);
  skewed[7] = 1;
  const auto k2 = subsample_labels(skewed, 0.1, true, RngStream(1, 2));
  EXPECT_TRUE(std::any_of(k2.begin(), k2.end(), [&](std::size_t i) { return skewed[i] == 1; }));
  EXPECT_EQ(code_of([&] { subsample_labels(labels, 0.0, true, RngStream(1, 1)); }), ErrorCode::ConfigError);
}

TEST(Probe, SeparableDataIsFitExactly) {
  RngStream rng(12, 1);
  std::vector<std::vector<double>> x;
  std::vector<std::size_t> y;
  for (int i = 0; i < 60; ++i) {
    const std::size_t c = i % 3;
    std::vector<double> v(5);
    for (auto& e : v) e = 0.3 * rng.normal();
    v[c] += 4.0;
    x.push_back(v);
    y.push_back(c);
  }
  const auto p = fit_probe(x, y, 3);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(p.predict(x[i]), y[i]);
  EXPECT_GT(p.iterations, 0u);
  // Deterministic given the data.
  const auto q = fit_probe(x, y, 3);
  EXPECT_EQ(p.weights, q.weights);
  EXPECT_EQ(p.bias, q.bias);
}

TEST(Probe, ConvergesOnOverlappingClasses) {
  RngStream rng(12, 2);
  std::vector<std::vector<double>> x;
  std::vector<std::size_t> y;
  for (int i = 0; i < 100; ++i) {
    y.push_back(i % 2);
    x.push_back({rng.normal() + 0.5 * static_cast<double>(i % 2), rng.normal()});
  }
  ProbeOptions opt;
  opt.l2 = 0.1;
  const auto p = fit_probe(x, y, 2, opt);
  EXPECT_LT(p.final_grad_norm, opt.grad_tol);
  EXPECT_LT(p.iterations, opt.max_iter);
}

TEST(Probe, SingleClassFails) {
  EXPECT_EQ(code_of([] { fit_probe({{1.0}, {2.0}}, {1, 1}, 3); }), ErrorCode::SingleClass);
}

TEST(Embeddings, SingleWindowEqualsEncodeOutput) {
  SynthConfig s;
  s.n_animals = 1;
  s.neurons_per_group = 6;
  s.duration_s = 10.0;
  const auto rec = generate_dataset(s)[0];
  const DataConfig dc;
  const auto ec = small_encoder(dc);
  const auto ps = initial_params<float>(ec, 1);
  const auto emb = extract_embeddings(ps, ec, dc, rec);
  const auto groups = rec.groups();
  const auto y = encode_eval(ps, ec, make_view(rec, groups[0].neurons, 0.0, dc));
  ASSERT_EQ(emb.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(emb[i].neuron_id, rec.neurons[i].neuron_id);
    EXPECT_EQ(emb[i].layer_tap, ec.num_layers());
    for (std::size_t j = 0; j < ec.D; ++j) EXPECT_EQ(emb[i].vector[j], static_cast<double>(y.at(i, j)));
  }
}

TEST(Embeddings, IdenticalWindowsAverageToEither) {
  Recording rec;
  rec.session_id = "s";
  rec.subject_id = "m";
  rec.duration_s = 20.0;
  RngStream rng(13, 1);
  for (int n = 0; n < 4; ++n) {
    rec.neurons.push_back({"n" + std::to_string(n), "g", std::nullopt, std::nullopt});
    std::vector<double> first;
    for (int b = 0; b < 500; ++b)
      if (rng.uniform() < 0.2) first.push_back((b + 0.5) * 0.02);
    auto all = first;
    for (double t : first) all.push_back(t + 10.0);
    rec.spikes.push_back(all);
  }
  const DataConfig dc;
  const auto ec = small_encoder(dc);
  const auto ps = initial_params<float>(ec, 2);
  const auto emb = extract_embeddings(ps, ec, dc, rec);
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  const auto y = encode_eval(ps, ec, make_view(rec, idx, 0.0, dc));
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < ec.D; ++j) EXPECT_NEAR(emb[i].vector[j], y.at(i, j), 1e-6);
}

TEST(Embeddings, NeuronOrderDoesNotChangeVectors) {
  SynthConfig s;
  s.n_animals = 1;
  s.neurons_per_group = 7;
  s.duration_s = 30.0;
  const auto rec = generate_dataset(s)[0];
  auto shuffled = rec;
  std::vector<std::size_t> perm(rec.neurons.size());
  std::iota(perm.begin(), perm.end(), 0);
  RngStream(14, 1).shuffle(perm);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    shuffled.neurons[i] = rec.neurons[perm[i]];
    shuffled.spikes[i] = rec.spikes[perm[i]];
  }
  const DataConfig dc;
  const auto ec = small_encoder(dc);
  const auto ps = initial_params<float>(ec, 3);
  const auto a = extract_embeddings(ps, ec, dc, rec);
  const auto b = extract_embeddings(ps, ec, dc, shuffled);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    ASSERT_EQ(b[i].neuron_id, a[perm[i]].neuron_id);
    for (std::size_t j = 0; j < ec.D; ++j) EXPECT_NEAR(b[i].vector[j], a[perm[i]].vector[j], 1e-5);
  }
}

TEST(Embeddings, GroupsAreEncodedSeparatelyAndShortRecordingsFail) {
  SynthConfig s;
  s.n_animals = 1;
  s.groups_per_animal = 2;
  s.neurons_per_group = 4;
  s.duration_s = 20.0;
  const auto rec = generate_dataset(s)[0];
  const DataConfig dc;
  const auto ec = small_encoder(dc);
  const auto ps = initial_params<float>(ec, 4);
  auto silenced = rec;
  // Silence the second group; the first group's embeddings must not move.
  const auto groups = rec.groups();
  ASSERT_EQ(groups.size(), 2u);
  for (auto i : groups[1].neurons) silenced.spikes[i].clear();
  const auto a = extract_embeddings(ps, ec, dc, rec);
  const auto b = extract_embeddings(ps, ec, dc, silenced);
  for (auto i : groups[0].neurons) EXPECT_EQ(a[i].vector, b[i].vector);
  auto short_rec = rec;
  short_rec.duration_s = 9.0;
  for (auto& sp : short_rec.spikes) std::erase_if(sp, [](double t) { return t >= 9.0; });
  EXPECT_EQ(code_of([&] { extract_embeddings(ps, ec, dc, short_rec); }), ErrorCode::RecordingTooShort);
}

TEST(Splits, LeakageIsRejected) {
  const auto recs = tiny_data();
  const std::vector<std::string> pre{"session000", "session001", "session002"};
  const std::vector<std::string> subj{"animal000", "animal001", "animal002"};
  SplitSpec ok{Setting::InductiveZeroShot, {"session000", "session001"}, {"session003"}, 1.0, 0.5};
  EXPECT_NO_THROW(validate_split(ok, recs, pre, subj));
  auto overlap = ok;
  overlap.test_sessions = {"session002"};
  EXPECT_EQ(code_of([&] { validate_split(overlap, recs, pre, subj); }), ErrorCode::SplitLeakage);
  auto both_sides = ok;
  both_sides.setting = Setting::TransductiveZeroShot;
  both_sides.train_sessions = {"session000", "session001"};
  both_sides.test_sessions = {"session001"};
  EXPECT_EQ(code_of([&] { validate_split(both_sides, recs, pre, subj); }), ErrorCode::SplitLeakage);
  SplitSpec unseen{Setting::TransductiveZeroShot, {"session000"}, {"session003"}, 1.0, 0.5};
  EXPECT_EQ(code_of([&] { validate_split(unseen, recs, pre, subj); }), ErrorCode::SplitLeakage);
  SplitSpec trans{Setting::Transductive, {"session001"}, {"session001"}, 1.0, 0.5};
  EXPECT_NO_THROW(validate_split(trans, recs, pre, subj));
  auto bad_ratio = ok;
  bad_ratio.label_ratio = 1.5;
  EXPECT_EQ(code_of([&] { validate_split(bad_ratio, recs, pre, subj); }), ErrorCode::ConfigError);
}

TEST(RunSetting, ReportIsConsistentAndDeterministic) {
  const auto recs = tiny_data();
  auto cfg = tiny_run(recs);
  cfg.trainer.total_steps = 10;
  const auto sessions = pretrain_sessions_for(recs, cfg.eval);
  EXPECT_EQ(sessions, (std::vector<std::string>{"session000", "session001", "session002"}));
  const auto ckpt = pretrain_checkpoint(recs, cfg, sessions);
  EXPECT_EQ(ckpt.pretrain_subjects, (std::vector<std::string>{"animal000", "animal001", "animal002"}));
  const auto id = checkpoint_id(serialize_checkpoint(ckpt));
  for (Task task : {Task::CellType, Task::Region}) {
    const auto r = run_setting(recs, cfg.eval.split(), ckpt, id, cfg.data, task, 7);
    const double mean =
        std::accumulate(r.per_class_f1.begin(), r.per_class_f1.end(), 0.0) / static_cast<double>(r.per_class_f1.size());
    EXPECT_DOUBLE_EQ(r.macro_f1, mean);
    EXPECT_EQ(r.n_test, 8u);
    EXPECT_EQ(r.n_train, 24u);
    EXPECT_EQ(r.checkpoint_id, id);
    const auto j = to_json(r);
    EXPECT_EQ(j["macro_f1"].get<double>(), r.macro_f1);
    EXPECT_EQ(j["setting"], "inductive_zero_shot");
    const auto again = run_setting(recs, cfg.eval.split(), ckpt, id, cfg.data, task, 7);
    EXPECT_EQ(to_json(again).dump(), j.dump());
  }
  // The transductive split needs pretrained test sessions; this one was not.
  SplitSpec trans{Setting::Transductive, {"session003"}, {"session003"}, 1.0, 0.5};
  EXPECT_EQ(code_of([&] { run_setting(recs, trans, ckpt, id, cfg.data, Task::CellType, 7); }),
            ErrorCode::SplitLeakage);
}

TEST(RunSetting, TransductiveSplitIsNeuronWise) {
  const auto recs = tiny_data();
  std::vector<NeuronEmbedding> emb;
  // Embeddings that spell out the type: a clean transductive probe.
  for (const auto& r : recs)
    for (const auto& n : r.neurons) {
      std::vector<double> v(3, 0.0);
      v[std::stoul(n.cell_type->substr(4))] = 1.0;
      emb.push_back({n.neuron_id, r.session_id, r.subject_id, n.group_id, v, 0});
    }
  SplitSpec s{Setting::Transductive, {"session000", "session001"}, {"session000", "session001"}, 1.0, 0.5};
  const auto rep = probe_embeddings(emb, recs, s, Task::CellType, 1);
  EXPECT_EQ(rep.n_train + rep.n_test, 16u);
  EXPECT_EQ(rep.macro_f1, 1.0);
}

TEST(Ablation, VariantsChangeOnlyTheirSetting) {
  RunConfig base = RunConfig::defaults_for(Modality::Spikes);
  const auto ns = apply_variant(base, Variant::NoSpatial);
  EXPECT_TRUE(ns.encoder.no_spatial);
  EXPECT_EQ(ns.sampler.max_neuron_dropout, base.sampler.max_neuron_dropout);
  const auto nd = apply_variant(base, Variant::NoNeuronDropout);
  EXPECT_EQ(nd.sampler.max_neuron_dropout, 0.0);
  EXPECT_FALSE(nd.encoder.no_spatial);
  EXPECT_EQ(parse_variant("no_spatial"), Variant::NoSpatial);
  EXPECT_EQ(code_of([] { parse_variant("nope"); }), ErrorCode::ConfigError);

  const auto recs = tiny_data();
  auto cfg = tiny_run(recs);
  cfg.trainer.total_steps = 5;
  const auto r = run_ablation(recs, cfg, Variant::NoSpatial, {Task::CellType, Task::Region});
  ASSERT_EQ(r.reports.size(), 2u);
  EXPECT_EQ(r.reports[0].config["variant"], "no_spatial");
  EXPECT_TRUE(r.reports[0].config["checkpoint"]["encoder"]["no_spatial"].get<bool>());
  EXPECT_EQ(r.reports[1].task, Task::Region);
}

TEST(BinSweep, DistinctConfigsAndCacheReuse) {
  const auto recs = tiny_data();
  auto cfg = tiny_run(recs);
  // Enough pretraining that probing is a small share of a cold run.
  cfg.trainer.total_steps = 120;
  const auto dir = nuclr::testing::temp_dir("bin_sweep");
  EXPECT_EQ(code_of([&] { sweep_bin_size(recs, {0.03}, cfg, dir); }), ErrorCode::NonDivisibleBin);

  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  const auto first = sweep_bin_size(recs, {0.01, 0.02, 0.05}, cfg, dir);
  const auto t1 = clock::now();
  const auto second = sweep_bin_size(recs, {0.01, 0.02, 0.05}, cfg, dir);
  const auto t2 = clock::now();
  ASSERT_EQ(first.size(), 3u);
  std::set<std::string> echoes, ids;
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_FALSE(first[i].cache_hit);
    EXPECT_TRUE(second[i].cache_hit);
    echoes.insert(first[i].report.config.dump());
    ids.insert(first[i].report.checkpoint_id);
    EXPECT_EQ(to_json(first[i].report).dump(), to_json(second[i].report).dump());
  }
  EXPECT_EQ(echoes.size(), 3u);
  EXPECT_EQ(ids.size(), 3u);
  EXPECT_EQ(first[0].report.config["checkpoint"]["encoder"]["F"], 100);
  const double cold = std::chrono::duration<double>(t1 - t0).count();
  const double warm = std::chrono::duration<double>(t2 - t1).count();
  EXPECT_LT(warm, 0.05 * cold) << "cold " << cold << " s, warm " << warm << " s";

  // A single bin size is one pretrain plus one probe.
  const auto one = sweep_bin_size(recs, {0.02}, cfg, nuclr::testing::temp_dir("bin_sweep_one"));
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(to_json(one[0].report).dump(), to_json(first[1].report).dump());
}

TEST(RunConfig, DefaultsRoundTripAndStrictKeys) {
  const auto d = run_config_from_json(nlohmann::json::object());
  EXPECT_EQ(d.encoder.D, 256u);
  EXPECT_EQ(d.encoder.P, 10u);
  EXPECT_EQ(d.encoder.F, 50u);
  EXPECT_EQ(d.trainer.batch_size, 128u);
  EXPECT_EQ(d.loss.temperature, 0.1);
  const auto back = run_config_from_json(to_json(d));
  EXPECT_EQ(to_json(back).dump(), to_json(d).dump());

  const auto ca = run_config_from_json({{"data", {{"modality", "calcium"}}}});
  EXPECT_EQ(ca.data.t_ctx_s, 30.0);
  EXPECT_EQ(ca.trainer.batch_size, 16u);
  EXPECT_EQ(ca.sampler.delta_t_max_s, 240.0);
  EXPECT_EQ(ca.encoder.P, 30u);
  EXPECT_EQ(ca.encoder.F, 10u);
  EXPECT_EQ(ca.synth.modality, Modality::Calcium);

  const auto custom = run_config_from_json({{"data", {{"bin_size_s", 0.05}}}, {"encoder", {{"D", 32}}}});
  EXPECT_EQ(custom.encoder.F, 20u);
  EXPECT_EQ(custom.encoder.D, 32u);

  EXPECT_EQ(code_of([] { run_config_from_json({{"encoder", {{"depth", 3}}}}); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { run_config_from_json({{"model", nlohmann::json::object()}}); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { run_config_from_json({{"trainer", {{"batch_size", "big"}}}}); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { run_config_from_json({{"eval", {{"setting", "sideways"}}}}); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { run_config_from_json({{"encoder", {{"heads", 3}}}}); }), ErrorCode::ConfigError);
}

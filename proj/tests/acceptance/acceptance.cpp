// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nuclr/core/grad_check.hpp"
#include "nuclr/eval/experiments.hpp"
#include "nuclr/loss/contrastive.hpp"
#include "nuclr/model/encoder.hpp"
#include "nuclr/sampler/view_sampler.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace nuclr;

namespace {

// Pinned tolerances and thresholds.
constexpr double kLossOracleTol = 1e-10;
constexpr double kLossOracleSeconds = 10.0;
constexpr double kHandLossTol = 1e-9;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradSeconds = 120.0;
constexpr double kEquivarianceTol = 1e-5;
constexpr double kTimeShiftTol = 1e-5;
constexpr double kDropFreqTol = 0.01;
constexpr double kKsTol = 0.01;
constexpr double kTypeF1Min = 0.75;
constexpr double kAblationGapMin = 0.15;
constexpr double kRegionF1Min = 0.9;
constexpr double kLabelGapMax = 0.15;
constexpr double kMonotoneNoise = 0.05;
constexpr double kCalciumMargin = 0.2;
constexpr int kSeeds = 3;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

EncoderConfig small_encoder(std::size_t d, std::size_t p, std::size_t f) {
  EncoderConfig c;
  c.D = d;
  c.heads = 2;
  c.L_T = 1;
  c.L_ST = 1;
  c.F = f;
  c.P = p;
  c.rotary_t_min_s = 1.0;
  c.rotary_t_max_s = 32.0;
  return c;
}

template <class T>
ParamSet<T> randomized(const EncoderConfig& c, std::uint64_t seed, double sd) {
  auto ps = init_encoder_params<double>(c, RngStream(seed, 1));
  RngStream rng(seed, 2);
  for (auto& [name, e] : ps)
    for (auto& v : e.value.storage()) v += sd * rng.normal();
  return ps.template cast<T>();
}

PatchedView random_view(const EncoderConfig& c, std::size_t n, RngStream& rng) {
  PatchedView v;
  v.patches = nuclr::testing::random_tensor<double>({n, c.P, c.F}, rng);
  for (std::size_t i = 0; i < n; ++i) v.neuron_ids.push_back("n" + std::to_string(i));
  for (std::size_t p = 0; p < c.P; ++p) v.patch_timestamps_s.push_back(p + 0.5);
  return v;
}

Outcome loss_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  RngStream rng(101, 1);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto inst = oracle::random_loss_instance(rng);
    for (double tau : {1.0, 0.1})
      worst = std::max(worst, std::abs(pair_loss_value(inst.p1, inst.p2, inst.matched, tau) -
                                       oracle::pair_loss(inst.p1, inst.p2, inst.matched, tau)));
  }
  const double secs = seconds_since(t0);
  return {worst <= kLossOracleTol && secs < kLossOracleSeconds, fmt("max |diff| %.2e, %.2f s", worst, secs)};
}

Outcome hand_losses() {
  const std::vector<MatchedPair> m{{0, 0}, {1, 1}};
  const auto ortho = Tensor<double>::matrix({{1, 0}, {0, 1}});
  const auto same = Tensor<double>::matrix({{0.6, 0.8}, {0.6, 0.8}});
  const double a = pair_loss_value(ortho, ortho, m, 1.0);
  const double b = pair_loss_value(same, same, m, 1.0);
  const double ea = 2.0 * (std::numbers::ln2 - 1.0), eb = 2.0 * std::numbers::ln2;
  return {std::abs(a - ea) <= kHandLossTol && std::abs(b - eb) <= kHandLossTol,
          fmt("orthonormal %.9f (want %.9f), identical %.9f (want %.9f)", a, ea, b, eb)};
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  auto c = small_encoder(8, 2, 3);
  c.rotary_t_max_s = 16.0;
  c.linear_dropout = 0.2;
  c.attention_dropout = 0.1;
  auto ps = randomized<double>(c, 14, 0.2);
  RngStream rng(14, 1);
  const auto v1 = random_view(c, 3, rng), v2 = random_view(c, 3, rng);
  const std::vector<MatchedPair> m{{0, 1}, {1, 0}, {2, 2}};
  auto f = [&](Tape<double>& t, const ParamSet<double>& p) {
    RngStream drop(14, 99);  // same stream every evaluation freezes the masks
    Var y1 = encode(t, p, c, v1, ForwardMode::training(drop));
    Var y2 = encode(t, p, c, v2, ForwardMode::training(drop));
    return pair_loss(t, project_head(t, p, y1), project_head(t, p, y2), m, 0.1);
  };
  const auto res = grad_check_detailed(f, ps, 1e-6);
  const double secs = seconds_since(t0);
  return {res.max_relative_error < kGradRelTol && res.entries_checked == ps.total_elements() && secs < kGradSeconds,
          fmt("max rel err %.2e over %zu entries (worst %s), %.1f s", res.max_relative_error, res.entries_checked,
              res.worst_param.c_str(), secs)};
}

Outcome permutation_equivariance() {
  const auto c = small_encoder(16, 4, 5);
  const auto ps = randomized<float>(c, 7, 0.3);
  RngStream rng(7, 3);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(16);
    const auto v = random_view(c, n, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    PatchedView pv = v;
    const std::size_t block = c.P * c.F;
    for (std::size_t i = 0; i < n; ++i) {
      pv.neuron_ids[i] = v.neuron_ids[perm[i]];
      std::copy_n(v.patches.data().begin() + perm[i] * block, block, pv.patches.data().begin() + i * block);
    }
    const auto y = encode_eval(ps, c, v), yp = encode_eval(ps, c, pv);
    for (std::size_t i = 0; i < n; ++i)
      worst = std::max(worst, max_abs_diff(yp.data().subspan(i * c.D, c.D), y.data().subspan(perm[i] * c.D, c.D)));
  }
  return {worst < kEquivarianceTol, fmt("max abs deviation %.2e over 20 views", worst)};
}

Outcome time_shift() {
  const auto c = small_encoder(16, 4, 5);
  const auto ps = randomized<float>(c, 8, 0.3);
  RngStream rng(8, 1);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto v = random_view(c, 1 + rng.below(12), rng);
    const auto y = encode_eval(ps, c, v);
    auto s = v;
    const double shift = rng.uniform(-1000.0, 1000.0);
    for (auto& t : s.patch_timestamps_s) t += shift;
    worst = std::max(worst, max_abs_diff(encode_eval(ps, c, s).data(), y.data()));
  }
  return {worst < kTimeShiftTol, fmt("max abs deviation %.2e over 10 shifted views", worst)};
}

Outcome sampler_statistics() {
  constexpr int kDraws = 100000;
  RngStream rng(6, 1);
  std::vector<int> freq(6, 0);
  for (int i = 0; i < kDraws; ++i) ++freq[10 - neuron_dropout(10, rng).size()];
  double freq_dev = 0.0;
  for (int f : freq) freq_dev = std::max(freq_dev, std::abs(static_cast<double>(f) / kDraws - 1.0 / 6.0));

  const double t1 = 12.0, dt = 30.0, dur = 60.0, t_ctx = 10.0;
  const auto [lo, hi] = second_view_range(t1, dt, dur, t_ctx);
  std::vector<double> x(kDraws);
  for (auto& v : x) v = sample_second_view(t1, dt, dur, t_ctx, rng);
  std::sort(x.begin(), x.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double cdf = (x[i] - lo) / (hi - lo);
    ks = std::max({ks, (i + 1.0) / kDraws - cdf, cdf - static_cast<double>(i) / kDraws});
  }

  int bad_tiling = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const double w_ctx = rng.uniform(1.0, 20.0);
    const double duration = w_ctx + rng.uniform(0.0, 300.0);
    const auto w = epoch_windows(duration, w_ctx, rng);
    bool ok = !w.empty() && w.front() >= 0.0 && w.back() + w_ctx <= duration;
    for (std::size_t i = 1; i < w.size(); ++i) ok = ok && w[i] - w[i - 1] >= w_ctx * (1 - 1e-12);
    bad_tiling += !ok;
  }
  return {freq_dev <= kDropFreqTol && ks < kKsTol && bad_tiling == 0,
          fmt("drop-count max dev %.4f, KS %.4f, %d/50 tilings invalid", freq_dev, ks, bad_tiling)};
}

// End-to-end synthetic runs shared by the context, label and calcium criteria.
RunConfig synthetic_config(std::uint64_t seed, Modality m) {
  nlohmann::json j = {
      {"data", {{"modality", m == Modality::Calcium ? "calcium" : "spikes"}}},
      {"encoder", {{"D", 32}, {"heads", 4}, {"L_T", 1}, {"L_ST", 1}}},
      {"trainer", {{"total_steps", 2000}, {"batch_size", 16}, {"max_lr", 1e-3}, {"seed", seed}}},
      {"loss", {{"temperature", 0.1}}},
      {"synth", {{"n_animals", 8}, {"neurons_per_group", 24}, {"n_types", 3}, {"n_regions", 2},
                 {"duration_s", 600.0}, {"seed", seed}}},
      {"eval", {{"setting", "inductive_zero_shot"}, {"seed", seed}}}};
  if (m == Modality::Calcium) j["data"]["t_ctx_s"] = 30.0;
  return run_config_from_json(j);
}

struct SyntheticRun {
  std::vector<Recording> recs;
  RunConfig cfg;
  Checkpoint<float> ckpt;
  std::string id;
};

SyntheticRun pretrain_synthetic(std::uint64_t seed, Modality m, Variant v) {
  SyntheticRun r;
  r.cfg = synthetic_config(seed, m);
  r.recs = generate_dataset(r.cfg.synth);
  r.cfg.encoder.F = patch_features(r.cfg.data, data_sample_rate(r.recs));
  for (std::size_t i = 0; i < r.recs.size(); ++i)
    (i + 2 < r.recs.size() ? r.cfg.eval.train_sessions : r.cfg.eval.test_sessions).push_back(r.recs[i].session_id);
  r.cfg = apply_variant(r.cfg, v);
  const auto t0 = std::chrono::steady_clock::now();
  r.ckpt = pretrain_checkpoint(r.recs, r.cfg, r.cfg.eval.train_sessions);
  r.id = checkpoint_id(serialize_checkpoint(r.ckpt));
  std::fprintf(stderr, "  [%s seed %llu %s pretrained in %.0f s]\n", m == Modality::Calcium ? "calcium" : "spikes",
               static_cast<unsigned long long>(seed), to_string(v), seconds_since(t0));
  return r;
}

double probe_f1(const SyntheticRun& r, Task task, double label_ratio = 1.0) {
  auto split = r.cfg.eval.split();
  split.label_ratio = label_ratio;
  return run_setting(r.recs, split, r.ckpt, r.id, r.cfg.data, task, r.cfg.eval.seed, std::nullopt, r.cfg.eval.probe)
      .macro_f1;
}

const std::vector<double> kLabelRatios = {0.125, 0.25, 0.5, 1.0};

struct ContextResults {
  std::vector<double> type_full, type_no_spatial, region_full;
  std::map<double, std::vector<double>> by_ratio;
};

const ContextResults& context_results() {
  static const ContextResults res = [] {
    ContextResults out;
    for (int s = 0; s < kSeeds; ++s) {
      const auto full = pretrain_synthetic(s, Modality::Spikes, Variant::Full);
      out.type_full.push_back(probe_f1(full, Task::CellType));
      out.region_full.push_back(probe_f1(full, Task::Region));
      for (double q : kLabelRatios) out.by_ratio[q].push_back(probe_f1(full, Task::CellType, q));
      const auto ns = pretrain_synthetic(s, Modality::Spikes, Variant::NoSpatial);
      out.type_no_spatial.push_back(probe_f1(ns, Task::CellType));
      std::fprintf(stderr, "  [seed %d: type full %.3f no_spatial %.3f, region %.3f]\n", s, out.type_full.back(),
                   out.type_no_spatial.back(), out.region_full.back());
    }
    return out;
  }();
  return res;
}

Outcome synthetic_context() {
  const auto& r = context_results();
  const double full = median(r.type_full), ns = median(r.type_no_spatial), region = median(r.region_full);
  return {full >= kTypeF1Min && full - ns >= kAblationGapMin && region >= kRegionF1Min,
          fmt("median type F1 %.3f (>= %.2f), no_spatial %.3f, gap %.3f (>= %.2f), region %.3f (>= %.2f)", full,
              kTypeF1Min, ns, full - ns, kAblationGapMin, region, kRegionF1Min)};
}

Outcome label_efficiency() {
  const auto& r = context_results();
  std::vector<double> med;
  std::ostringstream os;
  for (double q : kLabelRatios) {
    med.push_back(median(r.by_ratio.at(q)));
    os << fmt("%.3f@%g ", med.back(), q);
  }
  bool monotone = true;
  for (std::size_t i = 1; i < med.size(); ++i) monotone = monotone && med[i] >= med[i - 1] - kMonotoneNoise;
  const double gap = med.back() - med.front();
  return {gap <= kLabelGapMax && monotone, os.str() + fmt("gap %.3f (<= %.2f), monotone %s", gap, kLabelGapMax,
                                                           monotone ? "yes" : "no")};
}

Outcome determinism() {
  auto cfg = RunConfig::defaults_for(Modality::Spikes);
  cfg.synth.n_animals = 2;
  cfg.synth.neurons_per_group = 8;
  cfg.synth.duration_s = 60.0;
  cfg.encoder.D = 16;
  cfg.encoder.heads = 2;
  cfg.encoder.L_T = 1;
  cfg.encoder.L_ST = 1;
  cfg.trainer.total_steps = 5;
  cfg.trainer.batch_size = 4;
  cfg.trainer.threads = 1;
  const auto recs = generate_dataset(cfg.synth);
  std::vector<std::string> sessions;
  for (const auto& r : recs) sessions.push_back(r.session_id);
  const auto a = serialize_checkpoint(pretrain_checkpoint(recs, cfg, sessions));
  const auto b = serialize_checkpoint(pretrain_checkpoint(recs, cfg, sessions));
  const auto dir = nuclr::testing::temp_dir("acceptance_det");
  save_checkpoint(deserialize_checkpoint<float>(a), dir / "c.ckpt");
  const auto reloaded = serialize_checkpoint(load_checkpoint<float>(dir / "c.ckpt"));
  return {a == b && reloaded == a && read_file_bytes(dir / "c.ckpt") == a,
          fmt("runs identical: %s, save(load(c)) identical: %s", a == b ? "yes" : "no", reloaded == a ? "yes" : "no")};
}

Outcome calcium_pathway() {
  const auto r = pretrain_synthetic(0, Modality::Calcium, Variant::Full);
  const double f1 = probe_f1(r, Task::CellType);
  const double need = 1.0 / 3.0 + kCalciumMargin;
  return {f1 >= need, fmt("type F1 %.3f (>= %.3f), T_ctx %.0f s", f1, need, r.cfg.data.t_ctx_s)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, loss_oracle},      {2, hand_losses},         {3, gradient_check},   {4, permutation_equivariance},
      {5, time_shift},       {6, sampler_statistics},  {7, synthetic_context}, {8, label_efficiency},
      {9, determinism},      {10, calcium_pathway}};
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& [n, run] : criteria) {
    if (!wanted.empty() && !wanted.contains(n)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %2d: %s  %s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures ? 1 : 0;
}

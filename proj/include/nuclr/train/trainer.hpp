// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <memory>
#include <thread>
#include <vector>

#include <json.hpp>

#include "nuclr/core/errors.hpp"
#include "nuclr/core/rng.hpp"
#include "nuclr/core/tape.hpp"
#include "nuclr/data/binning.hpp"
#include "nuclr/data/recording.hpp"
#include "nuclr/loss/contrastive.hpp"
#include "nuclr/model/encoder.hpp"
#include "nuclr/sampler/view_sampler.hpp"
#include "nuclr/train/optimizer.hpp"

namespace nuclr {

struct TrainConfig {
  std::size_t total_steps = 50000;
  std::size_t batch_size = 128;
  double max_lr = 5e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// 0 means one epoch of window slots.
  std::size_t warmup_steps = 0;
  std::uint64_t seed = 0;
  /// Periodic checkpoint interval in steps; 0 disables.
  std::size_t checkpoint_every = 0;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
  /// Batch elements evaluated concurrently. Results do not depend on it.
  std::size_t threads = 1;

  static TrainConfig defaults_for(Modality m) {
    TrainConfig c;
    if (m == Modality::Calcium) {
      c.batch_size = 16;
      c.max_lr = 1.25e-4;
    }
    return c;
  }

  void validate() const {
    require(batch_size > 0, ErrorCode::ConfigError, "batch_size must be positive");
    require(max_lr > 0.0 && weight_decay >= 0.0, ErrorCode::ConfigError, "invalid learning rate or weight decay");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0, ErrorCode::ConfigError,
            "invalid AdamW betas/eps");
    require(threads > 0, ErrorCode::ConfigError, "threads must be positive");
    require(warmup_steps == 0 || total_steps == 0 || warmup_steps < total_steps, ErrorCode::ConfigError,
            "warmup_steps must be smaller than total_steps");
  }
};

struct StepMetrics {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::size_t n_pairs = 0;
  double wall_ms = 0.0;
};

inline nlohmann::json to_json(const StepMetrics& m) {
  return {{"step", m.step}, {"lr", m.lr}, {"loss", m.loss}, {"n_pairs", m.n_pairs}, {"wall_ms", m.wall_ms}};
}

/// One (recording, group, window start) training sample.
struct WindowSlot {
  std::size_t recording = 0;
  std::size_t group = 0;
  double t1 = 0.0;
};

/// Groups of each recording that can form a view pair (>= 2 neurons).
inline std::vector<std::vector<Group>> trainable_groups(const std::vector<Recording>& recs) {
  std::vector<std::vector<Group>> out;
  std::size_t total = 0;
  for (const auto& r : recs) {
    out.emplace_back();
    for (auto& g : r.groups())
      if (g.neurons.size() >= 2) out.back().push_back(std::move(g));
    total += out.back().size();
  }
  require(total > 0, ErrorCode::GroupTooSmall, "no group with at least 2 neurons in the training set");
  return out;
}

/// Every window slot of one epoch: each recording is tiled from its own
/// random jitter and every trainable group of it gets every window.
inline std::vector<WindowSlot> epoch_slots(const std::vector<Recording>& recs,
                                           const std::vector<std::vector<Group>>& groups, double t_ctx,
                                           RngStream rng) {
  std::vector<WindowSlot> slots;
  for (std::size_t r = 0; r < recs.size(); ++r) {
    if (groups[r].empty()) continue;
    RngStream jr = rng.fork({r});
    for (double t : epoch_windows(recs[r].duration_s, t_ctx, jr))
      for (std::size_t g = 0; g < groups[r].size(); ++g) slots.push_back({r, g, t});
  }
  return slots;
}

/// One epoch in steps: ceil(sum_r floor(duration_r / T_ctx) * groups_r / batch).
inline std::size_t steps_per_epoch(const std::vector<Recording>& recs, const std::vector<std::vector<Group>>& groups,
                                   double t_ctx, std::size_t batch) {
  std::size_t slots = 0;
  for (std::size_t r = 0; r < recs.size(); ++r)
    slots += static_cast<std::size_t>(std::floor(recs[r].duration_s / t_ctx + 1e-9)) * groups[r].size();
  return std::max<std::size_t>(1, (slots + batch - 1) / batch);
}

/// Streams shuffled epochs of window slots; a partial last batch ends an epoch.
class SlotSampler {
 public:
  SlotSampler(const std::vector<Recording>& recs, const std::vector<std::vector<Group>>& groups, double t_ctx,
              RngStream rng)
      : recs_(recs), groups_(groups), t_ctx_(t_ctx), rng_(rng) {}

  std::vector<WindowSlot> next_batch(std::size_t batch) {
    if (pos_ >= slots_.size()) refill();
    const std::size_t end = std::min(slots_.size(), pos_ + batch);
    std::vector<WindowSlot> out(slots_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                slots_.begin() + static_cast<std::ptrdiff_t>(end));
    pos_ = end;
    return out;
  }

  std::size_t epoch() const { return epoch_; }

 private:
  void refill() {
    RngStream er = rng_.fork({epoch_++});
    slots_ = epoch_slots(recs_, groups_, t_ctx_, er.fork({0}));
    require(!slots_.empty(), ErrorCode::RecordingTooShort, "no training windows");
    RngStream sr = er.fork({1});
    sr.shuffle(slots_);
    pos_ = 0;
  }

  const std::vector<Recording>& recs_;
  const std::vector<std::vector<Group>>& groups_;
  double t_ctx_;
  RngStream rng_;
  std::vector<WindowSlot> slots_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

/// Everything the pretraining loop needs besides the data.
struct PretrainSetup {
  DataConfig data;
  SamplerConfig sampler;
  EncoderConfig encoder;
  LossConfig loss;
  TrainConfig train;
};

template <class T>
struct TrainHooks {
  std::function<void(const StepMetrics&)> on_step;
  std::function<void(std::size_t step, const ParamSet<T>&)> on_checkpoint;
};

namespace detail {

inline constexpr std::uint64_t kTrainStream = 0x7072657472ull;

/// Forward and backward of one view pair; the tape keeps the gradients.
template <class T>
struct PairWork {
  const ViewPair* vp = nullptr;
  RngStream drop;
  std::unique_ptr<Tape<T>> tape;
  double loss = 0.0;
  std::exception_ptr error;

  void run(const ParamSet<T>& ps, const EncoderConfig& ec, T tau) {
    try {
      tape = std::make_unique<Tape<T>>();
      Var y1 = encode(*tape, ps, ec, vp->view1, ForwardMode::training(drop));
      Var y2 = encode(*tape, ps, ec, vp->view2, ForwardMode::training(drop));
      Var l = pair_loss(*tape, project_head(*tape, ps, y1), project_head(*tape, ps, y2), vp->matched, tau);
      loss = static_cast<double>(tape->scalar(l));
      require(std::isfinite(loss), ErrorCode::NonFinite, "non-finite pair loss in group " + vp->group_id);
      tape->backward(l);
    } catch (...) {
      error = std::current_exception();
    }
  }
};

}  // namespace detail

template <class T>
ParamSet<T> initial_params(const EncoderConfig& ec, std::uint64_t seed) {
  return init_encoder_params<T>(ec, RngStream(seed, detail::kTrainStream).fork({0}));
}

/// Pretrain from `params` for setup.train.total_steps steps.
template <class T>
void pretrain(const std::vector<Recording>& recs, const PretrainSetup& s, ParamSet<T>& params,
              const TrainHooks<T>& hooks = {}) {
  s.train.validate();
  s.loss.validate();
  s.encoder.validate();
  const TrainConfig& tc = s.train;
  if (tc.total_steps == 0) return;
  const auto groups = trainable_groups(recs);
  const std::size_t warmup = tc.warmup_steps > 0
                                 ? tc.warmup_steps
                                 : std::min(steps_per_epoch(recs, groups, s.data.t_ctx_s, tc.batch_size),
                                            std::max<std::size_t>(1, tc.total_steps - 1));
  const RngStream base(tc.seed, detail::kTrainStream);
  SlotSampler sampler(recs, groups, s.data.t_ctx_s, base.fork({1}));
  AdamW<T> opt(AdamWConfig{tc.beta1, tc.beta2, tc.eps, tc.weight_decay});
  const T tau = static_cast<T>(s.loss.temperature);

  for (std::size_t step = 0; step < tc.total_steps; ++step) {
    const auto t_start = std::chrono::steady_clock::now();
    try {
      const auto batch = sampler.next_batch(tc.batch_size);
      std::vector<ViewPair> pairs;
      std::vector<detail::PairWork<T>> work;
      pairs.reserve(batch.size());
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const RngStream pr = base.fork({2, step, b});
        const auto& slot = batch[b];
        pairs.push_back(build_view_pair(recs[slot.recording], groups[slot.recording][slot.group], slot.t1, s.sampler,
                                        s.data, pr.fork({0})));
      }
      std::size_t total_nb = 0;
      for (std::size_t b = 0; b < pairs.size(); ++b) {
        const auto& vp = pairs[b];
        if (vp.n_b() == 0 || vp.view1.neurons() + vp.view2.neurons() <= 2) continue;
        total_nb += vp.n_b();
        work.push_back({&vp, base.fork({2, step, b}).fork({1}), nullptr, 0.0, nullptr});
      }
      require(total_nb > 0, ErrorCode::AllEmpty, "no view pair in the batch has a matched neuron");

      params.zero_grad();
      std::vector<PairLossTerm> terms;
      for (std::size_t lo = 0; lo < work.size(); lo += tc.threads) {
        const std::size_t hi = std::min(work.size(), lo + tc.threads);
        if (hi - lo == 1) {
          work[lo].run(params, s.encoder, tau);
        } else {
          std::vector<std::thread> pool;
          for (std::size_t i = lo; i < hi; ++i)
            pool.emplace_back([&, i] { work[i].run(params, s.encoder, tau); });
          for (auto& th : pool) th.join();
        }
        // Reduce in batch order so results do not depend on the thread count.
        for (std::size_t i = lo; i < hi; ++i) {
          if (work[i].error) std::rethrow_exception(work[i].error);
          const std::size_t nb = work[i].vp->n_b();
          work[i].tape->accumulate_param_grads(params, static_cast<T>(static_cast<double>(nb) / total_nb));
          work[i].tape.reset();
          terms.push_back({work[i].loss, nb});
        }
      }
      const double loss = batch_loss(terms);
      if (tc.grad_clip > 0.0) clip_grad_norm(params, tc.grad_clip);
      const double lr = lr_at(step, warmup, tc.total_steps, tc.max_lr);
      opt.step(params, lr);
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
      if (hooks.on_step) hooks.on_step({step, lr, loss, terms.size(), ms});
    } catch (const Error& e) {
      fail(e.code(), "step " + std::to_string(step) + ": " + e.message());
    }
    if (hooks.on_checkpoint && tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0 &&
        step + 1 < tc.total_steps)
      hooks.on_checkpoint(step + 1, params);
  }
}

}  // namespace nuclr

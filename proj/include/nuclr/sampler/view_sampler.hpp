// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "nuclr/core/errors.hpp"
#include "nuclr/core/rng.hpp"
#include "nuclr/core/tape.hpp"
#include "nuclr/data/binning.hpp"
#include "nuclr/data/recording.hpp"

namespace nuclr {

struct SamplerConfig {
  double delta_t_max_s = 30.0;
  double max_neuron_dropout = 0.5;
  /// When false the second window is drawn from the part of the range that
  /// does not overlap the first (falling back to the full range if empty).
  bool allow_view_overlap = true;

  static SamplerConfig defaults_for(Modality m) {
    SamplerConfig c;
    if (m == Modality::Calcium) c.delta_t_max_s = 240.0;
    return c;
  }
};

/// Window starts j, j + T_ctx, j + 2 T_ctx, ... that end inside the recording.
inline std::vector<double> epoch_windows_with_jitter(double duration_s, double t_ctx, double jitter) {
  require(duration_s >= t_ctx, ErrorCode::RecordingTooShort,
          "recording of " + std::to_string(duration_s) + " s is shorter than T_ctx " + std::to_string(t_ctx));
  std::vector<double> starts;
  for (std::size_t k = 0;; ++k) {
    const double s = jitter + static_cast<double>(k) * t_ctx;
    if (s + t_ctx > duration_s) break;
    starts.push_back(s);
  }
  return starts;
}

/// Draws a shared jitter uniformly from [0, T_ctx) and tiles the recording.
inline std::vector<double> epoch_windows(double duration_s, double t_ctx, RngStream& rng) {
  require(duration_s >= t_ctx, ErrorCode::RecordingTooShort,
          "recording of " + std::to_string(duration_s) + " s is shorter than T_ctx " + std::to_string(t_ctx));
  return epoch_windows_with_jitter(duration_s, t_ctx, rng.uniform(0.0, t_ctx));
}

/// Clamped range the second view's start is drawn from.
inline std::pair<double, double> second_view_range(double t1, double delta_t_max, double duration_s, double t_ctx) {
  return {std::max(0.0, t1 - delta_t_max), std::min(duration_s - t_ctx, t1 + delta_t_max)};
}

inline double sample_second_view(double t1, double delta_t_max, double duration_s, double t_ctx, RngStream& rng,
                                 bool allow_overlap = true) {
  auto [lo, hi] = second_view_range(t1, delta_t_max, duration_s, t_ctx);
  if (hi <= lo) return t1;
  if (!allow_overlap) {
    const double left = std::max(0.0, (t1 - t_ctx) - lo);
    const double right = std::max(0.0, hi - (t1 + t_ctx));
    if (left + right > 0.0) {
      const double u = rng.uniform(0.0, left + right);
      return u < left ? lo + u : t1 + t_ctx + (u - left);
    }
  }
  return rng.uniform(lo, hi);
}

/// Indices kept after dropping N_drop ~ U{0, ..., floor(max_fraction * N)}
/// uniformly chosen neurons; ascending order.
inline std::vector<std::size_t> neuron_dropout(std::size_t n, RngStream& rng, double max_fraction = 0.5) {
  require(n >= 1, ErrorCode::EmptyView, "neuron_dropout on an empty population");
  const auto max_drop = static_cast<std::size_t>(std::floor(max_fraction * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (max_drop == 0) return idx;
  const auto n_drop = static_cast<std::size_t>(rng.below(max_drop + 1));
  // Partial Fisher-Yates: the first n_drop slots become the dropped set.
  for (std::size_t i = 0; i < n_drop; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  std::vector<std::size_t> kept(idx.begin() + static_cast<std::ptrdiff_t>(n_drop), idx.end());
  std::sort(kept.begin(), kept.end());
  return kept;
}

/// Two views of one population plus the neurons present in both.
struct ViewPair {
  std::string session_id;
  std::string group_id;
  PatchedView view1;
  PatchedView view2;
  std::vector<std::size_t> kept1;  // recording neuron indices of view1 rows
  std::vector<std::size_t> kept2;
  std::vector<MatchedPair> matched;

  std::size_t n_b() const { return matched.size(); }
};

/// Pairs (i, j) with view1 row i and view2 row j holding the same neuron.
inline std::vector<MatchedPair> match_neurons(const std::vector<std::size_t>& kept1,
                                              const std::vector<std::size_t>& kept2) {
  std::vector<MatchedPair> out;
  std::size_t j = 0;
  for (std::size_t i = 0; i < kept1.size(); ++i) {
    while (j < kept2.size() && kept2[j] < kept1[i]) ++j;
    if (j < kept2.size() && kept2[j] == kept1[i]) out.push_back({i, j});
  }
  return out;
}

inline ViewPair build_view_pair(const Recording& rec, const Group& group, double t1, const SamplerConfig& sc,
                                const DataConfig& dc, RngStream rng) {
  require(group.neurons.size() >= 2, ErrorCode::GroupTooSmall,
          "group " + group.group_id + " of " + rec.session_id + " has fewer than 2 neurons");
  ViewPair vp;
  vp.session_id = rec.session_id;
  vp.group_id = group.group_id;
  RngStream time_rng = rng.fork({1});
  RngStream drop1 = rng.fork({2});
  RngStream drop2 = rng.fork({3});
  const double t2 = sample_second_view(t1, sc.delta_t_max_s, rec.duration_s, dc.t_ctx_s, time_rng, sc.allow_view_overlap);
  const auto local1 = neuron_dropout(group.neurons.size(), drop1, sc.max_neuron_dropout);
  const auto local2 = neuron_dropout(group.neurons.size(), drop2, sc.max_neuron_dropout);
  for (auto i : local1) vp.kept1.push_back(group.neurons[i]);
  for (auto i : local2) vp.kept2.push_back(group.neurons[i]);
  vp.view1 = make_view(rec, vp.kept1, t1, dc);
  vp.view2 = make_view(rec, vp.kept2, t2, dc);
  vp.matched = match_neurons(vp.kept1, vp.kept2);
  return vp;
}

}  // namespace nuclr

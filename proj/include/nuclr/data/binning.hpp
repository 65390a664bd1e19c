// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nuclr/core/errors.hpp"
#include "nuclr/core/tensor.hpp"
#include "nuclr/data/recording.hpp"

namespace nuclr {

/// Preprocessing settings shared by sampling, training and embedding.
struct DataConfig {
  Modality modality = Modality::Spikes;
  double bin_size_s = 0.02;
  double t_ctx_s = 10.0;
  double t_patch_s = 1.0;
  /// "raw" (counts as-is) or "log1p".
  std::string count_transform = "raw";

  static DataConfig defaults_for(Modality m) {
    DataConfig c;
    c.modality = m;
    if (m == Modality::Calcium) c.t_ctx_s = 30.0;
    return c;
  }
};

namespace detail {

/// round(a / b) if b divides a within `rel` relative tolerance, else -1.
inline long exact_ratio(double a, double b, double rel = 1e-9) {
  if (!(a > 0.0) || !(b > 0.0)) return -1;
  const double r = a / b;
  const double n = std::round(r);
  if (n < 1.0 || std::abs(n * b - a) > rel * a) return -1;
  return static_cast<long>(n);
}

}  // namespace detail

/// Patches per window; throws NonDivisibleWindow unless T_patch divides T_ctx.
inline std::size_t patches_per_window(const DataConfig& c) {
  const long p = detail::exact_ratio(c.t_ctx_s, c.t_patch_s);
  require(p > 0, ErrorCode::NonDivisibleWindow,
          "T_patch " + std::to_string(c.t_patch_s) + " does not divide T_ctx " + std::to_string(c.t_ctx_s));
  return static_cast<std::size_t>(p);
}

/// Spike bins per patch; throws NonDivisibleBin unless the bin divides T_patch.
inline std::size_t bins_per_patch(const DataConfig& c) {
  const long f = detail::exact_ratio(c.t_patch_s, c.bin_size_s);
  require(f > 0, ErrorCode::NonDivisibleBin,
          "bin size " + std::to_string(c.bin_size_s) + " does not divide T_patch " + std::to_string(c.t_patch_s));
  return static_cast<std::size_t>(f);
}

/// Calcium samples per patch; the patch length must be a whole number of samples.
inline std::size_t samples_per_patch(const DataConfig& c, double sample_rate_hz) {
  const double s = c.t_patch_s * sample_rate_hz;
  const double n = std::round(s);
  require(n >= 1.0 && std::abs(n - s) <= 1e-9 * s, ErrorCode::NonDivisible,
          "T_patch is not a whole number of samples at " + std::to_string(sample_rate_hz) + " Hz");
  return static_cast<std::size_t>(n);
}

/// Feature size F of one patch for the configured modality.
inline std::size_t patch_features(const DataConfig& c, double sample_rate_hz) {
  return c.modality == Modality::Spikes ? bins_per_patch(c) : samples_per_patch(c, sample_rate_hz);
}

/// Counts per left-closed, right-open bin [t0 + k*bin, t0 + (k+1)*bin).
/// A spike exactly on an edge belongs to the bin on its right.
/// `spike_times` must be sorted. Pass `duration_s` > 0 to range-check the
/// window against the recording.
inline std::vector<int> bin_spikes(std::span<const double> spike_times, double t0, double t_ctx, double bin_size,
                                   double duration_s = -1.0) {
  const long nbins = detail::exact_ratio(t_ctx, bin_size);
  require(nbins > 0, ErrorCode::NonDivisibleWindow,
          "bin size " + std::to_string(bin_size) + " does not divide window " + std::to_string(t_ctx));
  require(t0 >= 0.0, ErrorCode::WindowOutOfRange, "window start " + std::to_string(t0) + " < 0");
  if (duration_s > 0.0)
    require(t0 + t_ctx <= duration_s * (1.0 + 1e-12), ErrorCode::WindowOutOfRange,
            "window [" + std::to_string(t0) + ", " + std::to_string(t0 + t_ctx) + ") exceeds duration " +
                std::to_string(duration_s));
  const auto B = static_cast<std::size_t>(nbins);
  std::vector<int> counts(B, 0);
  // Edges are snapped within kEdgeSnap bin widths, so a spike printed as
  // 0.12 lands in [0.12, 0.14) even though 0.1 + 0.02 > 0.12 in binary.
  constexpr double kEdgeSnap = 1e-9;
  auto it = std::lower_bound(spike_times.begin(), spike_times.end(), t0 - kEdgeSnap * bin_size);
  for (; it != spike_times.end(); ++it) {
    const double k = std::floor((*it - t0) / bin_size + kEdgeSnap);
    if (k < 0.0) continue;
    if (k >= static_cast<double>(B)) break;
    ++counts[static_cast<std::size_t>(k)];
  }
  return counts;
}

/// Reshape B counts into [B / F, F] real patches.
template <class T = double>
Tensor<T> patch_bins(std::span<const int> counts, std::size_t bins_per_patch) {
  require(bins_per_patch > 0 && !counts.empty() && counts.size() % bins_per_patch == 0, ErrorCode::NonDivisible,
          std::to_string(bins_per_patch) + " bins per patch does not divide " + std::to_string(counts.size()));
  std::vector<T> data(counts.begin(), counts.end());
  return Tensor<T>({counts.size() / bins_per_patch, bins_per_patch}, std::move(data));
}

/// First sample index of a window starting at t0 (nearest-sample snapping).
inline std::size_t snap_to_sample(double t0, double sample_rate_hz) {
  return static_cast<std::size_t>(std::llround(std::max(0.0, t0) * sample_rate_hz));
}

/// Contiguous [P, F] patches of a uniformly sampled trace over
/// [t0, t0 + T_ctx), with t0 snapped to the nearest sample.
template <class T = double>
Tensor<T> patch_trace(std::span<const double> trace, double sample_rate_hz, double t0, double t_ctx,
                      std::size_t samples_per_patch) {
  require(t0 >= 0.0, ErrorCode::WindowOutOfRange, "window start " + std::to_string(t0) + " < 0");
  require(samples_per_patch > 0, ErrorCode::NonDivisible, "samples_per_patch must be positive");
  const auto total = static_cast<std::size_t>(std::llround(t_ctx * sample_rate_hz));
  require(total > 0 && total % samples_per_patch == 0, ErrorCode::NonDivisible,
          "window of " + std::to_string(total) + " samples is not a whole number of patches");
  const std::size_t start = snap_to_sample(t0, sample_rate_hz);
  require(start + total <= trace.size(), ErrorCode::WindowOutOfRange,
          "window samples [" + std::to_string(start) + ", " + std::to_string(start + total) + ") exceed trace length " +
              std::to_string(trace.size()));
  return Tensor<T>({total / samples_per_patch, samples_per_patch},
                   std::vector<T>(trace.begin() + static_cast<std::ptrdiff_t>(start),
                                  trace.begin() + static_cast<std::ptrdiff_t>(start + total)));
}

/// A window of a population after preprocessing: [N, P, F] patches.
struct PatchedView {
  double window_start_s = 0.0;
  std::vector<std::string> neuron_ids;
  Tensor<double> patches;                 // [N, P, F]
  std::vector<double> patch_timestamps_s;  // P patch centers

  std::size_t neurons() const { return neuron_ids.size(); }
  std::size_t num_patches() const { return patches.dim(1); }
  std::size_t features() const { return patches.dim(2); }
};

/// Window-relative patch centers (p + 1/2) * T_patch.
inline std::vector<double> patch_centers(const DataConfig& c) {
  const std::size_t P = patches_per_window(c);
  std::vector<double> t(P);
  for (std::size_t p = 0; p < P; ++p) t[p] = (static_cast<double>(p) + 0.5) * c.t_patch_s;
  return t;
}

/// Preprocess the listed neurons of `rec` over [t0, t0 + T_ctx).
inline PatchedView make_view(const Recording& rec, std::span<const std::size_t> neuron_indices, double t0,
                             const DataConfig& cfg) {
  require(!neuron_indices.empty(), ErrorCode::EmptyView, "view with no neurons");
  require(cfg.modality == rec.modality, ErrorCode::ConfigError,
          "config modality " + std::string(to_string(cfg.modality)) + " does not match recording " + rec.session_id);
  const std::size_t P = patches_per_window(cfg);
  const std::size_t F = patch_features(cfg, rec.sample_rate_hz);
  PatchedView view;
  view.window_start_s = t0;
  view.patch_timestamps_s = patch_centers(cfg);
  std::vector<double> data;
  data.reserve(neuron_indices.size() * P * F);
  for (std::size_t idx : neuron_indices) {
    require(idx < rec.neurons.size(), ErrorCode::IndexOutOfRange, "neuron index out of range");
    view.neuron_ids.push_back(rec.neurons[idx].neuron_id);
    if (rec.modality == Modality::Spikes) {
      const auto counts = bin_spikes(rec.spikes[idx], t0, cfg.t_ctx_s, cfg.bin_size_s, rec.duration_s);
      for (int c : counts)
        data.push_back(cfg.count_transform == "log1p" ? std::log1p(static_cast<double>(c)) : static_cast<double>(c));
    } else {
      const auto patches = patch_trace(rec.traces[idx], rec.sample_rate_hz, t0, cfg.t_ctx_s, F);
      data.insert(data.end(), patches.data().begin(), patches.data().end());
    }
  }
  view.patches = Tensor<double>({neuron_indices.size(), P, F}, std::move(data));
  return view;
}

}  // namespace nuclr

// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic populations with planted identity. Every neuron fires as an
// inhomogeneous Poisson process
//   rate(t) = softplus(b + a * sin(2 pi f_region t + phi_type + psi_group)).
// psi_group is a random phase shared by a group, so cell type is only
// recoverable from a neuron's phase relative to its groupmates, while region
// (the rhythm frequency) is visible in any single neuron.

#pragma once

#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "nuclr/core/errors.hpp"
#include "nuclr/core/rng.hpp"
#include "nuclr/data/recording.hpp"

namespace nuclr {

struct SynthConfig {
  std::size_t n_animals = 8;
  std::size_t groups_per_animal = 1;
  std::size_t neurons_per_group = 24;
  double duration_s = 600.0;
  std::size_t n_types = 3;
  /// Type c has phase phase_span * c / n_types. 2*pi spaces the types evenly
  /// around the circle, which makes them cyclically interchangeable.
  double phase_span = std::numbers::pi;
  std::size_t n_regions = 2;
  /// Off-integer so that windows on a whole-second grid see drifting absolute
  /// phase; only the phase relative to the group stays stable.
  std::vector<double> region_freqs_hz = {1.0618, 2.0382, 4.0618, 7.0382};
  double amp_lo = 4.0;
  double amp_hi = 8.0;
  double base_lo = 6.0;
  double base_hi = 12.0;
  Modality modality = Modality::Spikes;
  double sample_rate_hz = 10.0;
  double calcium_decay_s = 0.5;
  double calcium_noise_sd = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    require(n_types >= 2, ErrorCode::ConfigError, "synth needs at least 2 cell types");
    require(n_regions >= 1 && n_regions <= region_freqs_hz.size(), ErrorCode::ConfigError,
            "n_regions must be between 1 and the number of region frequencies");
    require(n_animals >= 1 && groups_per_animal >= 1 && neurons_per_group >= 1, ErrorCode::ConfigError,
            "synth needs at least one animal, group and neuron");
    require(duration_s > 0.0 && amp_lo <= amp_hi && base_lo <= base_hi && amp_lo >= 0.0, ErrorCode::ConfigError,
            "invalid synth duration, amplitude or baseline range");
    if (modality == Modality::Calcium)
      require(sample_rate_hz > 0.0 && calcium_decay_s > 0.0 && calcium_noise_sd >= 0.0, ErrorCode::ConfigError,
              "invalid calcium settings");
  }
};

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

/// Firing-rate model of one neuron.
struct RateModel {
  double baseline = 0.0;
  double amplitude = 0.0;
  double freq_hz = 1.0;
  double phase = 0.0;

  double operator()(double t) const {
    return softplus(baseline + amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * t + phase));
  }
  double max_rate() const { return softplus(baseline + std::abs(amplitude)); }
};

/// Sorted spike times on [0, duration) by thinning a rate-`lambda_max`
/// homogeneous process.
template <class Rate>
std::vector<double> poisson_spikes(const Rate& rate, double lambda_max, double duration_s, RngStream& rng) {
  std::vector<double> out;
  if (!(lambda_max > 0.0)) return out;
  double t = 0.0;
  for (;;) {
    t += -std::log1p(-rng.uniform()) / lambda_max;
    if (t >= duration_s) break;
    const double r = rate(t);
    if (r >= lambda_max || rng.uniform() * lambda_max < r) out.push_back(t);
  }
  return out;
}

/// Exponential-kernel fluorescence sampled at k / rate, plus white noise.
/// A spike at t0 contributes exp(-(t_k - t0) / tau) to every sample t_k >= t0.
inline std::vector<double> synth_calcium(const std::vector<double>& spikes, double duration_s, double sample_rate_hz,
                                         double decay_tau_s, double noise_sd, RngStream& rng) {
  require(decay_tau_s > 0.0, ErrorCode::ConfigError, "calcium decay must be positive");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
  std::vector<double> trace(n, 0.0);
  const double dt = 1.0 / sample_rate_hz;
  const double step_decay = std::exp(-dt / decay_tau_s);
  std::size_t s = 0;
  double c = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double tk = static_cast<double>(k) * dt;
    c *= step_decay;
    for (; s < spikes.size() && spikes[s] <= tk; ++s) c += std::exp(-(tk - spikes[s]) / decay_tau_s);
    trace[k] = c;
  }
  if (noise_sd > 0.0)
    for (auto& v : trace) v += noise_sd * rng.normal();
  return trace;
}

inline std::string synth_type_label(std::size_t c) { return "type" + std::to_string(c); }
inline std::string synth_region_label(std::size_t r) { return "region" + std::to_string(r); }

namespace detail {
inline std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, width, i);
  return buf;
}
}  // namespace detail

/// Per-neuron rate models of one group plus its labels, in neuron order.
struct SynthGroup {
  std::vector<RateModel> rates;
  std::vector<std::size_t> types;
  std::size_t region = 0;
  double group_phase = 0.0;
};

inline SynthGroup synth_group(const SynthConfig& cfg, std::size_t global_group, RngStream rng) {
  SynthGroup g;
  g.region = global_group % cfg.n_regions;
  g.group_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const std::size_t n = cfg.neurons_per_group;
  g.types.resize(n);
  for (std::size_t i = 0; i < n; ++i) g.types[i] = i % cfg.n_types;
  RngStream shuffle_rng = rng.fork({0});
  shuffle_rng.shuffle(g.types);
  RngStream draw = rng.fork({1});
  for (std::size_t i = 0; i < n; ++i) {
    RateModel m;
    m.baseline = draw.uniform(cfg.base_lo, cfg.base_hi);
    m.amplitude = draw.uniform(cfg.amp_lo, cfg.amp_hi);
    m.freq_hz = cfg.region_freqs_hz[g.region];
    m.phase = cfg.phase_span * static_cast<double>(g.types[i]) / static_cast<double>(cfg.n_types) + g.group_phase;
    g.rates.push_back(m);
  }
  return g;
}

/// One recording per animal; groups are assigned regions round-robin by
/// global group index.
inline std::vector<Recording> generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  const RngStream base(cfg.seed, stream_id({0x73796e7468ull}));
  std::vector<Recording> out;
  for (std::size_t a = 0; a < cfg.n_animals; ++a) {
    Recording rec;
    rec.session_id = detail::numbered("session", a, 3);
    rec.subject_id = detail::numbered("animal", a, 3);
    rec.modality = cfg.modality;
    rec.duration_s = cfg.duration_s;
    if (cfg.modality == Modality::Calcium) rec.sample_rate_hz = cfg.sample_rate_hz;
    const RngStream ar = base.fork({a});
    for (std::size_t gi = 0; gi < cfg.groups_per_animal; ++gi) {
      const std::size_t global = a * cfg.groups_per_animal + gi;
      const auto g = synth_group(cfg, global, ar.fork({gi, 0}));
      const std::string gid = rec.session_id + "_g" + std::to_string(gi);
      for (std::size_t i = 0; i < g.rates.size(); ++i) {
        RngStream nr = ar.fork({gi, 1, i});
        rec.neurons.push_back({detail::numbered((gid + "_n").c_str(), i, 3), gid, synth_type_label(g.types[i]),
                               synth_region_label(g.region)});
        auto spikes = poisson_spikes(g.rates[i], g.rates[i].max_rate(), cfg.duration_s, nr);
        if (cfg.modality == Modality::Spikes) {
          rec.spikes.push_back(std::move(spikes));
        } else {
          RngStream noise = nr.fork({2});
          rec.traces.push_back(synth_calcium(spikes, cfg.duration_s, cfg.sample_rate_hz, cfg.calcium_decay_s,
                                             cfg.calcium_noise_sd, noise));
        }
      }
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace nuclr

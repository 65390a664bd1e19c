// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "nuclr/core/errors.hpp"

namespace nuclr {

enum class Modality { Spikes, Calcium };

inline std::string_view to_string(Modality m) { return m == Modality::Spikes ? "spikes" : "calcium"; }

inline Modality parse_modality(std::string_view s) {
  if (s == "spikes") return Modality::Spikes;
  if (s == "calcium") return Modality::Calcium;
  fail(ErrorCode::SchemaError, "unknown modality '" + std::string(s) + "'");
}

struct NeuronRecord {
  std::string neuron_id;
  std::string group_id;  // probe insertion (spikes) or whole session (calcium)
  std::optional<std::string> cell_type;
  std::optional<std::string> region;

  friend bool operator==(const NeuronRecord&, const NeuronRecord&) = default;
};

/// A population (insertion or session) within a recording.
struct Group {
  std::string group_id;
  std::vector<std::size_t> neurons;  // indices into Recording::neurons, ascending
};

/// One session's activity and neuron metadata. For spikes, `spikes[i]` holds
/// neuron i's sorted spike times in seconds; for calcium, `traces[i]` holds
/// round(duration_s * sample_rate_hz) uniformly spaced samples.
struct Recording {
  std::string session_id;
  std::string subject_id;
  Modality modality = Modality::Spikes;
  double duration_s = 0.0;
  double sample_rate_hz = 0.0;
  std::vector<NeuronRecord> neurons;
  std::vector<std::vector<double>> spikes;
  std::vector<std::vector<double>> traces;

  std::size_t trace_length() const { return static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz)); }

  /// Groups in order of first appearance.
  std::vector<Group> groups() const {
    std::vector<Group> out;
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < neurons.size(); ++i) {
      auto [it, inserted] = index.emplace(neurons[i].group_id, out.size());
      if (inserted) out.push_back(Group{neurons[i].group_id, {}});
      out[it->second].neurons.push_back(i);
    }
    return out;
  }

  std::optional<std::size_t> find_neuron(std::string_view id) const {
    for (std::size_t i = 0; i < neurons.size(); ++i)
      if (neurons[i].neuron_id == id) return i;
    return std::nullopt;
  }

  /// Throws SchemaError describing the first violated invariant.
  void validate() const {
    const std::string where = "session " + session_id + ": ";
    require(!session_id.empty(), ErrorCode::SchemaError, "empty session_id");
    require(duration_s > 0.0 && std::isfinite(duration_s), ErrorCode::SchemaError, where + "duration_s must be > 0");
    std::set<std::string> ids;
    for (const auto& n : neurons) {
      require(!n.neuron_id.empty(), ErrorCode::SchemaError, where + "empty neuron_id");
      require(!n.group_id.empty(), ErrorCode::SchemaError, where + "empty group_id for " + n.neuron_id);
      require(ids.insert(n.neuron_id).second, ErrorCode::SchemaError, where + "duplicate neuron_id " + n.neuron_id);
    }
    if (modality == Modality::Spikes) {
      require(spikes.size() == neurons.size(), ErrorCode::SchemaError, where + "one spike list per neuron required");
      for (std::size_t i = 0; i < spikes.size(); ++i) {
        const auto& s = spikes[i];
        require(std::is_sorted(s.begin(), s.end()), ErrorCode::SchemaError,
                where + "spike times not sorted for " + neurons[i].neuron_id);
        require(s.empty() || (s.front() >= 0.0 && s.back() < duration_s), ErrorCode::SchemaError,
                where + "spike time outside [0, duration) for " + neurons[i].neuron_id);
      }
    } else {
      require(sample_rate_hz > 0.0, ErrorCode::SchemaError, where + "calcium recording needs sample_rate_hz > 0");
      require(traces.size() == neurons.size(), ErrorCode::SchemaError, where + "one trace per neuron required");
      for (std::size_t i = 0; i < traces.size(); ++i)
        require(traces[i].size() == trace_length(), ErrorCode::SchemaError,
                where + "trace length mismatch for " + neurons[i].neuron_id);
    }
  }

  friend bool operator==(const Recording&, const Recording&) = default;
};

}  // namespace nuclr

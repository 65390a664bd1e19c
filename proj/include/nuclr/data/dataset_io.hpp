// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

// Dataset directory layout:
//   manifest.json            sessions, neurons, labels
//   spikes/<session_id>.csv  neuron_id,time_s
//   traces/<session_id>.csv  neuron_id,sample_index,value

#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nuclr/core/errors.hpp"
#include "nuclr/data/recording.hpp"

namespace nuclr {

inline constexpr int kDatasetFormatVersion = 1;

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) fail(ErrorCode::IoError, "cannot format number");
  return std::string(buf, end);
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(v), ErrorCode::SchemaError,
          where + ": not a finite number '" + std::string(s) + "'");
  return v;
}

inline long long parse_int(std::string_view s, const std::string& where) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && ptr == s.data() + s.size(), ErrorCode::SchemaError,
          where + ": not an integer '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class Fn>
void read_csv(const std::filesystem::path& path, std::string_view header, std::size_t columns, Fn&& on_row) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::MissingActivity, "cannot open " + path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::SchemaError, path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == header, ErrorCode::SchemaError,
          path.string() + ": header must be '" + std::string(header) + "', got '" + line + "'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    require(cells.size() == columns, ErrorCode::SchemaError, where + ": expected " + std::to_string(columns) + " fields");
    on_row(cells, where);
  }
}

template <class J>
const J& field(const J& obj, const char* name, const std::string& where) {
  require(obj.is_object() && obj.contains(name), ErrorCode::SchemaError, where + ": missing field '" + name + "'");
  return obj.at(name);
}

inline std::string string_field(const nlohmann::json& obj, const char* name, const std::string& where) {
  const auto& v = field(obj, name, where);
  require(v.is_string(), ErrorCode::SchemaError, where + ": field '" + name + "' must be a string");
  return v.get<std::string>();
}

inline double number_field(const nlohmann::json& obj, const char* name, const std::string& where) {
  const auto& v = field(obj, name, where);
  require(v.is_number(), ErrorCode::SchemaError, where + ": field '" + name + "' must be a number");
  return v.get<double>();
}

}  // namespace detail

/// Load every session of a dataset directory. Spike times are sorted on
/// load; a manifest neuron with no spike rows has zero spikes. Calcium
/// neurons must have every sample present.
inline std::vector<Recording> load_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = dir / "manifest.json";
  require(fs::is_regular_file(manifest_path), ErrorCode::SchemaError, manifest_path.string() + ": manifest not found");
  nlohmann::json manifest;
  {
    std::ifstream in(manifest_path);
    try {
      in >> manifest;
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::SchemaError, manifest_path.string() + ": " + e.what());
    }
  }
  const std::string mwhere = manifest_path.string();
  const auto& version = detail::field(manifest, "format_version", mwhere);
  require(version.is_number_integer() && version.get<int>() == kDatasetFormatVersion, ErrorCode::SchemaError,
          mwhere + ": unsupported format_version");
  const auto& sessions = detail::field(manifest, "sessions", mwhere);
  require(sessions.is_array(), ErrorCode::SchemaError, mwhere + ": 'sessions' must be an array");

  std::vector<Recording> out;
  for (std::size_t si = 0; si < sessions.size(); ++si) {
    const auto& js = sessions[si];
    const std::string where = mwhere + ": sessions[" + std::to_string(si) + "]";
    Recording rec;
    rec.session_id = detail::string_field(js, "session_id", where);
    rec.subject_id = detail::string_field(js, "subject_id", where);
    rec.modality = parse_modality(detail::string_field(js, "modality", where));
    rec.duration_s = detail::number_field(js, "duration_s", where);
    if (rec.modality == Modality::Calcium) rec.sample_rate_hz = detail::number_field(js, "sample_rate_hz", where);
    const auto& neurons = detail::field(js, "neurons", where);
    require(neurons.is_array(), ErrorCode::SchemaError, where + ": 'neurons' must be an array");
    for (std::size_t ni = 0; ni < neurons.size(); ++ni) {
      const auto& jn = neurons[ni];
      const std::string nwhere = where + ".neurons[" + std::to_string(ni) + "]";
      NeuronRecord n;
      n.neuron_id = detail::string_field(jn, "neuron_id", nwhere);
      n.group_id = detail::string_field(jn, "group_id", nwhere);
      require(n.neuron_id.find(',') == std::string::npos, ErrorCode::SchemaError, nwhere + ": neuron_id contains ','");
      if (jn.contains("cell_type") && !jn["cell_type"].is_null()) n.cell_type = detail::string_field(jn, "cell_type", nwhere);
      if (jn.contains("region") && !jn["region"].is_null()) n.region = detail::string_field(jn, "region", nwhere);
      rec.neurons.push_back(std::move(n));
    }
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < rec.neurons.size(); ++i) {
      require(index.emplace(rec.neurons[i].neuron_id, i).second, ErrorCode::SchemaError,
              where + ": duplicate neuron_id " + rec.neurons[i].neuron_id);
    }
    auto lookup = [&](std::string_view id, const std::string& w) {
      auto it = index.find(std::string(id));
      require(it != index.end(), ErrorCode::SchemaError, w + ": unknown neuron_id '" + std::string(id) + "'");
      return it->second;
    };

    if (rec.modality == Modality::Spikes) {
      rec.spikes.assign(rec.neurons.size(), {});
      const fs::path p = dir / "spikes" / (rec.session_id + ".csv");
      require(fs::is_regular_file(p), ErrorCode::MissingActivity, p.string() + ": activity file not found");
      detail::read_csv(p, "neuron_id,time_s", 2, [&](const auto& cells, const std::string& w) {
        const std::size_t i = lookup(cells[0], w);
        const double t = detail::parse_double(cells[1], w);
        require(t >= 0.0 && t < rec.duration_s, ErrorCode::SchemaError, w + ": time_s outside [0, duration_s)");
        rec.spikes[i].push_back(t);
      });
      for (auto& s : rec.spikes) std::sort(s.begin(), s.end());
    } else {
      const std::size_t len = rec.trace_length();
      rec.traces.assign(rec.neurons.size(), std::vector<double>(len, 0.0));
      std::vector<std::vector<bool>> seen(rec.neurons.size(), std::vector<bool>(len, false));
      const fs::path p = dir / "traces" / (rec.session_id + ".csv");
      require(fs::is_regular_file(p), ErrorCode::MissingActivity, p.string() + ": activity file not found");
      detail::read_csv(p, "neuron_id,sample_index,value", 3, [&](const auto& cells, const std::string& w) {
        const std::size_t i = lookup(cells[0], w);
        const long long k = detail::parse_int(cells[1], w);
        require(k >= 0 && static_cast<std::size_t>(k) < len, ErrorCode::SchemaError, w + ": sample_index out of range");
        require(!seen[i][k], ErrorCode::SchemaError, w + ": duplicate sample");
        seen[i][k] = true;
        rec.traces[i][k] = detail::parse_double(cells[2], w);
      });
      for (std::size_t i = 0; i < seen.size(); ++i)
        require(std::all_of(seen[i].begin(), seen[i].end(), [](bool b) { return b; }), ErrorCode::MissingActivity,
                p.string() + ": incomplete trace for " + rec.neurons[i].neuron_id);
    }
    rec.validate();
    out.push_back(std::move(rec));
  }
  require(!out.empty(), ErrorCode::SchemaError, mwhere + ": dataset has no sessions");
  return out;
}

inline nlohmann::json manifest_json(const std::vector<Recording>& recordings) {
  nlohmann::json sessions = nlohmann::json::array();
  for (const auto& rec : recordings) {
    nlohmann::json js;
    js["session_id"] = rec.session_id;
    js["subject_id"] = rec.subject_id;
    js["modality"] = std::string(to_string(rec.modality));
    js["duration_s"] = rec.duration_s;
    if (rec.modality == Modality::Calcium) js["sample_rate_hz"] = rec.sample_rate_hz;
    nlohmann::json neurons = nlohmann::json::array();
    for (const auto& n : rec.neurons) {
      nlohmann::json jn;
      jn["neuron_id"] = n.neuron_id;
      jn["group_id"] = n.group_id;
      if (n.cell_type) jn["cell_type"] = *n.cell_type;
      if (n.region) jn["region"] = *n.region;
      neurons.push_back(std::move(jn));
    }
    js["neurons"] = std::move(neurons);
    sessions.push_back(std::move(js));
  }
  return {{"format_version", kDatasetFormatVersion}, {"sessions", std::move(sessions)}};
}

/// Write recordings in the dataset directory format (UTF-8, LF endings).
inline void save_dataset(const std::vector<Recording>& recordings, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  require(!recordings.empty(), ErrorCode::SchemaError, "refusing to write an empty dataset");
  for (const auto& rec : recordings) rec.validate();
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    require(out.good(), ErrorCode::IoError, "cannot write " + (dir / "manifest.json").string());
    out << manifest_json(recordings).dump(2) << "\n";
  }
  for (const auto& rec : recordings) {
    const bool spikes = rec.modality == Modality::Spikes;
    const fs::path sub = dir / (spikes ? "spikes" : "traces");
    fs::create_directories(sub);
    std::ofstream out(sub / (rec.session_id + ".csv"), std::ios::binary);
    require(out.good(), ErrorCode::IoError, "cannot write activity for " + rec.session_id);
    std::string buf;
    if (spikes) {
      buf = "neuron_id,time_s\n";
      for (std::size_t i = 0; i < rec.neurons.size(); ++i)
        for (double t : rec.spikes[i]) buf += rec.neurons[i].neuron_id + "," + detail::format_double(t) + "\n";
    } else {
      buf = "neuron_id,sample_index,value\n";
      for (std::size_t i = 0; i < rec.neurons.size(); ++i)
        for (std::size_t k = 0; k < rec.traces[i].size(); ++k)
          buf += rec.neurons[i].neuron_id + "," + std::to_string(k) + "," + detail::format_double(rec.traces[i][k]) + "\n";
    }
    out << buf;
  }
}

}  // namespace nuclr

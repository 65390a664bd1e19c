// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint container:
//   "NUCLRCKP" | u64 header_len | JSON header | u32 n_arrays |
//   n_arrays x (u32 name_len | name | u8 dtype | u32 ndim | u64 dims[ndim] | payload)
// All integers and payloads are little-endian. dtype 0 = f32, 1 = f64.

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nuclr/core/errors.hpp"
#include "nuclr/core/param_set.hpp"
#include "nuclr/model/encoder.hpp"

#ifndef NUCLR_VERSION
#define NUCLR_VERSION "0.0.0"
#endif

namespace nuclr {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'N', 'U', 'C', 'L', 'R', 'C', 'K', 'P'};

template <class T>
struct Checkpoint {
  EncoderConfig encoder;
  std::uint64_t step = 0;
  std::vector<std::string> pretrain_sessions;
  std::vector<std::string> pretrain_subjects;
  /// Effective run configuration echoed from the producer.
  nlohmann::json config = nlohmann::json::object();
  std::string tool_version = NUCLR_VERSION;
  ParamSet<T> params;
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  static_assert(std::is_trivially_copyable_v<U>);
  unsigned char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  out.append(reinterpret_cast<const char*>(b), sizeof(U));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view s) : s_(s) {}

  template <class U>
  U get() {
    need(sizeof(U));
    unsigned char b[sizeof(U)];
    std::memcpy(b, s_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, b, sizeof(U));
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    require(n <= s_.size() - pos_, ErrorCode::SchemaError, "checkpoint truncated");
  }
  std::string_view s_;
  std::size_t pos_ = 0;
};

template <class T>
constexpr std::uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 0 : 1;
}

}  // namespace detail

template <class T>
nlohmann::json checkpoint_header(const Checkpoint<T>& c) {
  return {{"format_version", kCheckpointFormatVersion},
          {"encoder", to_json(c.encoder)},
          {"step", c.step},
          {"pretrain_sessions", c.pretrain_sessions},
          {"pretrain_subjects", c.pretrain_subjects},
          {"config", c.config},
          {"tool_version", c.tool_version},
          {"dtype", std::string(dtype_name<T>())}};
}

template <class T>
std::string serialize_checkpoint(const Checkpoint<T>& c) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::string header = checkpoint_header(c).dump();
  detail::put_le<std::uint64_t>(out, header.size());
  out += header;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(c.params.size()));
  for (const auto& [name, e] : c.params) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le<std::uint8_t>(out, detail::dtype_code<T>());
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.value.rank()));
    for (std::size_t d : e.value.shape()) detail::put_le<std::uint64_t>(out, d);
    for (T v : e.value.data()) detail::put_le<T>(out, v);
  }
  return out;
}

/// Parse a checkpoint. Arrays stored at another precision are converted.
template <class T>
Checkpoint<T> deserialize_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  require(r.take(sizeof(kCheckpointMagic)) == std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic)),
          ErrorCode::SchemaError, "not a checkpoint file (bad magic)");
  const auto header_len = r.get<std::uint64_t>();
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(r.take(header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::SchemaError, std::string("checkpoint header: ") + e.what());
  }
  Checkpoint<T> c;
  try {
    require(h.at("format_version").get<int>() == kCheckpointFormatVersion, ErrorCode::SchemaError,
            "unsupported checkpoint format_version");
    c.encoder = encoder_config_from_json(h.at("encoder"));
    c.step = h.at("step").get<std::uint64_t>();
    c.pretrain_sessions = h.at("pretrain_sessions").get<std::vector<std::string>>();
    c.pretrain_subjects = h.at("pretrain_subjects").get<std::vector<std::string>>();
    c.config = h.at("config");
    c.tool_version = h.at("tool_version").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::SchemaError, std::string("checkpoint header: ") + e.what());
  }
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name(r.take(r.get<std::uint32_t>()));
    const auto dtype = r.get<std::uint8_t>();
    require(dtype <= 1, ErrorCode::SchemaError, "unknown dtype for " + name);
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    Tensor<T> t(shape);
    for (auto& v : t.storage()) v = dtype == 0 ? static_cast<T>(r.get<float>()) : static_cast<T>(r.get<double>());
    c.params.add(name, std::move(t));
  }
  require(r.done(), ErrorCode::SchemaError, "trailing bytes after checkpoint arrays");
  return c;
}

/// 64-bit FNV-1a of the serialized bytes, as 16 hex digits.
inline std::string checkpoint_id(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string read_file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  require(in.good(), ErrorCode::IoError, "cannot open " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file_bytes(const std::filesystem::path& p, std::string_view bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  require(out.good(), ErrorCode::IoError, "cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <class T>
void save_checkpoint(const Checkpoint<T>& c, const std::filesystem::path& p) {
  write_file_bytes(p, serialize_checkpoint(c));
}

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& p) {
  return deserialize_checkpoint<T>(read_file_bytes(p));
}

}  // namespace nuclr

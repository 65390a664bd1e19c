// Copyright 2026 The nuclr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nuclr {

/// Machine-readable failure categories. The CLI prints the name on an
/// `error_code:` line and maps the category to an exit status.
enum class ErrorCode {
  ShapeMismatch,
  NonFinite,
  GraphReuse,
  NondeterministicFunction,
  NonDivisibleWindow,
  NonDivisible,
  WindowOutOfRange,
  SchemaError,
  MissingActivity,
  RecordingTooShort,
  GroupTooSmall,
  OddHeadDim,
  EmptyView,
  IndexOutOfRange,
  ZeroVector,
  EmptyMatched,
  EmptyDenominator,
  AllEmpty,
  MissingGradient,
  SingleClass,
  SplitLeakage,
  NonDivisibleBin,
  ConfigError,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::GraphReuse: return "GraphReuse";
    case ErrorCode::NondeterministicFunction: return "NondeterministicFunction";
    case ErrorCode::NonDivisibleWindow: return "NonDivisibleWindow";
    case ErrorCode::NonDivisible: return "NonDivisible";
    case ErrorCode::WindowOutOfRange: return "WindowOutOfRange";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::MissingActivity: return "MissingActivity";
    case ErrorCode::RecordingTooShort: return "RecordingTooShort";
    case ErrorCode::GroupTooSmall: return "GroupTooSmall";
    case ErrorCode::OddHeadDim: return "OddHeadDim";
    case ErrorCode::EmptyView: return "EmptyView";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::EmptyMatched: return "EmptyMatched";
    case ErrorCode::EmptyDenominator: return "EmptyDenominator";
    case ErrorCode::AllEmpty: return "AllEmpty";
    case ErrorCode::MissingGradient: return "MissingGradient";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::SplitLeakage: return "SplitLeakage";
    case ErrorCode::NonDivisibleBin: return "NonDivisibleBin";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// True for errors caused by bad input (configs, files, splits) rather than
/// by a failure during computation.
inline bool is_validation_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::SchemaError:
    case ErrorCode::MissingActivity:
    case ErrorCode::ConfigError:
    case ErrorCode::SplitLeakage:
    case ErrorCode::NonDivisibleWindow:
    case ErrorCode::NonDivisible:
    case ErrorCode::NonDivisibleBin:
    case ErrorCode::RecordingTooShort:
    case ErrorCode::GroupTooSmall:
    case ErrorCode::SingleClass:
    case ErrorCode::OddHeadDim:
    case ErrorCode::IoError:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace nuclr

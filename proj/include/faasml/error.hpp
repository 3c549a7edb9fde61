// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace faasml {

enum class ErrorCode {
  invalid_argument,
  parse,
  range,
  dimension_mismatch,
  numerical_divergence,
  payload_too_large,
  io,
  format,
  malformed_key,
  straggler_timeout,
  channel,
  config,
  estimate_failed,
  lifetime_exceeded,
  checkpoint_corrupt,
  aborted,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::parse: return "parse-error";
    case ErrorCode::range: return "range-error";
    case ErrorCode::dimension_mismatch: return "dimension-mismatch";
    case ErrorCode::numerical_divergence: return "numerical-divergence";
    case ErrorCode::payload_too_large: return "payload-too-large";
    case ErrorCode::io: return "io-error";
    case ErrorCode::format: return "format-error";
    case ErrorCode::malformed_key: return "malformed-key";
    case ErrorCode::straggler_timeout: return "straggler-timeout";
    case ErrorCode::channel: return "channel-error";
    case ErrorCode::config: return "config-error";
    case ErrorCode::estimate_failed: return "estimate-failed";
    case ErrorCode::lifetime_exceeded: return "lifetime-exceeded";
    case ErrorCode::checkpoint_corrupt: return "checkpoint-corrupt";
    case ErrorCode::aborted: return "aborted";
  }
  return "unknown";
}

/// Base exception for every failure raised by the library. The code lets
/// callers branch without RTTI; the subclasses below carry extra context.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error(ErrorCode::parse, "line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class RangeError : public Error {
 public:
  RangeError(std::size_t line, const std::string& message)
      : Error(ErrorCode::range, "line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class StragglerTimeout : public Error {
 public:
  StragglerTimeout(std::vector<std::size_t> missing, const std::string& what)
      : Error(ErrorCode::straggler_timeout, what + " (missing ranks: " + join(missing) + ")"),
        missing_(std::move(missing)) {}
  const std::vector<std::size_t>& missing_ranks() const noexcept { return missing_; }

 private:
  static std::string join(const std::vector<std::size_t>& ranks) {
    std::string out;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(ranks[i]);
    }
    return out.empty() ? "none" : out;
  }
  std::vector<std::size_t> missing_;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string key_path, const std::string& message)
      : Error(ErrorCode::config, key_path + ": " + message), key_path_(std::move(key_path)) {}
  const std::string& key_path() const noexcept { return key_path_; }

 private:
  std::string key_path_;
};

class EstimateFailed : public Error {
 public:
  EstimateFailed(double best_loss, const std::string& message)
      : Error(ErrorCode::estimate_failed, message + " (best loss " + std::to_string(best_loss) + ")"),
        best_loss_(best_loss) {}
  double best_loss() const noexcept { return best_loss_; }

 private:
  double best_loss_;
};

}  // namespace faasml

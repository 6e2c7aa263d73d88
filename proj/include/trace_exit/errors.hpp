// Copyright 2026 The trace-exit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace trace_exit {

// Base for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse, e.g. feeding a segmenter after finalize().
class UsageError : public Error {
 public:
  using Error::Error;
};

// Input that violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Bad or incomplete configuration. The CLI maps these to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Replay file that cannot be loaded. Carries the 1-based line number when known.
class FormatError : public ValidationError {
 public:
  FormatError(const std::string& what, std::size_t line)
      : ValidationError(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Model access failed. `step` is the reasoning step being processed, if any.
class DriverError : public Error {
 public:
  DriverError(const std::string& what, bool retryable, std::optional<int> step = std::nullopt)
      : Error(step ? "step " + std::to_string(*step) + ": " + what : what),
        retryable_(retryable),
        step_(step) {}

  bool retryable() const noexcept { return retryable_; }
  std::optional<int> step() const noexcept { return step_; }

 private:
  bool retryable_;
  std::optional<int> step_;
};

}  // namespace trace_exit

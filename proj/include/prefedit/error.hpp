// Copyright 2026 The prefedit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace prefedit {

/// Base class of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input (bad JSON, missing field, wrong type).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Cross-record constraint violated (dangling reference, duplicate id).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// A value outside its documented domain.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Undefined or non-finite numerics (constant-vector correlation, divergence).
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Requested operation is not available for this object.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

}  // namespace prefedit

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace dysi {

// Base for every error the library raises. `code()` is a stable
// machine-parsable identifier; the CLI prints it verbatim.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& m) : Error("shape_error", m) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& m) : Error("index_error", m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error("config_error", m) {}
};

// Degenerate or malformed user-supplied data (empty corpus, all-pad row, ...).
class InputError : public Error {
 public:
  explicit InputError(const std::string& m) : Error("input_error", m) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& m) : Error("parse_error", m) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& m) : Error("numeric_error", m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error("io_error", m) {}
};

// Violations of runtime state contracts: output-dir lock held, checkpoint
// version/digest mismatch, and similar.
class StateError : public Error {
 public:
  explicit StateError(const std::string& m) : Error("state_error", m) {}
};

// A precondition the caller was required to uphold (never a user-input issue).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& m) : Error("contract_violation", m) {}
};

}  // namespace dysi

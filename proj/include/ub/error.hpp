#pragma once

#include <stdexcept>
#include <string>

namespace ub {

// Error taxonomy used across the library. Every failure mode maps to one of
// these; callers that need machine-readable records read kind().
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

// Tensor/layer geometry violations (dimension mismatch, bad conv geometry).
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error("shape", msg) {}
};

// Values outside the documented domain (label out of range, empty dataset).
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& msg) : Error("domain", msg) {}
};

// API misuse: preconditions on call sequencing or argument structure.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& msg) : Error("contract", msg) {}
};

// Malformed external input (IDX files, checkpoints).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error("format", msg) {}
};

// Invalid experiment configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config", msg) {}
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error("numeric", msg) {}
};

// I/O failures (missing checkpoint, unwritable output directory).
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error("io", msg) {}
};

}  // namespace ub

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace cardiofuse {

/// Shape or dimension mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside an operation's mathematical domain (e.g. log of a non-positive value).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Caller broke a precondition that is not about shapes (non-scalar loss, non-binary target, NaN data).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Inconsistent or invalid configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A model lacks a component an operation needs (e.g. explaining without a lab head).
class CapabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A metric is undefined for the given labels (every label single-class).
class UndefinedMetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FormatErrorKind { kBadMagic, kVersionMismatch, kTruncated, kDuplicateName, kBadDtype, kMalformed };

const char* to_string(FormatErrorKind kind);

/// Binary file parse failure. `offset` is the byte position where parsing stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorKind kind, std::uint64_t offset, const std::string& detail);

  FormatErrorKind kind() const noexcept { return kind_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  FormatErrorKind kind_;
  std::uint64_t offset_;
};

}  // namespace cardiofuse

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace kvbench {

// Root of every error the workbench throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed spec-card document.
class SyntaxError : public Error {
 public:
  SyntaxError(const std::string& what, std::size_t offset)
      : Error("syntax error at byte " + std::to_string(offset) + ": " + what), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// A card or configuration violates an invariant. `field()` is a dotted path.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class UnsupportedSemantics : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

class TraceFormatError : public Error {
 public:
  TraceFormatError(std::size_t line, const std::string& what)
      : Error("trace line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Index full, log offset space exhausted, value too large, or budget too small at open.
class CapacityError : public Error {
 public:
  explicit CapacityError(const std::string& what, std::uint64_t required_bytes = 0)
      : Error(what), required_bytes_(required_bytes) {}
  // Bytes the store would have needed at open; 0 when not a sizing failure.
  std::uint64_t required_bytes() const noexcept { return required_bytes_; }

 private:
  std::uint64_t required_bytes_;
};

// Internal invariant breach inside a store. Always a gate failure.
class StoreFault : public Error {
 public:
  using Error::Error;
};

class RecoveryError : public Error {
 public:
  using Error::Error;
};

class UnknownVariant : public Error {
 public:
  using Error::Error;
};

class BudgetExceeded : public Error {
 public:
  BudgetExceeded(std::uint64_t peak, std::uint64_t budget, const std::string& detail = {})
      : Error("memory budget exceeded: peak " + std::to_string(peak) + " B > effective budget " +
              std::to_string(budget) + " B" + (detail.empty() ? "" : " (" + detail + ")")),
        peak_(peak),
        budget_(budget) {}
  std::uint64_t peak() const noexcept { return peak_; }
  std::uint64_t budget() const noexcept { return budget_; }

 private:
  std::uint64_t peak_;
  std::uint64_t budget_;
};

class EnvDirty : public Error {
 public:
  using Error::Error;
};

// Two drivers under comparison disagree on a constant. `constant()` names it.
class ParityError : public Error {
 public:
  explicit ParityError(std::string constant)
      : Error("driver parity violated: " + constant), constant_(std::move(constant)) {}
  const std::string& constant() const noexcept { return constant_; }

 private:
  std::string constant_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A bench was requested for a (store, card) pair without a passing gate.
class GateRequired : public Error {
 public:
  using Error::Error;
};

}  // namespace kvbench

#pragma once

#include <stdexcept>
#include <string>

namespace nowcast {

/// Base of every error raised by the toolkit. The category is a short
/// machine-parsable token that the CLI prints and maps to an exit code.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

/// A precondition on an argument was not met (wrong variable, bad range...).
class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& what) : Error("contract", what) {}
};

/// Input lies outside the domain where the operation is defined.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("domain", what) {}
};

class ShapeMismatch : public Error {
 public:
  explicit ShapeMismatch(const std::string& what) : Error("shape", what) {}
};

/// Stacks that cannot be combined into sequences (timestamps, grids).
class IngestionError : public Error {
 public:
  explicit IngestionError(const std::string& what) : Error("ingestion", what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error("numerical", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

}  // namespace nowcast

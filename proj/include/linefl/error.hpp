#pragma once

#include <stdexcept>
#include <string>

namespace linefl {

// Numeric values double as CLI exit codes and C API status codes.
enum class ErrorCategory : int {
  Internal = 1,
  Config = 2,
  Format = 3,
  Reference = 4,
  Numeric = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

/// Invalid configuration or arguments (k > records, d % heads != 0, ...).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::Config, what) {}
};

/// Malformed input file or text. `kind` distinguishes the failure.
class FormatError : public Error {
 public:
  enum class Kind { Syntax, BadMagic, BadVersion, HeaderMismatch, Truncated, Oversized };

  FormatError(Kind kind, const std::string& what)
      : Error(ErrorCategory::Format, what), kind_(kind) {}
  explicit FormatError(const std::string& what) : FormatError(Kind::Syntax, what) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Something names a document, line, or file that does not exist.
class ReferenceError : public Error {
 public:
  explicit ReferenceError(const std::string& what) : Error(ErrorCategory::Reference, what) {}
};

/// Non-finite values, degenerate batches, undefined metrics.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorCategory::Numeric, what) {}
};

/// API misuse, e.g. a forward trace replayed against a different model.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorCategory::Internal, what) {}
};

}  // namespace linefl

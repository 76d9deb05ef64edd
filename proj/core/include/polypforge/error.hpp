#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace polypforge {

enum class ErrorKind {
  invalid_argument,
  missing_file,
  malformed_line,
  unknown_label,
  dangling_reference,
  split_underflow,
  empty_input,
  size_mismatch,
  non_finite,
  spec_validation,
  unknown_class,
  leakage,
  unknown_session,
  unknown_item,
  duplicate_label,
  ordering,
  incomplete_session,
  insufficient_pool,
  degenerate_null,
  io,
  format,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Base exception for every recoverable failure in the library. The kind is
/// what callers branch on; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Raised while parsing a line-oriented file; carries the 1-based line number.
class LineError : public Error {
 public:
  LineError(ErrorKind kind, std::size_t line, const std::string& message)
      : Error(kind, "line " + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace polypforge

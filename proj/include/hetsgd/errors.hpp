#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hetsgd {

/// Caller broke a documented precondition (shape mismatch, bad index).
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Bad user-supplied data: out-of-range labels, empty datasets, bad sizes.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public InputError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : InputError(what + " (line " + std::to_string(line) + ")"), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class QueueClosedError : public std::runtime_error {
 public:
  QueueClosedError() : std::runtime_error("message queue is closed") {}
};

/// Raised by the coordinator when a worker dies mid-run.
class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const char* what) {
  if (!cond) throw PreconditionError(what);
}

}  // namespace detail
}  // namespace hetsgd

#pragma once

/// @file error.hpp
/// Exception type shared by every stage of the engine. The kind maps directly
/// onto the CLI exit codes.

#include <stdexcept>
#include <string>

namespace wsireg {

enum class ErrorKind {
  config = 2,     ///< malformed or out-of-range configuration
  io = 3,         ///< unreadable/unwritable file, unsupported format
  numerical = 4,  ///< singular transform, non-convergence beyond policy
  argument = 5,   ///< API precondition violated by the caller
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_io(const std::string& msg) { throw Error(ErrorKind::io, msg); }
[[noreturn]] inline void throw_config(const std::string& msg) { throw Error(ErrorKind::config, msg); }
[[noreturn]] inline void throw_numerical(const std::string& msg) { throw Error(ErrorKind::numerical, msg); }
[[noreturn]] inline void throw_argument(const std::string& msg) { throw Error(ErrorKind::argument, msg); }

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::argument: return "argument";
  }
  return "unknown";
}

}  // namespace wsireg

#pragma once

#include <stdexcept>
#include <string>

namespace cshap {

// Broad failure categories, mapped to CLI exit codes (usage/config -> 2,
// everything else -> 1).
enum class ErrorKind {
  ingestion,    // malformed input files
  config,       // invalid configuration or preconditions
  numeric,      // singular systems, non-PSD matrices, ...
  convergence,  // iterative solver gave up
  missing,      // absent cache entry / file
  usage,        // bad command-line invocation
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace cshap

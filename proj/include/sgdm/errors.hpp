#pragma once

#include <stdexcept>
#include <string>

namespace sgdm {

// Failure classes. The CLI maps `config` to exit code 1 (usage/parse) and
// everything else to exit code 2 (violated invariant or runtime failure).
enum class ErrorKind {
  dimension,
  contract,
  parameter,
  vocabulary,
  budget,
  numeric,
  geometry,
  partition,
  consistency,
  training,
  spec,
  io,
  config,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline void check(bool cond, ErrorKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

}  // namespace sgdm

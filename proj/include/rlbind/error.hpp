// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace rlbind {

// Base of every failure raised by the library. kind() is a short stable tag
// used by the CLI to emit machine-parseable error lines.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& m) : Error("shape", m) {}
};
struct NonFiniteError : Error {
  explicit NonFiniteError(const std::string& m) : Error("non-finite", m) {}
};
struct DegenerateError : Error {
  explicit DegenerateError(const std::string& m) : Error("degenerate", m) {}
};
struct GraphError : Error {
  explicit GraphError(const std::string& m) : Error("graph", m) {}
};
struct ArgumentError : Error {
  explicit ArgumentError(const std::string& m) : Error("argument", m) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error("format", m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& m) : Error("training", m) {}
};
struct AttackError : Error {
  explicit AttackError(const std::string& m) : Error("attack", m) {}
};

}  // namespace rlbind

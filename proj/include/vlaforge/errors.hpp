#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace vlaforge {

/// Tensor shape or grid contract violated.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input values outside their documented domain (mask range, alpha, strength, ...).
/// Carries every offending field when raised from config validation.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& message)
      : std::invalid_argument(message), problems_{message} {}
  explicit ValidationError(std::vector<std::string> problems)
      : std::invalid_argument(join(problems)), problems_(std::move(problems)) {}

  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& problems) {
    std::string out = "invalid configuration:";
    for (const auto& p : problems) {
      out += "\n  - " + p;
    }
    return out;
  }

  std::vector<std::string> problems_;
};

/// A module was asked for something its configuration does not provide.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Index outside a sequence (prompt placeholder position, frame id, ...).
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A metric is undefined for the given input (e.g. AUROC on one class).
class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Filesystem failure; message carries the offending path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vlaforge

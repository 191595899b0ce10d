#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lgsim {

/// Invalid hyperparameters, config files or CLI arguments.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition (shape mismatch and friends).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Raised by grad_check when the sample sits too close to a ReLU kink.
/// Drawing a fresh sample and retrying is expected.
class RetriableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(std::int64_t step)
      : std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step)),
        step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

class MissingArtifactError : public std::runtime_error {
 public:
  explicit MissingArtifactError(std::vector<std::string> missing);
  const std::vector<std::string>& missing() const noexcept { return missing_; }

 private:
  std::vector<std::string> missing_;
};

}  // namespace lgsim

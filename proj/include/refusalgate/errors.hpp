#pragma once

#include <stdexcept>
#include <string>

namespace refusalgate {

/// Caller handed us something malformed (unknown id, violated precondition).
struct InputError : std::runtime_error {
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

/// Infrastructure failed (interpreter missing, scratch dir unwritable,
/// endpoint unreachable). Never folded into an ExecOutcome or a Decision.
struct EngineError : std::runtime_error {
  explicit EngineError(const std::string& what) : std::runtime_error(what) {}
};

/// Calibration produced an empty valid-threshold set. Caller policy is the
/// explicit always-abstain fallback.
struct NoValidThreshold : std::runtime_error {
  explicit NoValidThreshold(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace refusalgate

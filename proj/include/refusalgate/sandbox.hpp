#pragma once

#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>

#include "refusalgate/outcome.hpp"

namespace refusalgate::sandbox {

/// Execution backend seam. decision-engine and ltt-calibrate talk to this,
/// so synthetic suites can swap in a table-driven executor.
class Executor {
 public:
  virtual ~Executor() = default;
  virtual ExecOutcome execute_one(const ProgramSource& program, const TestInput& input) = 0;
  virtual OutcomeMatrix execute_matrix(std::span<const ProgramSource> samples,
                                       std::span<const TestInput> tests) = 0;
};

/// Disk + memory cache of outcomes, keyed by (program, test, config) digests.
/// Concurrent readers, serialized writers; disk records written atomically.
class ExecCache {
 public:
  explicit ExecCache(std::filesystem::path dir);  // empty dir = memory only

  std::optional<ExecOutcome> lookup(const std::string& key) const;
  void store(const std::string& key, const ExecOutcome& outcome);

 private:
  std::filesystem::path dir_;
  mutable std::shared_mutex mu_;
  mutable std::unordered_map<std::string, ExecOutcome> mem_;

  std::filesystem::path path_for(const std::string& key) const;
};

/// Runs candidate programs against test inputs under OS resource limits:
/// per-execution scratch directory, process-group kill, address-space cap,
/// no inherited stdin. Python-style interpreters resolved per language_tag
/// (REFUSALGATE_PYTHON overrides python3).
class SandboxExecutor final : public Executor {
 public:
  explicit SandboxExecutor(ExecConfig config);

  ExecOutcome execute_one(const ProgramSource& program, const TestInput& input) override;

  /// Complete |samples| x |tests| grid; fans out up to max_parallel workers.
  /// Any engine error aborts the whole grid (partial grids never returned).
  OutcomeMatrix execute_matrix(std::span<const ProgramSource> samples,
                               std::span<const TestInput> tests) override;

  const ExecConfig& config() const { return config_; }

  /// Resolved interpreter path for a language tag (throws EngineError when
  /// the interpreter is not configured or not executable).
  std::string interpreter_for(const std::string& language_tag);

 private:
  ExecConfig config_;
  std::unique_ptr<ExecCache> cache_;
  std::mutex resolve_mu_;
  std::unordered_map<std::string, std::string> resolved_;

  std::string cache_key(const ProgramSource& program, const TestInput& input,
                        const std::string& interpreter) const;
  ExecOutcome run_uncached(const ProgramSource& program, const TestInput& input,
                           const std::string& interpreter);
};

}  // namespace refusalgate::sandbox

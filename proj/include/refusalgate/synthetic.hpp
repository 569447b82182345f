#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "refusalgate/gateway.hpp"
#include "refusalgate/rng.hpp"
#include "refusalgate/sandbox.hpp"

namespace refusalgate::synthetic {

using sandbox::ExecOutcome;
using sandbox::OracleTest;
using sandbox::OutcomeMatrix;
using sandbox::ProgramSource;
using sandbox::TestInput;

/// How a behavior variant reacts to an invalid (negative) input.
enum class InvalidBehavior : uint8_t { assert_check, return_zero, raise_error, infinite_loop, negate };

/// One behavior the model can emit for a task. Variants in the same group
/// are semantically equal on valid inputs (they print x * (group + 2));
/// their invalid-input handling may still differ.
struct Variant {
  std::string tag;
  int group = 0;
  double weight = 1.0;
  InvalidBehavior invalid_behavior = InvalidBehavior::raise_error;
};

enum class DrawMode : uint8_t { weighted, round_robin };

struct SyntheticTask {
  std::string task_id;
  std::string prompt;  // defaults to "synthetic:<task_id>"
  int correct_group = 0;
  DrawMode draw_mode = DrawMode::weighted;
  std::vector<Variant> variants;
  std::vector<int> valid_inputs;    // all >= 1
  std::vector<int> invalid_inputs;  // all <= -1
  std::vector<int> oracle_inputs;   // all >= 1

  void validate() const;

  /// Probability that one generated sample is correct (exact).
  double correct_mass() const;
  /// Exact H@k of the task: (1 - correct_mass)^k.
  double true_h_at_k(int k) const;

  std::vector<OracleTest> oracle_tests() const;
};

/// Expected output of any correct program on input x.
std::string expected_output(const SyntheticTask& task, int x);
/// The full program text a variant emits (real, runnable Python).
std::string variant_program(const SyntheticTask& task, const Variant& variant);
/// Test invocation for one concrete input.
std::string invocation_for(int x);
/// The outcome variant_program(...) produces on input x, computed without
/// running anything. Matches real sandbox execution of the same pair.
ExecOutcome virtual_outcome(const SyntheticTask& task, const Variant& variant, int x);

struct SyntheticModelSpec {
  std::vector<SyntheticTask> tasks;

  void validate() const;
  const SyntheticTask* find_by_prompt(const std::string& prompt) const;
  const SyntheticTask& require_by_prompt(const std::string& prompt) const;
  const SyntheticTask* find_by_id(const std::string& task_id) const;

  static SyntheticModelSpec load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string to_json() const;
  static SyntheticModelSpec from_json(const std::string& text);
};

/// Seeded generator over a spec. Pure function of (spec, task, n, seed).
class SyntheticModel final : public gateway::Generator {
 public:
  explicit SyntheticModel(std::shared_ptr<const SyntheticModelSpec> spec)
      : spec_(std::move(spec)) {}

  std::vector<ProgramSource> generate_code(const gateway::GenerationRequest& request) override;
  std::vector<TestInput> generate_tests(const gateway::GenerationRequest& request) override;
  std::string name() const override { return "synthetic"; }

  const SyntheticModelSpec& spec() const { return *spec_; }

 private:
  std::shared_ptr<const SyntheticModelSpec> spec_;
};

/// Table-driven executor for synthetic programs: resolves the outcome from
/// the spec instead of spawning an interpreter. Thread-safe (stateless over
/// a shared const spec).
class VirtualExecutor final : public sandbox::Executor {
 public:
  explicit VirtualExecutor(std::shared_ptr<const SyntheticModelSpec> spec)
      : spec_(std::move(spec)) {}

  ExecOutcome execute_one(const ProgramSource& program, const TestInput& input) override;
  OutcomeMatrix execute_matrix(std::span<const ProgramSource> samples,
                               std::span<const TestInput> tests) override;

 private:
  std::shared_ptr<const SyntheticModelSpec> spec_;
};

/// Archetype mix for sampling i.i.d. synthetic tasks with analytically known
/// H@k. Correct-variant mass q is drawn per archetype; remaining mass is
/// split over wrong groups (mostly several, so hallucinating tasks fragment
/// rather than agree); invalid inputs are sprinkled to exercise STDF.
struct TaskDistribution {
  double p_solid = 0.35;   // q in [0.85, 1.0]
  double p_mixed = 0.30;   // q in [0.40, 0.80]
  double p_weak = 0.20;    // q in [0.10, 0.40]
  double p_broken = 0.15;  // q in [0.00, 0.10]
  std::vector<double> wrong_group_weights = {0.05, 0.55, 0.40};  // P(1), P(2), P(3) groups
  int n_valid_inputs = 6;
  int min_invalid_inputs = 0;
  int max_invalid_inputs = 2;
  int n_oracle_inputs = 3;
  /// Guarantee >= 2 variants per task (splitting a lone variant into two
  /// with distinct invalid-input handling), so no pool is ever uniform once
  /// an invalid test is present.
  bool force_two_variants = false;

  void validate() const;  // archetype mass must be positive
  SyntheticTask sample(Rng& rng, const std::string& task_id) const;
  std::vector<SyntheticTask> sample_many(uint64_t seed, int count,
                                         const std::string& id_prefix) const;
};

}  // namespace refusalgate::synthetic

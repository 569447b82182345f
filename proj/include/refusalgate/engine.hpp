#pragma once

#include <span>
#include <string>
#include <vector>

#include "refusalgate/gateway.hpp"
#include "refusalgate/ltt.hpp"
#include "refusalgate/sandbox.hpp"
#include "refusalgate/stdf.hpp"

namespace refusalgate::engine {

using ltt::ThresholdVector;
using ltt::Verdict;
using sandbox::ProgramSource;
using sandbox::TestInput;

/// One application of the inference rule to concrete sample/test pools.
struct PoolEvaluation {
  Verdict verdict = Verdict::abstain;
  double max_cluster_ratio = 0.0;
  double entropy = 0.0;
  stdf::StdfReport stdf_report;
  std::vector<size_t> cluster_sizes;
  /// CR-mode admit: one representative sample per cluster meeting the ratio
  /// threshold.
  std::vector<std::string> representatives;
};

/// STDF on the generated tests, clustering on the survivors, then the CR or
/// SE rule. Pure given the executor's outcomes.
PoolEvaluation evaluate_pools(sandbox::Executor& executor,
                              std::span<const ProgramSource> samples,
                              std::span<const TestInput> tests, const ThresholdVector& lambda,
                              scores::SeVariant se_variant = scores::SeVariant::exact);

struct Decision {
  Verdict verdict = Verdict::abstain;
  ThresholdVector lambda;
  PoolEvaluation evaluation;
  int n_used = 0;      // samples consumed
  int n_batches = 0;   // generation rounds
  bool budget_clamped = false;

  /// Structured text with fixed fields: verdict, mode, lambda, scores,
  /// n_used, stdf_report, cluster_sizes.
  std::string to_json() const;
};

struct DecideOptions {
  uint64_t seed = 0;
  double temperature = 0.8;
  double top_p = 0.95;
  scores::SeVariant se_variant = scores::SeVariant::exact;
};

/// Full-budget inference: generate n code samples and n test inputs, filter,
/// cluster, decide. Infrastructure failures surface as EngineError, never a
/// silent admit.
Decision decide(gateway::Generator& model, sandbox::Executor& executor,
                const std::string& prompt, int n, const ThresholdVector& lambda,
                const DecideOptions& options = {});

/// Batched early-exit inference: grow cumulative pools by n_batch per round,
/// re-apply the rule, return on the first admit or when the budget is
/// exhausted. The final batch is clamped so consumption never exceeds n_max.
Decision decide_efficient(gateway::Generator& model, sandbox::Executor& executor,
                          const std::string& prompt, int n_batch, int n_max,
                          const ThresholdVector& lambda, const DecideOptions& options = {});

/// The batch generation decide/decide_efficient use, exposed so a cumulative
/// pool can be replayed through evaluate_pools verbatim.
struct BatchPools {
  std::vector<ProgramSource> samples;
  std::vector<TestInput> tests;
};
BatchPools generate_batch(gateway::Generator& model, const std::string& prompt, int count,
                          int batch_index, int id_offset, const DecideOptions& options);

}  // namespace refusalgate::engine

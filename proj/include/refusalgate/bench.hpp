#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refusalgate/dataset.hpp"
#include "refusalgate/engine.hpp"
#include "refusalgate/gateway.hpp"
#include "refusalgate/ltt.hpp"
#include "refusalgate/synthetic.hpp"

namespace refusalgate::bench {

struct GroundTruthLabel {
  std::string task_id;
  double h_at_k = 0.0;
  bool should_abstain = false;  // h_at_k > alpha, strict
  int n_labeled = 256;
};

struct LabelOptions {
  scores::RiskParams params;
  int n = 256;  // configurable downward for desk-scale runs; recorded
  uint64_t seed = 0;
};

/// Draw n samples, count the correct ones on the oracle tests, estimate H@k.
GroundTruthLabel label_ground_truth(const DatasetRecord& task, gateway::Generator& model,
                                    sandbox::Executor& executor, const LabelOptions& options);

struct MetricsReport {
  // Positive class is Abstain. Zero denominators are undefined, not 0.
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  int tp = 0, fp = 0, tn = 0, fn = 0;
  double abstention_rate = 0.0;
};

MetricsReport evaluate(const std::map<std::string, ltt::Verdict>& decisions,
                       std::span<const GroundTruthLabel> labels);

struct RiskPoint {
  std::string task_id;
  double risk = 0.0;
};

struct SuiteOptions {
  int n_samples = 64;
  uint64_t seed = 0;
  scores::SeVariant se_variant = scores::SeVariant::exact;
};

/// Per-task admission risk of the artifact's selected threshold, charged
/// against ground-truth H@k (0 when abstained).
std::vector<RiskPoint> risk_distribution(const ltt::CalibrationArtifact& artifact,
                                         std::span<const DatasetRecord> tasks,
                                         gateway::Generator& model, sandbox::Executor& executor,
                                         const std::map<std::string, double>& true_h,
                                         const SuiteOptions& options);

struct TradeoffPoint {
  double abstention_rate = 0.0;
  double risk = 0.0;
  ltt::ThresholdVector lambda;
};

/// One (abstention rate, risk) point per valid lambda, sorted by abstention
/// rate. Pools are generated once per task and shared across lambdas.
std::vector<TradeoffPoint> tradeoff_curve(const ltt::CalibrationArtifact& artifact,
                                          std::span<const DatasetRecord> tasks,
                                          gateway::Generator& model, sandbox::Executor& executor,
                                          const std::map<std::string, double>& true_h,
                                          const SuiteOptions& options);

void write_risk_csv(const std::filesystem::path& path, std::span<const RiskPoint> points);
void write_tradeoff_csv(const std::filesystem::path& path,
                        std::span<const TradeoffPoint> points);

struct GuaranteeOptions {
  scores::RiskParams params;
  int m = 200;           // calibration tasks per replicate
  int replicates = 500;
  int eval_tasks = 400;  // fresh draws for the true-risk expectation
  int n_samples = 16;    // per-task pools during replicated calibration
  int n_tests = 8;
  uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency
};

struct GuaranteeReport {
  int replicates = 0;
  int violations = 0;
  double violation_rate = 0.0;
  double alpha = 0.0;
  double delta = 0.0;
  int m = 0;
  std::string grid_digest;
  std::vector<double> per_replicate_risk;  // true expected admitted risk
  std::vector<bool> per_replicate_violation;
  long admitted_total = 0;
  long admitted_within_alpha = 0;  // admitted eval tasks with true H@k <= alpha
};

/// Monte-Carlo check of the calibration guarantee on a synthetic task
/// distribution with analytically known per-task H@k: draw m tasks,
/// calibrate, estimate the true expected admitted risk on fresh i.i.d.
/// tasks, count replicates where it exceeds alpha.
GuaranteeReport verify_guarantee(const synthetic::TaskDistribution& distribution,
                                 const ltt::ThresholdGrid& grid,
                                 const GuaranteeOptions& options);

void write_guarantee_csv(const std::filesystem::path& path, const GuaranteeReport& report);

/// The dataset-record view of a synthetic task (prompt + oracle tests).
DatasetRecord record_for(const synthetic::SyntheticTask& task);

}  // namespace refusalgate::bench

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refusalgate/dataset.hpp"
#include "refusalgate/gateway.hpp"
#include "refusalgate/sandbox.hpp"
#include "refusalgate/scores.hpp"
#include "refusalgate/stdf.hpp"

namespace refusalgate::ltt {

enum class Verdict : uint8_t { admit, abstain };

enum class Mode : uint8_t { cr, se };
std::string mode_name(Mode mode);
Mode mode_from(const std::string& name);

/// The unit hypothesis of calibration: STDF thresholds plus the score
/// threshold and the scoring mode.
struct ThresholdVector {
  stdf::StdfThresholds stdf;
  double lambda_score = 0.5;
  Mode mode = Mode::cr;

  void validate() const;  // lambda_score in [0,1] for CR, >= 0 for SE
  bool operator==(const ThresholdVector&) const = default;
};

/// Explicit finite candidate set, duplicate-free, with the construction spec
/// retained for provenance.
struct ThresholdGrid {
  std::vector<ThresholdVector> vectors;
  std::string spec_json;  // per-axis value lists this grid was built from

  void validate() const;
  size_t size() const { return vectors.size(); }

  /// 5 x 4 x 4 STDF axes x 10 evenly spaced scores for the given mode.
  static ThresholdGrid default_for(Mode mode);
  /// {"mode": "cr", "lambda1": [...], ..., "lambda_score": [...]}.
  /// "inf" is accepted in the lambda3 list.
  static ThresholdGrid from_spec_json(const std::string& text);
  static ThresholdGrid load(const std::filesystem::path& path);
};

/// Cached per-task calibration data.
struct CalTaskRecord {
  std::string task_id;
  sandbox::OutcomeMatrix matrix;  // over oracle + generated tests
  std::vector<std::string> oracle_test_ids;
  std::vector<std::string> generated_test_ids;
  int n_samples = 0;
  int correct_count = 0;
  double h_at_k = 0.0;
};

/// Number of samples whose outcome on every oracle test matches its
/// expectation (canonical-equal Value, or any clean Value for assertion-style
/// oracles).
int count_correct(const sandbox::OutcomeMatrix& matrix,
                  std::span<const sandbox::OracleTest> oracle_tests);

/// Re-run STDF on the record's tests, cluster on survivors, apply the mode
/// rule: CR abstains iff max cluster ratio < lambda_score, SE abstains iff
/// entropy > lambda_score.
Verdict decision_for(const CalTaskRecord& record, const ThresholdVector& lambda,
                     scores::SeVariant se_variant = scores::SeVariant::exact);

/// Mean admission risk over the calibration records.
double empirical_risk(const ThresholdVector& lambda, std::span<const CalTaskRecord> records,
                      scores::SeVariant se_variant = scores::SeVariant::exact);

enum class PValueKind : uint8_t { hoeffding, hoeffding_bentkus };
std::string p_value_kind_name(PValueKind kind);

/// Finite-sample valid p-value for the null "risk(lambda) > alpha".
/// Hoeffding: exp(-2 m max(alpha - rhat, 0)^2). Hoeffding-Bentkus: min of
/// the binomial-tail and KL-Hoeffding terms.
double p_value(double rhat, int m, double alpha, PValueKind kind = PValueKind::hoeffding);

/// Indices of the lambdas whose p-value clears the Bonferroni cutoff
/// delta / N (inclusive).
std::vector<size_t> bonferroni_valid_set(std::span<const double> pvalues, double delta,
                                         size_t grid_size);

struct PerLambda {
  ThresholdVector lambda;
  double empirical_risk = 0.0;
  double p_value = 1.0;
  double abstention_rate = 0.0;
  bool valid = false;
};

/// Among valid lambdas, the one minimizing calibration abstention rate; ties
/// break by lower empirical risk, then grid order. Throws NoValidThreshold
/// when the valid set is empty.
size_t select_threshold(std::span<const PerLambda> per_lambda,
                        std::span<const size_t> valid_indices);

struct CalibrationArtifact {
  int version = 1;
  scores::RiskParams params;
  std::string grid_spec_json;
  std::vector<PerLambda> per_lambda;
  std::vector<size_t> valid_set;              // indices into per_lambda
  std::optional<ThresholdVector> selected;    // empty = always-abstain fallback
  bool always_abstain_fallback = false;
  std::string dataset_digest;
  std::string model;
  int n_samples = 0;
  int n_tests = 0;
  PValueKind p_value_kind = PValueKind::hoeffding;
  scores::SeVariant se_variant = scores::SeVariant::exact;
  uint64_t seed = 0;
  std::string created_at;  // honors SOURCE_DATE_EPOCH for reproducible runs
  std::vector<std::string> excluded_tasks;

  std::string to_json() const;
  static CalibrationArtifact from_json(const std::string& text);  // schema-checked
  void save(const std::filesystem::path& path) const;
  static CalibrationArtifact load(const std::filesystem::path& path);
};

struct CalibrationOptions {
  scores::RiskParams params;
  int n_samples = 64;
  int n_tests = 64;
  PValueKind p_value_kind = PValueKind::hoeffding;
  scores::SeVariant se_variant = scores::SeVariant::exact;
  uint64_t seed = 0;
};

/// Build one task's calibration record: generate code and test inputs,
/// execute over oracle + generated tests, count correct samples, compute H@k.
CalTaskRecord build_record(const bench::DatasetRecord& task, gateway::Generator& model,
                           sandbox::Executor& executor, const CalibrationOptions& options);

/// Per-(lambda1,lambda2,lambda3) decision statistics for one record, shared
/// across every lambda_score on that axis group.
struct RecordStats {
  double max_cluster_ratio = 1.0;
  double entropy = 0.0;
};
RecordStats record_stats(const CalTaskRecord& record, const stdf::StdfThresholds& stdf_thresholds,
                         scores::SeVariant se_variant = scores::SeVariant::exact);
Verdict verdict_from_stats(const RecordStats& stats, const ThresholdVector& lambda);

/// Full calibration: records, per-lambda risk/p-value/abstention, Bonferroni
/// valid set, selection. Tasks that fail generation entirely are excluded
/// and listed in the artifact. Never throws NoValidThreshold; an empty valid
/// set yields the explicit always-abstain artifact.
CalibrationArtifact calibrate(std::span<const bench::DatasetRecord> tasks,
                              gateway::Generator& model, sandbox::Executor& executor,
                              const ThresholdGrid& grid, const CalibrationOptions& options);

/// Same, over prebuilt records (used by replicated studies).
CalibrationArtifact calibrate_records(std::span<const CalTaskRecord> records,
                                      const ThresholdGrid& grid,
                                      const CalibrationOptions& options);

}  // namespace refusalgate::ltt

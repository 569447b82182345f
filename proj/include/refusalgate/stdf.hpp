#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "refusalgate/outcome.hpp"
#include "refusalgate/scores.hpp"

namespace refusalgate::stdf {

using sandbox::OutcomeMatrix;

/// Sample-Test Dual Filtering thresholds.
struct StdfThresholds {
  double lambda1 = 1.0;  // max error-rate tolerance, [0,1]
  double lambda2 = 0.0;  // max pruning ratio, [0,1]
  double lambda3 = std::numeric_limits<double>::infinity();  // max entropy tolerance, >= 0

  void validate() const;
  bool operator==(const StdfThresholds&) const = default;
};

/// Outcome of a filtering pass; surviving and removed sets partition the
/// input tests.
struct StdfReport {
  std::vector<std::string> surviving;  // original relative order
  std::vector<std::pair<std::string, double>> removed_by_error;    // (test_id, error_rate)
  std::vector<std::pair<std::string, double>> removed_by_entropy;  // (test_id, entropy)
};

/// Fraction of samples whose outcome on t is Error, Timeout or
/// ResourceExceeded.
double error_rate(const OutcomeMatrix& matrix, const std::string& test_id);

/// Two-phase filter: drop tests with error_rate > lambda1, then drop at most
/// floor(lambda2 * |survivors|) of the highest-entropy survivors, and only
/// those with entropy > lambda3. Both comparisons strict; boundary-equal
/// tests survive. Entropy ties sort by test_id ascending.
StdfReport filter_tests(const OutcomeMatrix& matrix, std::span<const std::string> tests,
                        const StdfThresholds& thresholds);

}  // namespace refusalgate::stdf

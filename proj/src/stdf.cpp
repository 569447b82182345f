#include "refusalgate/stdf.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "refusalgate/cluster.hpp"
#include "refusalgate/errors.hpp"

namespace refusalgate::stdf {

void StdfThresholds::validate() const {
  if (!(lambda1 >= 0.0 && lambda1 <= 1.0)) throw InputError("StdfThresholds: lambda1 in [0,1]");
  if (!(lambda2 >= 0.0 && lambda2 <= 1.0)) throw InputError("StdfThresholds: lambda2 in [0,1]");
  // lambda3 = +inf disables entropy pruning; the default grid includes it.
  if (!(lambda3 >= 0.0)) throw InputError("StdfThresholds: lambda3 >= 0");
}

double error_rate(const OutcomeMatrix& matrix, const std::string& test_id) {
  if (matrix.n_samples() == 0) throw InputError("error_rate: matrix has no samples");
  const size_t col = matrix.test_index(test_id);
  size_t failing = 0;
  for (size_t i = 0; i < matrix.n_samples(); ++i) {
    if (!matrix.at(i, col).is_value()) ++failing;
  }
  return static_cast<double>(failing) / static_cast<double>(matrix.n_samples());
}

StdfReport filter_tests(const OutcomeMatrix& matrix, std::span<const std::string> tests,
                        const StdfThresholds& thresholds) {
  thresholds.validate();
  StdfReport report;

  // Phase 1: prune tests that cause widespread failures.
  std::vector<std::string> survivors;
  survivors.reserve(tests.size());
  for (const auto& t : tests) {
    const double rate = error_rate(matrix, t);
    if (rate > thresholds.lambda1) {
      report.removed_by_error.emplace_back(t, rate);
    } else {
      survivors.push_back(t);
    }
  }

  // Phase 2: prune the highest-entropy survivors, within the budget computed
  // on the post-phase-1 test count.
  const size_t budget =
      static_cast<size_t>(std::floor(thresholds.lambda2 * static_cast<double>(survivors.size())));
  if (budget > 0 && !survivors.empty()) {
    std::vector<std::pair<std::string, double>> by_entropy;
    by_entropy.reserve(survivors.size());
    for (const auto& t : survivors) {
      const auto clustering = cluster::cluster_by_single_test(matrix, t);
      by_entropy.emplace_back(t, scores::semantic_entropy(clustering).value);
    }
    std::sort(by_entropy.begin(), by_entropy.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    std::unordered_set<std::string> pruned;
    for (size_t i = 0; i < budget && i < by_entropy.size(); ++i) {
      if (by_entropy[i].second > thresholds.lambda3) {
        report.removed_by_entropy.push_back(by_entropy[i]);
        pruned.insert(by_entropy[i].first);
      }
    }
    if (!pruned.empty()) {
      std::erase_if(survivors, [&](const std::string& t) { return pruned.contains(t); });
    }
  }

  report.surviving = std::move(survivors);
  return report;
}

}  // namespace refusalgate::stdf

#pragma once

#include <span>
#include <string>
#include <vector>

#include "refusalgate/outcome.hpp"

namespace refusalgate::cluster {

using sandbox::ExecOutcome;
using sandbox::OutcomeMatrix;

/// Ordered vector of outcomes over a fixed, shared list of active tests.
using Fingerprint = std::vector<ExecOutcome>;

/// Equivalence partition of a task's samples. Clusters are ordered by
/// descending size, ties by lexicographic smallest member; members are
/// sorted, so reports are deterministic.
struct Clustering {
  std::vector<std::vector<std::string>> clusters;
  size_t n = 0;  // total samples

  size_t cluster_count() const { return clusters.size(); }
  std::vector<size_t> sizes() const;
  /// Index of the cluster containing sample_id; throws InputError if absent.
  size_t cluster_of(const std::string& sample_id) const;
};

/// Two samples share a cluster iff their fingerprints over active_tests are
/// equal (exact structural equality of canonical outcomes).
Clustering cluster_by_fingerprint(const OutcomeMatrix& matrix,
                                  std::span<const std::string> active_tests);

/// Single-column restriction of cluster_by_fingerprint.
Clustering cluster_by_single_test(const OutcomeMatrix& matrix, const std::string& test_id);

}  // namespace refusalgate::cluster

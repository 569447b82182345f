#pragma once

#include <string>

#include "refusalgate/cluster.hpp"

namespace refusalgate::scores {

/// Risk-control parameters shared across calibration and testing.
struct RiskParams {
  int k = 3;
  double alpha = 0.2;
  double delta = 0.1;

  void validate() const;  // k >= 1, alpha/delta in (0,1)
};

enum class ScoreKind : uint8_t { h_at_k, confidence, entropy, cluster_ratio, risk };

struct ScoreValue {
  double value = 0.0;
  ScoreKind kind = ScoreKind::h_at_k;
};

/// Probability that k random draws from the sample pool are all incorrect:
/// C(n-c, k) / C(n, k), with C(a, b) = 0 when a < b. Exact big-integer
/// rational, safe for n up to 1024.
ScoreValue h_at_k(int n, int c, int k);

/// Share of samples consistent with y, counting y itself: |C(y)| / n.
ScoreValue confidence(const std::string& sample_id, const cluster::Clustering& clustering);

enum class SeVariant : uint8_t {
  exact,             // -sum p(C_i) ln p(C_i)
  rao_blackwellized  // -(1/h) sum ln p(C_i)
};

/// Diversity of the cluster-size distribution, natural log.
ScoreValue semantic_entropy(const cluster::Clustering& clustering,
                            SeVariant variant = SeVariant::exact);

/// max_i |C_i| / n.
ScoreValue max_cluster_ratio(const cluster::Clustering& clustering);

/// Risk charged when a task is admitted: 0 when refused, H@k otherwise.
ScoreValue admission_risk(bool refused, const ScoreValue& h);

}  // namespace refusalgate::scores

#include "refusalgate/scores.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>

#include "refusalgate/errors.hpp"

namespace refusalgate::scores {

namespace {

using boost::multiprecision::cpp_int;

cpp_int binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  cpp_int num = 1;
  for (int i = 0; i < k; ++i) {
    num *= n - i;
    num /= i + 1;  // exact: product of j consecutive integers divides j!
  }
  return num;
}

}  // namespace

void RiskParams::validate() const {
  if (k < 1) throw InputError("RiskParams: k must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("RiskParams: alpha must be in (0,1)");
  if (!(delta > 0.0 && delta < 1.0)) throw InputError("RiskParams: delta must be in (0,1)");
}

ScoreValue h_at_k(int n, int c, int k) {
  if (c < 0 || c > n) throw InputError("h_at_k: need 0 <= c <= n");
  if (k < 1 || k > n) throw InputError("h_at_k: need 1 <= k <= n");
  const int incorrect = n - c;
  if (incorrect < k) return {0.0, ScoreKind::h_at_k};
  if (c == 0) return {1.0, ScoreKind::h_at_k};
  const cpp_int num = binomial(incorrect, k);
  const cpp_int den = binomial(n, k);
  // Scale before converting so the quotient is exact to double precision.
  const cpp_int scaled = (num << 64) / den;
  const double h = std::ldexp(scaled.convert_to<double>(), -64);
  return {h, ScoreKind::h_at_k};
}

ScoreValue confidence(const std::string& sample_id, const cluster::Clustering& clustering) {
  const size_t idx = clustering.cluster_of(sample_id);
  return {static_cast<double>(clustering.clusters[idx].size()) /
              static_cast<double>(clustering.n),
          ScoreKind::confidence};
}

ScoreValue semantic_entropy(const cluster::Clustering& clustering, SeVariant variant) {
  if (clustering.n == 0 || clustering.clusters.empty())
    throw InputError("semantic_entropy: empty clustering");
  const double n = static_cast<double>(clustering.n);
  double se = 0.0;
  if (variant == SeVariant::exact) {
    for (const auto& c : clustering.clusters) {
      const double p = static_cast<double>(c.size()) / n;
      se -= p * std::log(p);
    }
  } else {
    for (const auto& c : clustering.clusters) {
      se -= std::log(static_cast<double>(c.size()) / n);
    }
    se /= static_cast<double>(clustering.clusters.size());
  }
  return {std::max(se, 0.0), ScoreKind::entropy};
}

ScoreValue max_cluster_ratio(const cluster::Clustering& clustering) {
  if (clustering.n == 0 || clustering.clusters.empty())
    throw InputError("max_cluster_ratio: empty clustering");
  size_t largest = 0;
  for (const auto& c : clustering.clusters) largest = std::max(largest, c.size());
  return {static_cast<double>(largest) / static_cast<double>(clustering.n),
          ScoreKind::cluster_ratio};
}

ScoreValue admission_risk(bool refused, const ScoreValue& h) {
  if (h.value < 0.0 || h.value > 1.0) throw InputError("admission_risk: h must be in [0,1]");
  return {refused ? 0.0 : h.value, ScoreKind::risk};
}

}  // namespace refusalgate::scores

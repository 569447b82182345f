#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "refusalgate/errors.hpp"
#include "refusalgate/scores.hpp"

using namespace refusalgate;
using cluster::Clustering;

namespace {

// Exhaustive subset oracle: over all size-k subsets of n samples (first c
// correct), the fraction containing no correct sample.
double h_at_k_enumerated(int n, int c, int k) {
  const unsigned correct_mask = (1u << c) - 1;
  long total = 0, all_incorrect = 0;
  for (unsigned subset = 0; subset < (1u << n); ++subset) {
    if (__builtin_popcount(subset) != k) continue;
    ++total;
    if ((subset & correct_mask) == 0) ++all_incorrect;
  }
  return static_cast<double>(all_incorrect) / static_cast<double>(total);
}

Clustering make_clustering(std::vector<std::vector<std::string>> clusters) {
  Clustering c;
  size_t n = 0;
  for (auto& members : clusters) {
    std::sort(members.begin(), members.end());
    n += members.size();
    c.clusters.push_back(std::move(members));
  }
  c.n = n;
  return c;
}

Clustering clustering_of_sizes(const std::vector<size_t>& sizes) {
  std::vector<std::vector<std::string>> clusters;
  size_t next = 0;
  for (size_t s : sizes) {
    std::vector<std::string> members;
    for (size_t i = 0; i < s; ++i) {
      char buf[8];
      std::snprintf(buf, sizeof(buf), "s%03zu", next++);
      members.emplace_back(buf);
    }
    clusters.push_back(std::move(members));
  }
  return make_clustering(std::move(clusters));
}

}  // namespace

TEST_SUITE("scores") {

TEST_CASE("h_at_k frozen examples") {
  CHECK(scores::h_at_k(10, 10, 3).value == doctest::Approx(0.0));
  CHECK(scores::h_at_k(10, 0, 3).value == doctest::Approx(1.0));
  CHECK(scores::h_at_k(5, 2, 3).value == doctest::Approx(0.1));  // 1 of 10 subsets
  CHECK(scores::h_at_k(4, 2, 3).value == doctest::Approx(0.0));
}

TEST_CASE("h_at_k matches exhaustive enumeration (small sweep)") {
  for (int n = 1; n <= 10; ++n) {
    for (int c = 0; c <= n; ++c) {
      for (int k = 1; k <= std::min(n, 5); ++k) {
        CHECK(scores::h_at_k(n, c, k).value ==
              doctest::Approx(h_at_k_enumerated(n, c, k)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("h_at_k monotone: non-increasing in c and in k") {
  // Each extra attempt multiplies by (n-c-i)/(n-i) < 1, so allowing more
  // attempts can only lower the all-incorrect probability.
  for (int n = 2; n <= 12; ++n) {
    for (int k = 1; k <= std::min(n, 5); ++k) {
      for (int c = 0; c < n; ++c) {
        CHECK(scores::h_at_k(n, c + 1, k).value <= scores::h_at_k(n, c, k).value + 1e-15);
      }
    }
    for (int c = 0; c <= n; ++c) {
      for (int k = 1; k < std::min(n, 5); ++k) {
        CHECK(scores::h_at_k(n, c, k + 1).value <= scores::h_at_k(n, c, k).value + 1e-15);
      }
    }
  }
}

TEST_CASE("h_at_k large n stays exact and finite") {
  CHECK(scores::h_at_k(1024, 512, 3).value ==
        doctest::Approx((512.0 * 511 * 510) / (1024.0 * 1023 * 1022)).epsilon(1e-14));
  CHECK(scores::h_at_k(256, 116, 3).value < 0.2);  // labeling-protocol landmark
  CHECK(scores::h_at_k(256, 105, 3).value > 0.2);
}

TEST_CASE("h_at_k rejects bad arguments") {
  CHECK_THROWS_AS(scores::h_at_k(5, 6, 3), InputError);
  CHECK_THROWS_AS(scores::h_at_k(5, -1, 3), InputError);
  CHECK_THROWS_AS(scores::h_at_k(5, 2, 0), InputError);
  CHECK_THROWS_AS(scores::h_at_k(5, 2, 6), InputError);
}

TEST_CASE("confidence equals own-cluster share") {
  const auto one = clustering_of_sizes({6});
  for (const auto& members : one.clusters) {
    for (const auto& y : members) CHECK(scores::confidence(y, one).value == doctest::Approx(1.0));
  }

  const auto eight = clustering_of_sizes({7, 1});
  CHECK(scores::confidence(eight.clusters[1].front(), eight).value == doctest::Approx(0.125));

  const auto mixed = clustering_of_sizes({5, 3});
  CHECK(scores::confidence(mixed.clusters[1].front(), mixed).value == doctest::Approx(0.375));

  CHECK_THROWS_AS(scores::confidence("nope", mixed), InputError);
}

TEST_CASE("confidence sums to sum of squared cluster sizes over n") {
  Rng rng(7);
  for (int it = 0; it < 20; ++it) {
    std::vector<size_t> sizes;
    const size_t n_clusters = 1 + rng.below(5);
    for (size_t i = 0; i < n_clusters; ++i) sizes.push_back(1 + rng.below(6));
    const auto clustering = clustering_of_sizes(sizes);
    double total = 0.0;
    for (const auto& members : clustering.clusters) {
      for (const auto& y : members) total += scores::confidence(y, clustering).value;
    }
    double expected = 0.0;
    for (size_t s : sizes) expected += static_cast<double>(s) * s;
    expected /= static_cast<double>(clustering.n);
    CHECK(total == doctest::Approx(expected));
  }
}

TEST_CASE("semantic entropy examples") {
  CHECK(scores::semantic_entropy(clustering_of_sizes({9})).value == doctest::Approx(0.0));
  CHECK(scores::semantic_entropy(clustering_of_sizes({5, 5})).value ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(scores::semantic_entropy(clustering_of_sizes({8, 2})).value ==
        doctest::Approx(0.5004024235381879).epsilon(1e-12));
}

TEST_CASE("semantic entropy rao-blackwellized variant") {
  const auto c = clustering_of_sizes({8, 2});
  const double expected = -0.5 * (std::log(0.8) + std::log(0.2));
  CHECK(scores::semantic_entropy(c, scores::SeVariant::rao_blackwellized).value ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("semantic entropy bounds and degenerate input") {
  Rng rng(13);
  for (int it = 0; it < 30; ++it) {
    std::vector<size_t> sizes;
    const size_t h = 1 + rng.below(6);
    for (size_t i = 0; i < h; ++i) sizes.push_back(1 + rng.below(5));
    const auto clustering = clustering_of_sizes(sizes);
    const double se = scores::semantic_entropy(clustering).value;
    CHECK(se >= 0.0);
    CHECK(se <= std::log(static_cast<double>(clustering.cluster_count())) + 1e-12);
    CHECK((se == 0.0) == (clustering.cluster_count() == 1));
    CHECK(scores::max_cluster_ratio(clustering).value >=
          1.0 / static_cast<double>(clustering.cluster_count()) - 1e-12);
  }
  CHECK_THROWS_AS(scores::semantic_entropy(Clustering{}), InputError);
  CHECK_THROWS_AS(scores::max_cluster_ratio(Clustering{}), InputError);
}

TEST_CASE("max cluster ratio examples") {
  CHECK(scores::max_cluster_ratio(clustering_of_sizes({4})).value == doctest::Approx(1.0));
  CHECK(scores::max_cluster_ratio(clustering_of_sizes({6, 4})).value == doctest::Approx(0.6));
  CHECK(scores::max_cluster_ratio(clustering_of_sizes({1, 1, 1, 1})).value ==
        doctest::Approx(0.25));
}

TEST_CASE("admission risk zeroes refused tasks") {
  using scores::ScoreKind;
  CHECK(scores::admission_risk(true, {0.9, ScoreKind::h_at_k}).value == 0.0);
  CHECK(scores::admission_risk(false, {0.9, ScoreKind::h_at_k}).value == doctest::Approx(0.9));
  CHECK(scores::admission_risk(false, {0.0, ScoreKind::h_at_k}).value == 0.0);
  CHECK_THROWS_AS(scores::admission_risk(false, {1.5, ScoreKind::h_at_k}), InputError);
}

TEST_CASE("risk params validate ranges") {
  scores::RiskParams params;
  CHECK_NOTHROW(params.validate());
  params.alpha = 0.0;
  CHECK_THROWS_AS(params.validate(), InputError);
  params = {};
  params.k = 0;
  CHECK_THROWS_AS(params.validate(), InputError);
}

}  // TEST_SUITE

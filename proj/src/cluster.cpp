#include "refusalgate/cluster.hpp"

#include <algorithm>
#include <map>

#include "refusalgate/errors.hpp"

namespace refusalgate::cluster {

std::vector<size_t> Clustering::sizes() const {
  std::vector<size_t> out;
  out.reserve(clusters.size());
  for (const auto& c : clusters) out.push_back(c.size());
  return out;
}

size_t Clustering::cluster_of(const std::string& sample_id) const {
  for (size_t i = 0; i < clusters.size(); ++i) {
    if (std::binary_search(clusters[i].begin(), clusters[i].end(), sample_id)) return i;
  }
  throw InputError("unknown sample_id: " + sample_id);
}

Clustering cluster_by_fingerprint(const OutcomeMatrix& matrix,
                                  std::span<const std::string> active_tests) {
  std::vector<size_t> cols;
  cols.reserve(active_tests.size());
  for (const auto& t : active_tests) cols.push_back(matrix.test_index(t));

  // Keyed map keeps grouping independent of hash seeding. Cells are
  // length-prefixed so payloads containing the join byte cannot alias two
  // different fingerprints.
  std::map<std::string, std::vector<std::string>> groups;
  for (size_t i = 0; i < matrix.n_samples(); ++i) {
    std::string key;
    for (size_t col : cols) {
      const std::string encoded = matrix.at(i, col).encode();
      key += std::to_string(encoded.size());
      key.push_back(':');
      key += encoded;
    }
    groups[key].push_back(matrix.sample_ids()[i]);
  }

  Clustering result;
  result.n = matrix.n_samples();
  result.clusters.reserve(groups.size());
  for (auto& [key, members] : groups) {
    std::sort(members.begin(), members.end());
    result.clusters.push_back(std::move(members));
  }
  std::sort(result.clusters.begin(), result.clusters.end(),
            [](const auto& a, const auto& b) {
              if (a.size() != b.size()) return a.size() > b.size();
              return a.front() < b.front();
            });
  return result;
}

Clustering cluster_by_single_test(const OutcomeMatrix& matrix, const std::string& test_id) {
  const std::string tests[1] = {test_id};
  return cluster_by_fingerprint(matrix, tests);
}

}  // namespace refusalgate::cluster

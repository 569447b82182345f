#pragma once

// Shared fixtures for the test suites: literal outcome grids, a pairwise
// union-find clustering oracle, and a randomized grid generator.

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "refusalgate/cluster.hpp"
#include "refusalgate/outcome.hpp"
#include "refusalgate/rng.hpp"

namespace rgtest {

using refusalgate::Rng;
using refusalgate::sandbox::ExecOutcome;
using refusalgate::sandbox::OutcomeMatrix;

inline ExecOutcome V(const std::string& s) { return ExecOutcome::value(s); }
inline ExecOutcome E(const std::string& s) { return ExecOutcome::error(s); }
inline ExecOutcome TO() { return ExecOutcome::timeout(); }
inline ExecOutcome RE() { return ExecOutcome::resource_exceeded(); }

/// Matrix from literal rows; ids default to s0.., t0..
inline OutcomeMatrix make_matrix(const std::vector<std::vector<ExecOutcome>>& rows,
                                 std::vector<std::string> sample_ids = {},
                                 std::vector<std::string> test_ids = {}) {
  const size_t n_tests = rows.empty() ? 0 : rows.front().size();
  if (sample_ids.empty()) {
    for (size_t i = 0; i < rows.size(); ++i) sample_ids.push_back("s" + std::to_string(i));
  }
  if (test_ids.empty()) {
    for (size_t j = 0; j < n_tests; ++j) test_ids.push_back("t" + std::to_string(j));
  }
  std::vector<ExecOutcome> cells;
  for (const auto& row : rows) cells.insert(cells.end(), row.begin(), row.end());
  return OutcomeMatrix(std::move(sample_ids), std::move(test_ids), std::move(cells));
}

/// O(n^2 |T|) pairwise union-find clustering oracle, independent of the
/// fingerprint implementation.
inline std::set<std::set<std::string>> union_find_clusters(
    const OutcomeMatrix& matrix, const std::vector<std::string>& active_tests) {
  const size_t n = matrix.n_samples();
  std::vector<size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  const auto find = [&](size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::vector<size_t> cols;
  for (const auto& t : active_tests) cols.push_back(matrix.test_index(t));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      bool equal = true;
      for (size_t c : cols) {
        if (!(matrix.at(i, c) == matrix.at(j, c))) {
          equal = false;
          break;
        }
      }
      if (equal) parent[find(i)] = find(j);
    }
  }
  std::map<size_t, std::set<std::string>> groups;
  for (size_t i = 0; i < n; ++i) groups[find(i)].insert(matrix.sample_ids()[i]);
  std::set<std::set<std::string>> out;
  for (auto& [root, members] : groups) out.insert(members);
  return out;
}

inline std::set<std::set<std::string>> as_set_of_sets(
    const refusalgate::cluster::Clustering& clustering) {
  std::set<std::set<std::string>> out;
  for (const auto& c : clustering.clusters) out.insert({c.begin(), c.end()});
  return out;
}

/// Random matrix over a small outcome palette; shape and cells seeded.
inline OutcomeMatrix random_matrix(Rng& rng, size_t max_samples = 20, size_t max_tests = 10) {
  const size_t n = 1 + rng.below(max_samples);
  const size_t t = rng.below(max_tests + 1);
  std::vector<std::vector<ExecOutcome>> rows(n, std::vector<ExecOutcome>(t));
  for (auto& row : rows) {
    for (auto& cell : row) {
      switch (rng.below(8)) {
        case 0: cell = E("E1"); break;
        case 1: cell = E("E2"); break;
        case 2: cell = TO(); break;
        case 3: cell = RE(); break;
        default: cell = V(std::to_string(rng.below(3))); break;
      }
    }
  }
  return make_matrix(rows);
}

}  // namespace rgtest

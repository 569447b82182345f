#include "refusalgate/ltt.hpp"

#include <boost/math/distributions/binomial.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "refusalgate/cluster.hpp"
#include "refusalgate/digest.hpp"
#include "refusalgate/errors.hpp"
#include "refusalgate/rng.hpp"

namespace refusalgate::ltt {

using nlohmann::json;

std::string mode_name(Mode mode) { return mode == Mode::cr ? "cr" : "se"; }

Mode mode_from(const std::string& name) {
  if (name == "cr") return Mode::cr;
  if (name == "se") return Mode::se;
  throw InputError("unknown mode: " + name + " (expected cr|se)");
}

std::string p_value_kind_name(PValueKind kind) {
  return kind == PValueKind::hoeffding ? "hoeffding" : "hoeffding_bentkus";
}

void ThresholdVector::validate() const {
  stdf.validate();
  if (mode == Mode::cr) {
    if (!(lambda_score >= 0.0 && lambda_score <= 1.0))
      throw InputError("ThresholdVector: CR lambda_score must be in [0,1]");
  } else if (!(lambda_score >= 0.0)) {
    throw InputError("ThresholdVector: SE lambda_score must be >= 0");
  }
}

void ThresholdGrid::validate() const {
  if (vectors.empty()) throw InputError("ThresholdGrid: empty");
  for (const auto& v : vectors) v.validate();
  for (size_t i = 0; i < vectors.size(); ++i) {
    for (size_t j = i + 1; j < vectors.size(); ++j) {
      if (vectors[i] == vectors[j]) throw InputError("ThresholdGrid: duplicate vectors");
    }
  }
}

namespace {

json lambda3_to_json(double v) {
  if (std::isinf(v)) return "inf";
  return v;
}

double lambda3_from_json(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw InputError("lambda3: expected number or \"inf\"");
  }
  return j.get<double>();
}

json threshold_to_json(const ThresholdVector& v) {
  return {{"lambda1", v.stdf.lambda1},
          {"lambda2", v.stdf.lambda2},
          {"lambda3", lambda3_to_json(v.stdf.lambda3)},
          {"lambda_score", v.lambda_score},
          {"mode", mode_name(v.mode)}};
}

ThresholdVector threshold_from_json(const json& j) {
  ThresholdVector v;
  v.stdf.lambda1 = j.at("lambda1").get<double>();
  v.stdf.lambda2 = j.at("lambda2").get<double>();
  v.stdf.lambda3 = lambda3_from_json(j.at("lambda3"));
  v.lambda_score = j.at("lambda_score").get<double>();
  v.mode = mode_from(j.at("mode").get<std::string>());
  return v;
}

ThresholdGrid build_grid(Mode mode, const std::vector<double>& l1, const std::vector<double>& l2,
                         const std::vector<double>& l3, const std::vector<double>& score) {
  ThresholdGrid grid;
  for (double a : l1) {
    for (double b : l2) {
      for (double c : l3) {
        for (double s : score) {
          grid.vectors.push_back({{a, b, c}, s, mode});
        }
      }
    }
  }
  json spec;
  spec["mode"] = mode_name(mode);
  spec["lambda1"] = l1;
  spec["lambda2"] = l2;
  spec["lambda3"] = json::array();
  for (double c : l3) spec["lambda3"].push_back(lambda3_to_json(c));
  spec["lambda_score"] = score;
  grid.spec_json = spec.dump();
  grid.validate();
  return grid;
}

std::string now_rfc3339() {
  std::time_t t = std::time(nullptr);
  if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde && *sde) {
    t = static_cast<std::time_t>(std::strtoll(sde, nullptr, 10));
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

ThresholdGrid ThresholdGrid::default_for(Mode mode) {
  const std::vector<double> l1 = {0.3, 0.5, 0.7, 0.9, 1.0};
  const std::vector<double> l2 = {0.0, 0.1, 0.2, 0.3};
  const std::vector<double> l3 = {0.3, 0.7, 1.1, std::numeric_limits<double>::infinity()};
  std::vector<double> score;
  if (mode == Mode::cr) {
    for (int i = 1; i <= 10; ++i) score.push_back(i / 10.0);
  } else {
    // SE thresholds span [0, ln 64], the entropy ceiling at the default
    // 64-sample budget.
    const double hi = std::log(64.0);
    for (int i = 0; i < 10; ++i) score.push_back(hi * i / 9.0);
  }
  return build_grid(mode, l1, l2, l3, score);
}

ThresholdGrid ThresholdGrid::from_spec_json(const std::string& text) {
  json spec;
  try {
    spec = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("grid spec: bad JSON: ") + e.what());
  }
  if (spec.contains("vectors")) {
    // Explicit list instead of a per-axis product.
    ThresholdGrid grid;
    for (const auto& jv : spec.at("vectors")) grid.vectors.push_back(threshold_from_json(jv));
    grid.spec_json = spec.dump();
    grid.validate();
    return grid;
  }
  const Mode mode = mode_from(spec.at("mode").get<std::string>());
  std::vector<double> l3;
  for (const auto& j : spec.at("lambda3")) l3.push_back(lambda3_from_json(j));
  return build_grid(mode, spec.at("lambda1").get<std::vector<double>>(),
                    spec.at("lambda2").get<std::vector<double>>(), l3,
                    spec.at("lambda_score").get<std::vector<double>>());
}

ThresholdGrid ThresholdGrid::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open grid spec: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_spec_json(ss.str());
}

int count_correct(const sandbox::OutcomeMatrix& matrix,
                  std::span<const sandbox::OracleTest> oracle_tests) {
  if (oracle_tests.empty()) throw InputError("count_correct: no oracle tests");
  std::vector<size_t> cols;
  cols.reserve(oracle_tests.size());
  for (const auto& t : oracle_tests) cols.push_back(matrix.test_index(t.test_id));

  int correct = 0;
  for (size_t i = 0; i < matrix.n_samples(); ++i) {
    bool ok = true;
    for (size_t j = 0; j < cols.size() && ok; ++j) {
      const auto& outcome = matrix.at(i, cols[j]);
      if (!outcome.is_value()) {
        ok = false;
      } else if (oracle_tests[j].expected &&
                 outcome.payload != sandbox::canonicalize_stdout(*oracle_tests[j].expected)) {
        ok = false;
      }
    }
    if (ok) ++correct;
  }
  return correct;
}

RecordStats record_stats(const CalTaskRecord& record, const stdf::StdfThresholds& stdf_thresholds,
                         scores::SeVariant se_variant) {
  const auto report = stdf::filter_tests(record.matrix, record.matrix.test_ids(), stdf_thresholds);
  const auto clustering = cluster::cluster_by_fingerprint(record.matrix, report.surviving);
  return {scores::max_cluster_ratio(clustering).value,
          scores::semantic_entropy(clustering, se_variant).value};
}

Verdict verdict_from_stats(const RecordStats& stats, const ThresholdVector& lambda) {
  if (lambda.mode == Mode::cr) {
    return stats.max_cluster_ratio < lambda.lambda_score ? Verdict::abstain : Verdict::admit;
  }
  return stats.entropy > lambda.lambda_score ? Verdict::abstain : Verdict::admit;
}

Verdict decision_for(const CalTaskRecord& record, const ThresholdVector& lambda,
                     scores::SeVariant se_variant) {
  lambda.validate();
  return verdict_from_stats(record_stats(record, lambda.stdf, se_variant), lambda);
}

double empirical_risk(const ThresholdVector& lambda, std::span<const CalTaskRecord> records,
                      scores::SeVariant se_variant) {
  if (records.empty()) throw InputError("empirical_risk: records must be non-empty");
  double total = 0.0;
  for (const auto& record : records) {
    const bool refused = decision_for(record, lambda, se_variant) == Verdict::abstain;
    total += scores::admission_risk(refused, {record.h_at_k, scores::ScoreKind::h_at_k}).value;
  }
  return total / static_cast<double>(records.size());
}

double p_value(double rhat, int m, double alpha, PValueKind kind) {
  if (m < 1) throw InputError("p_value: m must be >= 1");
  rhat = std::clamp(rhat, 0.0, 1.0);
  const double hoeffding = std::exp(-2.0 * m * std::pow(std::max(alpha - rhat, 0.0), 2));
  if (kind == PValueKind::hoeffding) return std::min(hoeffding, 1.0);

  // Hoeffding-Bentkus: min of the Bernoulli-KL Hoeffding term and e times
  // the binomial tail at ceil(m rhat).
  const double a = std::min(rhat, alpha);
  double kl = 0.0;
  if (a > 0.0) kl += a * std::log(a / alpha);
  if (a < 1.0) kl += (1.0 - a) * std::log((1.0 - a) / (1.0 - alpha));
  const double kl_term = std::exp(-static_cast<double>(m) * kl);

  const double j = std::min(std::ceil(m * rhat), static_cast<double>(m));
  const boost::math::binomial_distribution<double> dist(m, alpha);
  const double bentkus_term = std::exp(1.0) * boost::math::cdf(dist, j);

  return std::min({kl_term, bentkus_term, 1.0});
}

std::vector<size_t> bonferroni_valid_set(std::span<const double> pvalues, double delta,
                                         size_t grid_size) {
  if (grid_size == 0) throw InputError("bonferroni_valid_set: grid size must be > 0");
  const double cutoff = delta / static_cast<double>(grid_size);
  std::vector<size_t> valid;
  for (size_t i = 0; i < pvalues.size(); ++i) {
    if (pvalues[i] <= cutoff) valid.push_back(i);
  }
  return valid;
}

size_t select_threshold(std::span<const PerLambda> per_lambda,
                        std::span<const size_t> valid_indices) {
  if (valid_indices.empty())
    throw NoValidThreshold("no threshold passed Bonferroni validation");
  size_t best = valid_indices.front();
  for (size_t idx : valid_indices) {
    const auto& cand = per_lambda[idx];
    const auto& cur = per_lambda[best];
    if (cand.abstention_rate < cur.abstention_rate ||
        (cand.abstention_rate == cur.abstention_rate &&
         cand.empirical_risk < cur.empirical_risk)) {
      best = idx;
    }
  }
  return best;
}

CalTaskRecord build_record(const bench::DatasetRecord& task, gateway::Generator& model,
                           sandbox::Executor& executor, const CalibrationOptions& options) {
  if (task.oracle_tests.empty())
    throw InputError("task " + task.task_id + " has no oracle tests");

  gateway::GenerationRequest code_req;
  code_req.prompt = task.prompt;
  code_req.count = options.n_samples;
  code_req.kind = gateway::GenKind::code;
  code_req.seed = derive_seed(options.seed, task.task_id + "/code");
  auto samples = model.generate_code(code_req);

  gateway::GenerationRequest test_req = code_req;
  test_req.count = options.n_tests;
  test_req.kind = gateway::GenKind::tests;
  test_req.seed = derive_seed(options.seed, task.task_id + "/tests");
  auto generated = model.generate_tests(test_req);

  std::vector<sandbox::TestInput> all_tests;
  std::vector<std::string> oracle_ids, generated_ids;
  for (const auto& o : task.oracle_tests) {
    all_tests.push_back({o.test_id, o.invocation});
    oracle_ids.push_back(o.test_id);
  }
  for (auto& g : generated) {
    g.test_id = "g:" + g.test_id;  // keep clear of oracle id space
    all_tests.push_back(g);
    generated_ids.push_back(g.test_id);
  }

  CalTaskRecord record{task.task_id,
                       executor.execute_matrix(samples, all_tests),
                       std::move(oracle_ids),
                       std::move(generated_ids),
                       options.n_samples,
                       0,
                       0.0};
  record.correct_count = count_correct(record.matrix, task.oracle_tests);
  record.h_at_k =
      scores::h_at_k(record.n_samples, record.correct_count, options.params.k).value;
  return record;
}

CalibrationArtifact calibrate_records(std::span<const CalTaskRecord> records,
                                      const ThresholdGrid& grid,
                                      const CalibrationOptions& options) {
  options.params.validate();
  grid.validate();
  if (records.empty()) throw InputError("calibrate: no calibration records");

  const int m = static_cast<int>(records.size());

  // lambda_score never changes the clustering, so per-record stats are
  // shared across every vector on the same STDF axis group.
  struct StdfKey {
    double l1, l2, l3;
    bool operator<(const StdfKey& o) const {
      return std::tie(l1, l2, l3) < std::tie(o.l1, o.l2, o.l3);
    }
  };
  std::map<StdfKey, std::vector<RecordStats>> stats_by_group;
  for (const auto& v : grid.vectors) {
    stats_by_group.emplace(StdfKey{v.stdf.lambda1, v.stdf.lambda2, v.stdf.lambda3},
                           std::vector<RecordStats>{});
  }
  for (auto& [key, stats] : stats_by_group) {
    stats.reserve(records.size());
    const stdf::StdfThresholds th{key.l1, key.l2, key.l3};
    for (const auto& record : records) {
      stats.push_back(record_stats(record, th, options.se_variant));
    }
  }

  CalibrationArtifact artifact;
  artifact.params = options.params;
  artifact.grid_spec_json = grid.spec_json;
  artifact.n_samples = options.n_samples;
  artifact.n_tests = options.n_tests;
  artifact.p_value_kind = options.p_value_kind;
  artifact.se_variant = options.se_variant;
  artifact.seed = options.seed;
  artifact.created_at = now_rfc3339();

  artifact.per_lambda.reserve(grid.size());
  std::vector<double> pvalues;
  pvalues.reserve(grid.size());
  for (const auto& v : grid.vectors) {
    const auto& stats = stats_by_group.at({v.stdf.lambda1, v.stdf.lambda2, v.stdf.lambda3});
    double risk_total = 0.0;
    int abstained = 0;
    for (size_t i = 0; i < records.size(); ++i) {
      if (verdict_from_stats(stats[i], v) == Verdict::abstain) {
        ++abstained;
      } else {
        risk_total += records[i].h_at_k;
      }
    }
    PerLambda entry;
    entry.lambda = v;
    entry.empirical_risk = risk_total / m;
    entry.abstention_rate = static_cast<double>(abstained) / m;
    entry.p_value = p_value(entry.empirical_risk, m, options.params.alpha, options.p_value_kind);
    pvalues.push_back(entry.p_value);
    artifact.per_lambda.push_back(std::move(entry));
  }

  artifact.valid_set = bonferroni_valid_set(pvalues, options.params.delta, grid.size());
  for (size_t idx : artifact.valid_set) artifact.per_lambda[idx].valid = true;

  if (artifact.valid_set.empty()) {
    artifact.always_abstain_fallback = true;
  } else {
    artifact.selected =
        artifact.per_lambda[select_threshold(artifact.per_lambda, artifact.valid_set)].lambda;
  }
  return artifact;
}

CalibrationArtifact calibrate(std::span<const bench::DatasetRecord> tasks,
                              gateway::Generator& model, sandbox::Executor& executor,
                              const ThresholdGrid& grid, const CalibrationOptions& options) {
  std::vector<CalTaskRecord> records;
  std::vector<std::string> excluded;
  std::vector<bench::DatasetRecord> included;
  records.reserve(tasks.size());
  for (const auto& task : tasks) {
    try {
      records.push_back(build_record(task, model, executor, options));
      included.push_back(task);
    } catch (const EngineError& e) {
      excluded.push_back(task.task_id + ": " + e.what());
    }
  }
  if (records.empty()) throw EngineError("calibrate: every task failed record construction");

  CalibrationArtifact artifact = calibrate_records(records, grid, options);
  artifact.dataset_digest = bench::dataset_digest(included);
  artifact.model = model.name();
  artifact.excluded_tasks = std::move(excluded);
  return artifact;
}

std::string CalibrationArtifact::to_json() const {
  json out;
  out["schema"] = "refusalgate.calibration";
  out["version"] = version;
  out["alpha"] = params.alpha;
  out["delta"] = params.delta;
  out["k"] = params.k;
  out["grid"] = {{"spec", json::parse(grid_spec_json.empty() ? "{}" : grid_spec_json)},
                 {"size", per_lambda.size()}};
  out["per_lambda"] = json::array();
  for (const auto& entry : per_lambda) {
    out["per_lambda"].push_back({{"lambda", threshold_to_json(entry.lambda)},
                                 {"empirical_risk", entry.empirical_risk},
                                 {"p_value", entry.p_value},
                                 {"abstention_rate", entry.abstention_rate},
                                 {"valid", entry.valid}});
  }
  out["valid_set"] = valid_set;
  out["selected"] = selected ? threshold_to_json(*selected) : json(nullptr);
  out["always_abstain_fallback"] = always_abstain_fallback;
  out["dataset_digest"] = dataset_digest;
  out["model"] = model;
  out["n_samples"] = n_samples;
  out["n_tests"] = n_tests;
  out["p_value_kind"] = p_value_kind_name(p_value_kind);
  out["se_variant"] =
      se_variant == scores::SeVariant::exact ? "exact" : "rao_blackwellized";
  out["seed"] = seed;
  out["created_at"] = created_at;
  out["excluded_tasks"] = excluded_tasks;
  return out.dump(2);
}

CalibrationArtifact CalibrationArtifact::from_json(const std::string& text) {
  json in;
  try {
    in = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("artifact: bad JSON: ") + e.what());
  }
  if (in.value("schema", "") != "refusalgate.calibration")
    throw InputError("artifact: unrecognized schema tag");
  if (in.value("version", -1) != 1)
    throw InputError("artifact: unsupported version " + std::to_string(in.value("version", -1)));

  CalibrationArtifact a;
  a.version = in.at("version").get<int>();
  a.params.alpha = in.at("alpha").get<double>();
  a.params.delta = in.at("delta").get<double>();
  a.params.k = in.at("k").get<int>();
  a.grid_spec_json = in.at("grid").value("spec", json::object()).dump();
  for (const auto& je : in.at("per_lambda")) {
    PerLambda entry;
    entry.lambda = threshold_from_json(je.at("lambda"));
    entry.empirical_risk = je.at("empirical_risk").get<double>();
    entry.p_value = je.at("p_value").get<double>();
    entry.abstention_rate = je.at("abstention_rate").get<double>();
    entry.valid = je.at("valid").get<bool>();
    a.per_lambda.push_back(std::move(entry));
  }
  a.valid_set = in.at("valid_set").get<std::vector<size_t>>();
  if (!in.at("selected").is_null()) a.selected = threshold_from_json(in.at("selected"));
  a.always_abstain_fallback = in.value("always_abstain_fallback", false);
  a.dataset_digest = in.value("dataset_digest", "");
  a.model = in.value("model", "");
  a.n_samples = in.value("n_samples", 0);
  a.n_tests = in.value("n_tests", 0);
  a.p_value_kind = in.value("p_value_kind", "hoeffding") == "hoeffding_bentkus"
                       ? PValueKind::hoeffding_bentkus
                       : PValueKind::hoeffding;
  a.se_variant = in.value("se_variant", "exact") == "rao_blackwellized"
                     ? scores::SeVariant::rao_blackwellized
                     : scores::SeVariant::exact;
  a.seed = in.value("seed", 0ULL);
  a.created_at = in.value("created_at", "");
  a.excluded_tasks = in.value("excluded_tasks", std::vector<std::string>{});

  // Invariants the artifact must carry.
  const double cutoff = a.params.delta / static_cast<double>(a.per_lambda.size());
  for (size_t idx : a.valid_set) {
    if (idx >= a.per_lambda.size()) throw InputError("artifact: valid_set index out of range");
    if (a.per_lambda[idx].p_value > cutoff)
      throw InputError("artifact: valid lambda fails the Bonferroni cutoff");
  }
  if (a.selected && a.valid_set.empty())
    throw InputError("artifact: selected threshold without a valid set");
  return a;
}

void CalibrationArtifact::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write artifact: " + path.string());
  out << to_json() << "\n";
}

CalibrationArtifact CalibrationArtifact::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open artifact: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace refusalgate::ltt

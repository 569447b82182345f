#include "refusalgate/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "refusalgate/digest.hpp"
#include "refusalgate/errors.hpp"
#include "refusalgate/rng.hpp"

namespace refusalgate::bench {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Dataset ingestion
// ---------------------------------------------------------------------------

std::string record_to_json_line(const DatasetRecord& record) {
  json tests = json::array();
  for (const auto& t : record.oracle_tests) {
    if (t.expected) {
      tests.push_back({{"invocation", t.invocation}, {"expected", *t.expected}});
    } else {
      tests.push_back({{"assertion", t.invocation}});
    }
  }
  json out = {{"task_id", record.task_id}, {"prompt", record.prompt}, {"oracle_tests", tests}};
  if (!record.entry_point.empty()) out["entry_point"] = record.entry_point;
  return out.dump();
}

DatasetRecord record_from_json_line(const std::string& line, size_t line_number) {
  json in;
  try {
    in = json::parse(line);
  } catch (const json::exception& e) {
    throw InputError("dataset line " + std::to_string(line_number) + ": bad JSON: " + e.what());
  }
  DatasetRecord record;
  record.task_id = in.value("task_id", "");
  record.prompt = in.value("prompt", "");
  record.entry_point = in.value("entry_point", "");
  if (record.task_id.empty())
    throw InputError("dataset line " + std::to_string(line_number) + ": task_id required");

  size_t i = 0;
  for (const auto& jt : in.value("oracle_tests", json::array())) {
    sandbox::OracleTest t;
    t.test_id = record.task_id + ":o" + std::to_string(i++);
    if (jt.contains("assertion")) {
      t.invocation = jt.at("assertion").get<std::string>();
    } else {
      t.invocation = jt.at("invocation").get<std::string>();
      if (jt.contains("expected")) t.expected = jt.at("expected").get<std::string>();
    }
    record.oracle_tests.push_back(std::move(t));
  }
  if (record.oracle_tests.empty())
    throw InputError("dataset record " + record.task_id + " has no oracle tests (line " +
                     std::to_string(line_number) + ")");
  return record;
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open dataset: " + path.string());
  std::vector<DatasetRecord> records;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    records.push_back(record_from_json_line(line, line_number));
  }
  return records;
}

void save_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write dataset: " + path.string());
  for (const auto& r : records) out << record_to_json_line(r) << "\n";
}

DatasetSplit split_dataset(std::vector<DatasetRecord> records, uint64_t seed, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InputError("split ratio must be in [0,1]");
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(records);
  const size_t n_cal = static_cast<size_t>(
      std::llround(ratio * static_cast<double>(records.size())));
  DatasetSplit split;
  split.calibration.assign(records.begin(), records.begin() + n_cal);
  split.testing.assign(records.begin() + n_cal, records.end());
  return split;
}

DatasetRecord convert_humaneval_line(const std::string& line, size_t line_number) {
  json in;
  try {
    in = json::parse(line);
  } catch (const json::exception& e) {
    throw InputError("humaneval line " + std::to_string(line_number) + ": bad JSON: " + e.what());
  }
  DatasetRecord record;
  record.task_id = in.at("task_id").get<std::string>();
  record.prompt = in.at("prompt").get<std::string>();
  record.entry_point = in.value("entry_point", "");
  // The published "test" block defines check(candidate); one assertion-style
  // oracle runs the whole block against the entry point.
  sandbox::OracleTest t;
  t.test_id = record.task_id + ":o0";
  t.invocation = in.at("test").get<std::string>() + "\n\ncheck(" + record.entry_point + ")";
  record.oracle_tests.push_back(std::move(t));
  return record;
}

DatasetRecord convert_mbpp_line(const std::string& line, size_t line_number) {
  json in;
  try {
    in = json::parse(line);
  } catch (const json::exception& e) {
    throw InputError("mbpp line " + std::to_string(line_number) + ": bad JSON: " + e.what());
  }
  DatasetRecord record;
  record.task_id = "mbpp/" + std::to_string(in.at("task_id").get<long>());
  record.prompt = in.at("text").get<std::string>();
  const std::string setup = in.value("test_setup_code", "");
  size_t i = 0;
  for (const auto& jt : in.at("test_list")) {
    sandbox::OracleTest t;
    t.test_id = record.task_id + ":o" + std::to_string(i++);
    t.invocation = setup.empty() ? jt.get<std::string>() : setup + "\n" + jt.get<std::string>();
    record.oracle_tests.push_back(std::move(t));
  }
  if (record.oracle_tests.empty())
    throw InputError("mbpp record " + record.task_id + " has no tests");
  return record;
}

std::vector<DatasetRecord> convert_dataset(const std::filesystem::path& path,
                                           const std::string& flavor) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open dataset: " + path.string());
  const bool humaneval = flavor == "humaneval";
  if (!humaneval && flavor != "mbpp")
    throw InputError("unknown dataset flavor: " + flavor + " (expected humaneval|mbpp)");
  std::vector<DatasetRecord> records;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    records.push_back(humaneval ? convert_humaneval_line(line, line_number)
                                : convert_mbpp_line(line, line_number));
  }
  return records;
}

std::string dataset_digest(const std::vector<DatasetRecord>& records) {
  std::vector<std::string> hashes;
  hashes.reserve(records.size());
  for (const auto& r : records) hashes.push_back(sha256_hex(record_to_json_line(r)));
  std::sort(hashes.begin(), hashes.end());
  std::string all;
  for (const auto& h : hashes) {
    all += h;
    all.push_back('\n');
  }
  return sha256_hex(all);
}

// ---------------------------------------------------------------------------
// Labeling and metrics
// ---------------------------------------------------------------------------

GroundTruthLabel label_ground_truth(const DatasetRecord& task, gateway::Generator& model,
                                    sandbox::Executor& executor, const LabelOptions& options) {
  if (task.oracle_tests.empty())
    throw InputError("task " + task.task_id + " has no oracle tests");
  options.params.validate();

  gateway::GenerationRequest req;
  req.prompt = task.prompt;
  req.count = options.n;
  req.kind = gateway::GenKind::code;
  req.seed = derive_seed(options.seed, task.task_id + "/label");
  const auto samples = model.generate_code(req);

  std::vector<sandbox::TestInput> oracle_inputs;
  oracle_inputs.reserve(task.oracle_tests.size());
  for (const auto& o : task.oracle_tests) oracle_inputs.push_back({o.test_id, o.invocation});

  const auto matrix = executor.execute_matrix(samples, oracle_inputs);
  const int c = ltt::count_correct(matrix, task.oracle_tests);
  const double h = scores::h_at_k(options.n, c, options.params.k).value;
  return {task.task_id, h, h > options.params.alpha, options.n};
}

MetricsReport evaluate(const std::map<std::string, ltt::Verdict>& decisions,
                       std::span<const GroundTruthLabel> labels) {
  if (decisions.size() != labels.size())
    throw InputError("evaluate: decision and label sets differ in size");
  MetricsReport report;
  for (const auto& label : labels) {
    const auto it = decisions.find(label.task_id);
    if (it == decisions.end())
      throw InputError("evaluate: no decision for task " + label.task_id);
    const bool abstained = it->second == ltt::Verdict::abstain;
    if (abstained && label.should_abstain) ++report.tp;
    else if (abstained && !label.should_abstain) ++report.fp;
    else if (!abstained && label.should_abstain) ++report.fn;
    else ++report.tn;
  }
  const int predicted_positive = report.tp + report.fp;
  const int actual_positive = report.tp + report.fn;
  if (predicted_positive > 0)
    report.precision = static_cast<double>(report.tp) / predicted_positive;
  if (actual_positive > 0) report.recall = static_cast<double>(report.tp) / actual_positive;
  if (report.precision && report.recall && (*report.precision + *report.recall) > 0.0) {
    report.f1 =
        2.0 * *report.precision * *report.recall / (*report.precision + *report.recall);
  }
  report.abstention_rate =
      labels.empty() ? 0.0 : static_cast<double>(predicted_positive) / labels.size();
  return report;
}

// ---------------------------------------------------------------------------
// Risk distribution and trade-off reports
// ---------------------------------------------------------------------------

namespace {

double true_h_for(const std::map<std::string, double>& true_h, const std::string& task_id) {
  const auto it = true_h.find(task_id);
  if (it == true_h.end()) throw InputError("no ground-truth H@k for task " + task_id);
  return it->second;
}

}  // namespace

std::vector<RiskPoint> risk_distribution(const ltt::CalibrationArtifact& artifact,
                                         std::span<const DatasetRecord> tasks,
                                         gateway::Generator& model, sandbox::Executor& executor,
                                         const std::map<std::string, double>& true_h,
                                         const SuiteOptions& options) {
  std::vector<RiskPoint> points;
  points.reserve(tasks.size());
  for (const auto& task : tasks) {
    double risk = 0.0;
    if (artifact.selected) {
      engine::DecideOptions dopts;
      dopts.seed = derive_seed(options.seed, "risk/" + task.task_id);
      dopts.se_variant = options.se_variant;
      const auto decision = engine::decide(model, executor, task.prompt, options.n_samples,
                                           *artifact.selected, dopts);
      if (decision.verdict == ltt::Verdict::admit) risk = true_h_for(true_h, task.task_id);
    }
    points.push_back({task.task_id, risk});
  }
  return points;
}

std::vector<TradeoffPoint> tradeoff_curve(const ltt::CalibrationArtifact& artifact,
                                          std::span<const DatasetRecord> tasks,
                                          gateway::Generator& model, sandbox::Executor& executor,
                                          const std::map<std::string, double>& true_h,
                                          const SuiteOptions& options) {
  std::vector<TradeoffPoint> points;
  if (artifact.valid_set.empty() || tasks.empty()) return points;

  // One pool per task, shared across every valid lambda.
  std::vector<engine::BatchPools> pools;
  pools.reserve(tasks.size());
  for (const auto& task : tasks) {
    engine::DecideOptions dopts;
    dopts.seed = derive_seed(options.seed, "tradeoff/" + task.task_id);
    pools.push_back(
        engine::generate_batch(model, task.prompt, options.n_samples, 0, 0, dopts));
  }

  for (size_t idx : artifact.valid_set) {
    const auto& lambda = artifact.per_lambda[idx].lambda;
    int abstained = 0;
    double risk_total = 0.0;
    for (size_t i = 0; i < tasks.size(); ++i) {
      const auto eval = engine::evaluate_pools(executor, pools[i].samples, pools[i].tests,
                                               lambda, options.se_variant);
      if (eval.verdict == ltt::Verdict::abstain) {
        ++abstained;
      } else {
        risk_total += true_h_for(true_h, tasks[i].task_id);
      }
    }
    TradeoffPoint point;
    point.abstention_rate = static_cast<double>(abstained) / tasks.size();
    point.risk = risk_total / tasks.size();
    point.lambda = lambda;
    points.push_back(std::move(point));
  }
  std::sort(points.begin(), points.end(), [](const auto& a, const auto& b) {
    if (a.abstention_rate != b.abstention_rate) return a.abstention_rate < b.abstention_rate;
    return a.risk < b.risk;
  });
  return points;
}

void write_risk_csv(const std::filesystem::path& path, std::span<const RiskPoint> points) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write report: " + path.string());
  out << "task_id,risk\n";
  for (const auto& p : points) out << p.task_id << "," << p.risk << "\n";
}

void write_tradeoff_csv(const std::filesystem::path& path,
                        std::span<const TradeoffPoint> points) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write report: " + path.string());
  out << "abstention_rate,risk\n";
  for (const auto& p : points) out << p.abstention_rate << "," << p.risk << "\n";
}

// ---------------------------------------------------------------------------
// Guarantee verification
// ---------------------------------------------------------------------------

DatasetRecord record_for(const synthetic::SyntheticTask& task) {
  DatasetRecord record;
  record.task_id = task.task_id;
  record.prompt = task.prompt;
  record.entry_point = "f";
  record.oracle_tests = task.oracle_tests();
  return record;
}

namespace {

struct ReplicateResult {
  double true_risk = 0.0;
  bool violation = false;
  long admitted = 0;
  long admitted_within_alpha = 0;
};

ReplicateResult run_replicate(const synthetic::TaskDistribution& distribution,
                              const ltt::ThresholdGrid& grid, const GuaranteeOptions& options,
                              int replicate_index) {
  const uint64_t seed =
      derive_seed(options.seed, "replicate/" + std::to_string(replicate_index));

  auto spec = std::make_shared<synthetic::SyntheticModelSpec>();
  auto cal_tasks =
      distribution.sample_many(derive_seed(seed, "cal"), options.m, "cal-");
  auto eval_tasks =
      distribution.sample_many(derive_seed(seed, "eval"), options.eval_tasks, "eval-");
  spec->tasks = cal_tasks;
  spec->tasks.insert(spec->tasks.end(), eval_tasks.begin(), eval_tasks.end());

  synthetic::SyntheticModel model(spec);
  synthetic::VirtualExecutor executor(spec);

  ltt::CalibrationOptions copts;
  copts.params = options.params;
  copts.n_samples = options.n_samples;
  copts.n_tests = options.n_tests;
  copts.seed = derive_seed(seed, "calibrate");

  std::vector<ltt::CalTaskRecord> records;
  records.reserve(cal_tasks.size());
  for (const auto& task : cal_tasks) {
    records.push_back(ltt::build_record(record_for(task), model, executor, copts));
  }
  const auto artifact = ltt::calibrate_records(records, grid, copts);

  ReplicateResult result;
  if (!artifact.selected) {
    // Always-abstain fallback: admitted risk identically zero.
    return result;
  }

  double risk_total = 0.0;
  for (const auto& task : eval_tasks) {
    engine::DecideOptions dopts;
    dopts.seed = derive_seed(seed, "decide/" + task.task_id);
    const auto decision = engine::decide(model, executor, task.prompt, options.n_samples,
                                         *artifact.selected, dopts);
    if (decision.verdict == ltt::Verdict::admit) {
      const double h = task.true_h_at_k(options.params.k);
      risk_total += h;
      ++result.admitted;
      if (h <= options.params.alpha) ++result.admitted_within_alpha;
    }
  }
  result.true_risk = risk_total / static_cast<double>(eval_tasks.size());
  result.violation = result.true_risk > options.params.alpha;
  return result;
}

}  // namespace

GuaranteeReport verify_guarantee(const synthetic::TaskDistribution& distribution,
                                 const ltt::ThresholdGrid& grid,
                                 const GuaranteeOptions& options) {
  options.params.validate();
  grid.validate();
  if (options.replicates < 1) throw InputError("verify_guarantee: replicates must be >= 1");
  if (options.m < 1) throw InputError("verify_guarantee: m must be >= 1");

  std::vector<ReplicateResult> results(options.replicates);
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= options.replicates || first_error) return;
      try {
        results[r] = run_replicate(distribution, grid, options, r);
      } catch (...) {
        std::scoped_lock lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  int n_threads = options.threads;
  if (n_threads <= 0) {
    const unsigned hw = std::thread::hardware_concurrency();
    n_threads = hw == 0 ? 1 : static_cast<int>(hw);
  }
  n_threads = std::min(n_threads, options.replicates);
  std::vector<std::thread> pool;
  for (int t = 0; t + 1 < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  GuaranteeReport report;
  report.replicates = options.replicates;
  report.alpha = options.params.alpha;
  report.delta = options.params.delta;
  report.m = options.m;
  report.grid_digest = sha256_hex(grid.spec_json);
  for (const auto& r : results) {
    report.per_replicate_risk.push_back(r.true_risk);
    report.per_replicate_violation.push_back(r.violation);
    if (r.violation) ++report.violations;
    report.admitted_total += r.admitted;
    report.admitted_within_alpha += r.admitted_within_alpha;
  }
  report.violation_rate =
      static_cast<double>(report.violations) / static_cast<double>(report.replicates);
  return report;
}

void write_guarantee_csv(const std::filesystem::path& path, const GuaranteeReport& report) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write report: " + path.string());
  out << "replicate,true_risk,violation\n";
  for (size_t i = 0; i < report.per_replicate_risk.size(); ++i) {
    out << i << "," << report.per_replicate_risk[i] << ","
        << (report.per_replicate_violation[i] ? 1 : 0) << "\n";
  }
}

}  // namespace refusalgate::bench

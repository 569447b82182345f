// refusalgate CLI: calibrate an abstention rule, decide on tasks, label
// ground truth, score decisions, and run the guarantee study.
//
// Exit codes: 0 success (decide: Admit), 10 decide: Abstain, 2 usage error,
// 3 calibration fell back to always-abstain, 1 anything else.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "refusalgate/bench.hpp"
#include "refusalgate/engine.hpp"
#include "refusalgate/errors.hpp"
#include "refusalgate/gateway.hpp"
#include "refusalgate/ltt.hpp"
#include "refusalgate/sandbox.hpp"
#include "refusalgate/synthetic.hpp"

using namespace refusalgate;
using nlohmann::json;

namespace {

constexpr int kExitAbstain = 10;
constexpr int kExitFallback = 3;

struct ModelOpts {
  std::string synthetic_spec;
  std::string endpoint;
  std::string token;
  std::string model_name = "default";
  std::string prompts_dir;
  bool real_exec = false;  // force the sandbox even for synthetic models

  std::string cache_dir;
  int timeout_ms = 4000;
  int max_parallel = 0;
  long memory_cap_mb = 512;
};

void add_model_options(CLI::App* cmd, ModelOpts& opts) {
  cmd->add_option("--synthetic", opts.synthetic_spec,
                  "synthetic model spec JSON (replaces the endpoint)");
  cmd->add_option("--endpoint", opts.endpoint, "chat-completion endpoint URL")
      ->envname("REFUSALGATE_ENDPOINT");
  cmd->add_option("--token", opts.token, "bearer token")->envname("REFUSALGATE_TOKEN");
  cmd->add_option("--model", opts.model_name, "model name sent to the endpoint");
  cmd->add_option("--prompts-dir", opts.prompts_dir,
                  "directory with code_prompt.txt / test_prompt.txt overrides");
  cmd->add_flag("--real-exec", opts.real_exec,
                "run synthetic programs through the real sandbox");
  cmd->add_option("--cache-dir", opts.cache_dir, "execution cache directory");
  cmd->add_option("--timeout-ms", opts.timeout_ms, "per-execution wall timeout");
  cmd->add_option("--max-parallel", opts.max_parallel, "max concurrent executions (0 = cores)");
  cmd->add_option("--memory-cap-mb", opts.memory_cap_mb, "address-space cap per execution");
}

struct Stack {
  std::shared_ptr<const synthetic::SyntheticModelSpec> spec;  // set for synthetic models
  std::unique_ptr<gateway::Generator> model;
  std::unique_ptr<sandbox::Executor> executor;
};

sandbox::ExecConfig exec_config(const ModelOpts& opts) {
  sandbox::ExecConfig config;
  config.timeout_ms = opts.timeout_ms;
  config.max_parallel = opts.max_parallel;
  config.memory_cap_bytes = opts.memory_cap_mb << 20;
  if (!opts.cache_dir.empty()) config.cache_dir = opts.cache_dir;
  return config;
}

Stack build_stack(const ModelOpts& opts) {
  Stack stack;
  if (!opts.synthetic_spec.empty()) {
    auto spec = std::make_shared<synthetic::SyntheticModelSpec>(
        synthetic::SyntheticModelSpec::load(opts.synthetic_spec));
    stack.spec = spec;
    stack.model = std::make_unique<synthetic::SyntheticModel>(spec);
    if (opts.real_exec) {
      stack.executor = std::make_unique<sandbox::SandboxExecutor>(exec_config(opts));
    } else {
      stack.executor = std::make_unique<synthetic::VirtualExecutor>(spec);
    }
    return stack;
  }
  gateway::EndpointOptions endpoint;
  endpoint.url = opts.endpoint;
  endpoint.token = opts.token;
  endpoint.model_name = opts.model_name;
  auto templates = opts.prompts_dir.empty()
                       ? gateway::PromptTemplates::defaults()
                       : gateway::PromptTemplates::load_dir(opts.prompts_dir);
  stack.model = std::make_unique<gateway::EndpointModel>(endpoint, templates);
  stack.executor = std::make_unique<sandbox::SandboxExecutor>(exec_config(opts));
  return stack;
}

std::vector<bench::DatasetRecord> load_tasks(const std::string& dataset_path,
                                             const Stack& stack) {
  if (!dataset_path.empty()) return bench::load_dataset(dataset_path);
  if (stack.spec) {
    std::vector<bench::DatasetRecord> records;
    for (const auto& task : stack.spec->tasks) records.push_back(bench::record_for(task));
    return records;
  }
  throw InputError("no dataset: pass --dataset or --synthetic");
}

std::map<std::string, double> load_labels_h(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open labels: " + path);
  std::map<std::string, double> out;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto parsed = json::parse(line);
      out[parsed.at("task_id").get<std::string>()] = parsed.at("h_at_k").get<double>();
    } catch (const json::exception& e) {
      throw InputError("labels line " + std::to_string(line_number) + ": " + e.what());
    }
  }
  return out;
}

std::vector<bench::GroundTruthLabel> load_labels(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open labels: " + path);
  std::vector<bench::GroundTruthLabel> out;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto parsed = json::parse(line);
      out.push_back({parsed.at("task_id").get<std::string>(),
                     parsed.at("h_at_k").get<double>(),
                     parsed.at("should_abstain").get<bool>(), parsed.value("n", 256)});
    } catch (const json::exception& e) {
      throw InputError("labels line " + std::to_string(line_number) + ": " + e.what());
    }
  }
  return out;
}

ltt::ThresholdGrid resolve_grid(const std::string& grid_path, const std::string& mode) {
  if (!grid_path.empty()) return ltt::ThresholdGrid::load(grid_path);
  return ltt::ThresholdGrid::default_for(ltt::mode_from(mode));
}

std::string format_lambda(const ltt::ThresholdVector& v) {
  std::ostringstream os;
  os << "mode=" << ltt::mode_name(v.mode) << " lambda1=" << v.stdf.lambda1
     << " lambda2=" << v.stdf.lambda2 << " lambda3=" << v.stdf.lambda3
     << " lambda_score=" << v.lambda_score;
  return os.str();
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_calibrate(const ModelOpts& model_opts, const std::string& dataset_path,
                  const std::string& artifact_path, const std::string& grid_path,
                  const std::string& mode, const scores::RiskParams& params, int n_samples,
                  int n_tests, const std::string& pvalue_kind, uint64_t seed) {
  auto stack = build_stack(model_opts);
  const auto tasks = load_tasks(dataset_path, stack);
  const auto grid = resolve_grid(grid_path, mode);

  ltt::CalibrationOptions options;
  options.params = params;
  options.n_samples = n_samples;
  options.n_tests = n_tests > 0 ? n_tests : n_samples;
  options.seed = seed;
  options.p_value_kind = pvalue_kind == "hoeffding_bentkus" ? ltt::PValueKind::hoeffding_bentkus
                                                            : ltt::PValueKind::hoeffding;

  auto artifact = ltt::calibrate(tasks, *stack.model, *stack.executor, grid, options);
  artifact.save(artifact_path);

  std::printf("calibrated on %zu tasks (grid %zu, excluded %zu)\n", tasks.size(), grid.size(),
              artifact.excluded_tasks.size());
  std::printf("valid thresholds: %zu\n", artifact.valid_set.size());
  if (artifact.selected) {
    double risk = 0.0, abstention = 0.0;
    for (size_t idx : artifact.valid_set) {
      if (artifact.per_lambda[idx].lambda == *artifact.selected) {
        risk = artifact.per_lambda[idx].empirical_risk;
        abstention = artifact.per_lambda[idx].abstention_rate;
      }
    }
    std::printf("selected: %s\n", format_lambda(*artifact.selected).c_str());
    std::printf("empirical risk %.4f, abstention rate %.4f\n", risk, abstention);
    std::printf("artifact written to %s\n", artifact_path.c_str());
    return 0;
  }
  std::printf("no valid threshold: engine degrades to always-abstain\n");
  std::printf("artifact written to %s\n", artifact_path.c_str());
  return kExitFallback;
}

int cmd_decide(const ModelOpts& model_opts, const std::string& artifact_path,
               const std::string& prompt_file, const std::string& prompt_text, int n,
               bool efficient, int batch, int max_budget, uint64_t seed,
               const CLI::App* cmd) {
  const auto artifact = ltt::CalibrationArtifact::load(artifact_path);

  // Flags must agree with the artifact they drive.
  const auto check_match = [&](const char* flag, double artifact_value) {
    if (cmd->count(flag) > 0 &&
        cmd->get_option(flag)->as<double>() != artifact_value) {
      throw InputError(std::string(flag) + " conflicts with the artifact (" +
                       std::to_string(artifact_value) +
                       "); refusing to decide under mismatched parameters");
    }
  };
  check_match("--alpha", artifact.params.alpha);
  check_match("--delta", artifact.params.delta);
  check_match("--k", artifact.params.k);

  if (!artifact.selected) {
    std::printf("{\n  \"verdict\": \"abstain\",\n  \"reason\": \"always-abstain fallback\"\n}\n");
    return kExitAbstain;
  }
  if (cmd->count("--mode") > 0) {
    const auto mode = ltt::mode_from(cmd->get_option("--mode")->as<std::string>());
    if (mode != artifact.selected->mode)
      throw InputError("--mode conflicts with the artifact's selected threshold");
  }

  std::string prompt = prompt_text;
  if (!prompt_file.empty()) {
    std::ifstream in(prompt_file, std::ios::binary);
    if (!in) throw InputError("cannot open prompt file: " + prompt_file);
    std::stringstream ss;
    ss << in.rdbuf();
    prompt = ss.str();
  }
  if (prompt.empty()) throw InputError("no prompt: pass --prompt or --prompt-file");

  auto stack = build_stack(model_opts);
  engine::DecideOptions options;
  options.seed = seed;
  options.se_variant = artifact.se_variant;

  const auto decision =
      efficient ? engine::decide_efficient(*stack.model, *stack.executor, prompt, batch,
                                           max_budget, *artifact.selected, options)
                : engine::decide(*stack.model, *stack.executor, prompt,
                                 n > 0 ? n : artifact.n_samples, *artifact.selected, options);
  std::printf("%s\n", decision.to_json().c_str());
  return decision.verdict == ltt::Verdict::admit ? 0 : kExitAbstain;
}

int cmd_label(const ModelOpts& model_opts, const std::string& dataset_path,
              const std::string& out_path, const scores::RiskParams& params, int n,
              uint64_t seed) {
  auto stack = build_stack(model_opts);
  const auto tasks = load_tasks(dataset_path, stack);

  bench::LabelOptions options;
  options.params = params;
  options.n = n;
  options.seed = seed;

  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write labels: " + out_path);
  int abstain_labels = 0;
  for (const auto& task : tasks) {
    const auto label = bench::label_ground_truth(task, *stack.model, *stack.executor, options);
    if (label.should_abstain) ++abstain_labels;
    out << json{{"task_id", label.task_id},
                {"h_at_k", label.h_at_k},
                {"should_abstain", label.should_abstain},
                {"n", label.n_labeled}}
               .dump()
        << "\n";
  }
  std::printf("labeled %zu tasks (N=%d): %d should abstain\n", tasks.size(), n, abstain_labels);
  std::printf("labels written to %s\n", out_path.c_str());
  return 0;
}

int cmd_eval(const std::string& decisions_path, const std::string& labels_path) {
  const auto labels = load_labels(labels_path);
  std::ifstream in(decisions_path, std::ios::binary);
  if (!in) throw InputError("cannot open decisions: " + decisions_path);
  std::map<std::string, ltt::Verdict> decisions;
  std::string line;
  size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto parsed = json::parse(line);
      decisions[parsed.at("task_id").get<std::string>()] =
          parsed.at("verdict").get<std::string>() == "abstain" ? ltt::Verdict::abstain
                                                               : ltt::Verdict::admit;
    } catch (const json::exception& e) {
      throw InputError("decisions line " + std::to_string(line_number) + ": " + e.what());
    }
  }

  const auto report = bench::evaluate(decisions, labels);
  const auto show = [](const std::optional<double>& v) {
    if (!v) return std::string("undefined");
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.3f", *v);
    return std::string(buf);
  };
  std::printf("precision=%s recall=%s f1=%s\n", show(report.precision).c_str(),
              show(report.recall).c_str(), show(report.f1).c_str());
  std::printf("tp=%d fp=%d tn=%d fn=%d abstention_rate=%.3f\n", report.tp, report.fp,
              report.tn, report.fn, report.abstention_rate);
  return 0;
}

int cmd_tradeoff(const ModelOpts& model_opts, const std::string& artifact_path,
                 const std::string& dataset_path, const std::string& labels_path,
                 const std::string& out_path, int n, uint64_t seed) {
  const auto artifact = ltt::CalibrationArtifact::load(artifact_path);
  auto stack = build_stack(model_opts);
  const auto tasks = load_tasks(dataset_path, stack);
  const auto true_h = load_labels_h(labels_path);

  bench::SuiteOptions options;
  options.n_samples = n > 0 ? n : artifact.n_samples;
  options.seed = seed;
  options.se_variant = artifact.se_variant;

  const auto points =
      bench::tradeoff_curve(artifact, tasks, *stack.model, *stack.executor, true_h, options);
  if (points.empty()) std::fprintf(stderr, "warning: empty valid set, empty curve\n");
  bench::write_tradeoff_csv(out_path, points);
  std::printf("%zu points written to %s\n", points.size(), out_path.c_str());
  return 0;
}

int cmd_risk_dist(const ModelOpts& model_opts, const std::string& artifact_path,
                  const std::string& dataset_path, const std::string& labels_path,
                  const std::string& out_path, int n, uint64_t seed) {
  const auto artifact = ltt::CalibrationArtifact::load(artifact_path);
  auto stack = build_stack(model_opts);
  const auto tasks = load_tasks(dataset_path, stack);
  const auto true_h = load_labels_h(labels_path);

  bench::SuiteOptions options;
  options.n_samples = n > 0 ? n : artifact.n_samples;
  options.seed = seed;
  options.se_variant = artifact.se_variant;

  const auto points =
      bench::risk_distribution(artifact, tasks, *stack.model, *stack.executor, true_h, options);
  bench::write_risk_csv(out_path, points);
  int below = 0;
  for (const auto& p : points) {
    if (p.risk <= artifact.params.alpha) ++below;
  }
  std::printf("%zu tasks, %.1f%% at or below alpha=%.2f; written to %s\n", points.size(),
              points.empty() ? 100.0 : 100.0 * below / points.size(), artifact.params.alpha,
              out_path.c_str());
  return 0;
}

int cmd_verify_guarantee(const std::string& grid_path, const std::string& mode,
                         const std::string& out_path, const scores::RiskParams& params, int m,
                         int replicates, int eval_tasks, int n, int tests, uint64_t seed,
                         int threads) {
  synthetic::TaskDistribution distribution;
  const auto grid = resolve_grid(grid_path, mode);

  bench::GuaranteeOptions options;
  options.params = params;
  options.m = m;
  options.replicates = replicates;
  options.eval_tasks = eval_tasks;
  options.n_samples = n;
  options.n_tests = tests;
  options.seed = seed;
  options.threads = threads;

  const auto report = bench::verify_guarantee(distribution, grid, options);
  if (!out_path.empty()) bench::write_guarantee_csv(out_path, report);

  const double bound =
      params.delta + 3.0 * std::sqrt(params.delta * (1.0 - params.delta) / replicates);
  const bool pass = report.violation_rate <= bound;
  std::printf("replicates=%d violations=%d rate=%.4f bound=%.4f -> %s\n", report.replicates,
              report.violations, report.violation_rate, bound, pass ? "PASS" : "FAIL");
  if (report.admitted_total > 0) {
    std::printf("admitted tasks within alpha: %.1f%%\n",
                100.0 * report.admitted_within_alpha / report.admitted_total);
  }
  if (!out_path.empty()) std::printf("per-replicate CSV written to %s\n", out_path.c_str());
  return pass ? 0 : 1;
}

int cmd_make_synthetic(const std::string& out_path, int tasks, uint64_t seed,
                       bool force_two_variants, int min_invalid) {
  synthetic::TaskDistribution distribution;
  distribution.force_two_variants = force_two_variants;
  distribution.min_invalid_inputs = min_invalid;
  synthetic::SyntheticModelSpec spec;
  spec.tasks = distribution.sample_many(seed, tasks, "task-");
  spec.save(out_path);
  std::printf("wrote %d synthetic tasks to %s\n", tasks, out_path.c_str());
  return 0;
}

int cmd_split(const std::string& dataset_path, double ratio, uint64_t seed,
              const std::string& out_cal, const std::string& out_test) {
  const auto records = bench::load_dataset(dataset_path);
  const auto split = bench::split_dataset(records, seed, ratio);
  bench::save_dataset(out_cal, split.calibration);
  bench::save_dataset(out_test, split.testing);
  std::printf("split %zu records into %zu calibration / %zu testing\n", records.size(),
              split.calibration.size(), split.testing.size());
  return 0;
}

int cmd_convert(const std::string& flavor, const std::string& in_path,
                const std::string& out_path) {
  const auto records = bench::convert_dataset(in_path, flavor);
  bench::save_dataset(out_path, records);
  std::printf("converted %zu %s records to %s\n", records.size(), flavor.c_str(),
              out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"refusalgate: calibrated task abstention for code generation"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from a config file");

  // calibrate ---------------------------------------------------------------
  auto* calibrate = app.add_subcommand("calibrate", "calibrate thresholds on a dataset");
  ModelOpts cal_model;
  add_model_options(calibrate, cal_model);
  std::string cal_dataset, cal_artifact = "calibration.json", cal_grid, cal_mode = "cr";
  std::string cal_pvalue = "hoeffding";
  scores::RiskParams cal_params;
  int cal_n = 64, cal_tests = 0;
  uint64_t cal_seed = 0;
  calibrate->add_option("--dataset", cal_dataset, "dataset JSONL (defaults to synthetic tasks)");
  calibrate->add_option("--artifact", cal_artifact, "output artifact path");
  calibrate->add_option("--grid", cal_grid, "grid spec JSON (default: built-in grid)");
  calibrate->add_option("--mode", cal_mode, "cr|se (picks the default grid)");
  calibrate->add_option("--alpha", cal_params.alpha, "risk tolerance");
  calibrate->add_option("--delta", cal_params.delta, "significance level");
  calibrate->add_option("--k", cal_params.k, "attempts in H@k");
  calibrate->add_option("--n", cal_n, "code samples per task");
  calibrate->add_option("--gen-tests", cal_tests, "generated tests per task (default: --n)");
  calibrate->add_option("--pvalue", cal_pvalue, "hoeffding|hoeffding_bentkus");
  calibrate->add_option("--seed", cal_seed, "master seed");

  // decide ------------------------------------------------------------------
  auto* decide = app.add_subcommand("decide", "admit or abstain on one task prompt");
  ModelOpts dec_model;
  add_model_options(decide, dec_model);
  std::string dec_artifact, dec_prompt_file, dec_prompt, dec_mode;
  int dec_n = 0, dec_batch = 8, dec_max = 64;
  bool dec_efficient = false;
  uint64_t dec_seed = 0;
  double dec_alpha = 0, dec_delta = 0;
  int dec_k = 0;
  decide->add_option("--artifact", dec_artifact, "calibration artifact")->required();
  decide->add_option("--prompt-file", dec_prompt_file, "file holding the task prompt");
  decide->add_option("--prompt", dec_prompt, "task prompt text");
  decide->add_option("--n", dec_n, "samples/tests to generate (default: artifact's)");
  decide->add_flag("--efficient", dec_efficient, "batched early-exit sampling");
  decide->add_option("--batch", dec_batch, "batch size for --efficient");
  decide->add_option("--max", dec_max, "sample budget for --efficient");
  decide->add_option("--mode", dec_mode, "must match the artifact when given");
  decide->add_option("--alpha", dec_alpha, "must match the artifact when given");
  decide->add_option("--delta", dec_delta, "must match the artifact when given");
  decide->add_option("--k", dec_k, "must match the artifact when given");
  decide->add_option("--seed", dec_seed, "master seed");

  // label -------------------------------------------------------------------
  auto* label = app.add_subcommand("label", "ground-truth labels from oracle tests");
  ModelOpts lab_model;
  add_model_options(label, lab_model);
  std::string lab_dataset, lab_out = "labels.jsonl";
  scores::RiskParams lab_params;
  int lab_n = 256;
  uint64_t lab_seed = 0;
  label->add_option("--dataset", lab_dataset, "dataset JSONL (defaults to synthetic tasks)");
  label->add_option("--out", lab_out, "labels output path");
  label->add_option("--alpha", lab_params.alpha, "risk tolerance");
  label->add_option("--k", lab_params.k, "attempts in H@k");
  label->add_option("--n", lab_n, "samples per task for labeling");
  label->add_option("--seed", lab_seed, "master seed");

  // eval --------------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "precision/F1 of decisions against labels");
  std::string eval_decisions, eval_labels;
  eval->add_option("--decisions", eval_decisions, "JSONL of {task_id, verdict}")->required();
  eval->add_option("--labels", eval_labels, "labels JSONL")->required();

  // tradeoff ----------------------------------------------------------------
  auto* tradeoff = app.add_subcommand("tradeoff", "abstention-rate/risk curve over valid set");
  ModelOpts trade_model;
  add_model_options(tradeoff, trade_model);
  std::string trade_artifact, trade_dataset, trade_labels, trade_out = "tradeoff.csv";
  int trade_n = 0;
  uint64_t trade_seed = 0;
  tradeoff->add_option("--artifact", trade_artifact, "calibration artifact")->required();
  tradeoff->add_option("--dataset", trade_dataset, "test tasks JSONL");
  tradeoff->add_option("--labels", trade_labels, "labels JSONL with ground-truth H@k")
      ->required();
  tradeoff->add_option("--out", trade_out, "CSV output path");
  tradeoff->add_option("--n", trade_n, "samples per task (default: artifact's)");
  tradeoff->add_option("--seed", trade_seed, "master seed");

  // risk-dist -----------------------------------------------------------------
  auto* risk = app.add_subcommand("risk-dist", "per-task admission risks of the selected rule");
  ModelOpts risk_model;
  add_model_options(risk, risk_model);
  std::string risk_artifact, risk_dataset, risk_labels, risk_out = "risks.csv";
  int risk_n = 0;
  uint64_t risk_seed = 0;
  risk->add_option("--artifact", risk_artifact, "calibration artifact")->required();
  risk->add_option("--dataset", risk_dataset, "test tasks JSONL");
  risk->add_option("--labels", risk_labels, "labels JSONL with ground-truth H@k")->required();
  risk->add_option("--out", risk_out, "CSV output path");
  risk->add_option("--n", risk_n, "samples per task (default: artifact's)");
  risk->add_option("--seed", risk_seed, "master seed");

  // verify-guarantee ----------------------------------------------------------
  auto* verify = app.add_subcommand("verify-guarantee",
                                    "Monte-Carlo check of the calibration guarantee");
  std::string ver_grid, ver_mode = "cr", ver_out;
  scores::RiskParams ver_params;
  int ver_m = 200, ver_replicates = 100, ver_eval = 400, ver_n = 32, ver_tests = 8,
      ver_threads = 0;
  uint64_t ver_seed = 0;
  verify->add_option("--grid", ver_grid, "grid spec JSON");
  verify->add_option("--mode", ver_mode, "cr|se (picks the default grid)");
  verify->add_option("--out", ver_out, "per-replicate CSV path");
  verify->add_option("--alpha", ver_params.alpha, "risk tolerance");
  verify->add_option("--delta", ver_params.delta, "significance level");
  verify->add_option("--k", ver_params.k, "attempts in H@k");
  verify->add_option("--m", ver_m, "calibration tasks per replicate");
  verify->add_option("--replicates", ver_replicates, "number of replicates");
  verify->add_option("--eval-tasks", ver_eval, "fresh tasks for the true-risk estimate");
  verify->add_option("--n", ver_n, "samples per task");
  verify->add_option("--gen-tests", ver_tests, "generated tests per task");
  verify->add_option("--seed", ver_seed, "master seed");
  verify->add_option("--threads", ver_threads, "replicate workers (0 = cores)");

  // make-synthetic --------------------------------------------------------------
  auto* make_synth = app.add_subcommand("make-synthetic",
                                        "sample a synthetic model spec from the task family");
  std::string synth_out = "synthetic.json";
  int synth_tasks = 80, synth_min_invalid = 0;
  uint64_t synth_seed = 0;
  bool synth_two_variants = false;
  make_synth->add_option("--out", synth_out, "spec output path");
  make_synth->add_option("--tasks", synth_tasks, "number of tasks to sample");
  make_synth->add_option("--seed", synth_seed, "sampling seed");
  make_synth->add_flag("--two-variants", synth_two_variants,
                       "guarantee >= 2 behavior variants per task");
  make_synth->add_option("--min-invalid", synth_min_invalid,
                         "minimum invalid inputs per task pool");

  // split ---------------------------------------------------------------------
  auto* split = app.add_subcommand("split", "seeded calibration/test split");
  std::string split_dataset_path, split_cal = "cal.jsonl", split_test = "test.jsonl";
  double split_ratio = 0.6;
  uint64_t split_seed = 0;
  split->add_option("--dataset", split_dataset_path, "dataset JSONL")->required();
  split->add_option("--ratio", split_ratio, "calibration share");
  split->add_option("--seed", split_seed, "split seed");
  split->add_option("--out-cal", split_cal, "calibration output");
  split->add_option("--out-test", split_test, "testing output");

  // convert ---------------------------------------------------------------------
  auto* convert = app.add_subcommand("convert", "convert HumanEval/MBPP layouts");
  std::string conv_flavor, conv_in, conv_out;
  convert->add_option("--from", conv_flavor, "humaneval|mbpp")->required();
  convert->add_option("--in", conv_in, "source JSONL")->required();
  convert->add_option("--out", conv_out, "normalized output JSONL")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (calibrate->parsed()) {
      return cmd_calibrate(cal_model, cal_dataset, cal_artifact, cal_grid, cal_mode, cal_params,
                           cal_n, cal_tests, cal_pvalue, cal_seed);
    }
    if (decide->parsed()) {
      return cmd_decide(dec_model, dec_artifact, dec_prompt_file, dec_prompt, dec_n,
                        dec_efficient, dec_batch, dec_max, dec_seed, decide);
    }
    if (label->parsed()) {
      return cmd_label(lab_model, lab_dataset, lab_out, lab_params, lab_n, lab_seed);
    }
    if (eval->parsed()) return cmd_eval(eval_decisions, eval_labels);
    if (tradeoff->parsed()) {
      return cmd_tradeoff(trade_model, trade_artifact, trade_dataset, trade_labels, trade_out,
                          trade_n, trade_seed);
    }
    if (risk->parsed()) {
      return cmd_risk_dist(risk_model, risk_artifact, risk_dataset, risk_labels, risk_out,
                           risk_n, risk_seed);
    }
    if (verify->parsed()) {
      return cmd_verify_guarantee(ver_grid, ver_mode, ver_out, ver_params, ver_m,
                                  ver_replicates, ver_eval, ver_n, ver_tests, ver_seed,
                                  ver_threads);
    }
    if (make_synth->parsed()) {
      return cmd_make_synthetic(synth_out, synth_tasks, synth_seed, synth_two_variants,
                                synth_min_invalid);
    }
    if (split->parsed()) {
      return cmd_split(split_dataset_path, split_ratio, split_seed, split_cal, split_test);
    }
    if (convert->parsed()) return cmd_convert(conv_flavor, conv_in, conv_out);
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}

#include "refusalgate/engine.hpp"

#include <nlohmann/json.hpp>

#include "refusalgate/cluster.hpp"
#include "refusalgate/errors.hpp"
#include "refusalgate/rng.hpp"

namespace refusalgate::engine {

using nlohmann::json;

namespace {

std::string pool_id(const char* prefix, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%s%04d", prefix, index);
  return buf;
}

}  // namespace

BatchPools generate_batch(gateway::Generator& model, const std::string& prompt, int count,
                          int batch_index, int id_offset, const DecideOptions& options) {
  gateway::GenerationRequest req;
  req.prompt = prompt;
  req.count = count;
  req.temperature = options.temperature;
  req.top_p = options.top_p;
  req.kind = gateway::GenKind::code;
  req.seed = derive_seed(options.seed, "batch/" + std::to_string(batch_index) + "/code");
  BatchPools pools;
  pools.samples = model.generate_code(req);

  req.kind = gateway::GenKind::tests;
  req.seed = derive_seed(options.seed, "batch/" + std::to_string(batch_index) + "/tests");
  pools.tests = model.generate_tests(req);

  if (static_cast<int>(pools.samples.size()) != count ||
      static_cast<int>(pools.tests.size()) != count)
    throw EngineError("generator returned a short batch for prompt: " + prompt);

  // Pool-wide ids so cumulative merging never collides.
  for (size_t i = 0; i < pools.samples.size(); ++i)
    pools.samples[i].sample_id = pool_id("s", id_offset + static_cast<int>(i));
  for (size_t i = 0; i < pools.tests.size(); ++i)
    pools.tests[i].test_id = pool_id("t", id_offset + static_cast<int>(i));
  return pools;
}

PoolEvaluation evaluate_pools(sandbox::Executor& executor,
                              std::span<const ProgramSource> samples,
                              std::span<const TestInput> tests, const ThresholdVector& lambda,
                              scores::SeVariant se_variant) {
  lambda.validate();
  if (samples.empty()) throw InputError("evaluate_pools: samples must be non-empty");

  const auto matrix = executor.execute_matrix(samples, tests);

  PoolEvaluation eval;
  eval.stdf_report = stdf::filter_tests(matrix, matrix.test_ids(), lambda.stdf);
  const auto clustering = cluster::cluster_by_fingerprint(matrix, eval.stdf_report.surviving);
  eval.cluster_sizes = clustering.sizes();
  eval.max_cluster_ratio = scores::max_cluster_ratio(clustering).value;
  eval.entropy = scores::semantic_entropy(clustering, se_variant).value;

  if (lambda.mode == ltt::Mode::cr) {
    const double n = static_cast<double>(clustering.n);
    for (const auto& members : clustering.clusters) {
      if (static_cast<double>(members.size()) / n >= lambda.lambda_score)
        eval.representatives.push_back(members.front());
    }
    eval.verdict = eval.representatives.empty() ? Verdict::abstain : Verdict::admit;
  } else {
    eval.verdict = eval.entropy > lambda.lambda_score ? Verdict::abstain : Verdict::admit;
  }
  return eval;
}

Decision decide(gateway::Generator& model, sandbox::Executor& executor,
                const std::string& prompt, int n, const ThresholdVector& lambda,
                const DecideOptions& options) {
  if (n < 1) throw InputError("decide: n must be >= 1");
  const BatchPools pools = generate_batch(model, prompt, n, 0, 0, options);

  Decision decision;
  decision.lambda = lambda;
  decision.evaluation =
      evaluate_pools(executor, pools.samples, pools.tests, lambda, options.se_variant);
  decision.verdict = decision.evaluation.verdict;
  decision.n_used = n;
  decision.n_batches = 1;
  return decision;
}

Decision decide_efficient(gateway::Generator& model, sandbox::Executor& executor,
                          const std::string& prompt, int n_batch, int n_max,
                          const ThresholdVector& lambda, const DecideOptions& options) {
  if (n_batch < 1 || n_batch > n_max)
    throw InputError("decide_efficient: need 1 <= n_batch <= n_max");

  Decision decision;
  decision.lambda = lambda;

  std::vector<ProgramSource> samples;
  std::vector<TestInput> tests;
  int n_curr = 0;
  int batch_index = 0;
  while (n_curr < n_max) {
    int count = n_batch;
    if (n_curr + count > n_max) {
      count = n_max - n_curr;  // clamp the final batch to the budget
      decision.budget_clamped = true;
    }
    BatchPools batch = generate_batch(model, prompt, count, batch_index, n_curr, options);
    samples.insert(samples.end(), std::make_move_iterator(batch.samples.begin()),
                   std::make_move_iterator(batch.samples.end()));
    tests.insert(tests.end(), std::make_move_iterator(batch.tests.begin()),
                 std::make_move_iterator(batch.tests.end()));
    n_curr += count;
    ++batch_index;

    decision.evaluation = evaluate_pools(executor, samples, tests, lambda, options.se_variant);
    decision.n_used = n_curr;
    decision.n_batches = batch_index;
    if (decision.evaluation.verdict == Verdict::admit) {
      decision.verdict = Verdict::admit;
      return decision;
    }
  }
  decision.verdict = Verdict::abstain;
  return decision;
}

std::string Decision::to_json() const {
  json stdf_report = {{"surviving", evaluation.stdf_report.surviving},
                      {"removed_by_error", json::array()},
                      {"removed_by_entropy", json::array()}};
  for (const auto& [id, rate] : evaluation.stdf_report.removed_by_error)
    stdf_report["removed_by_error"].push_back({{"test_id", id}, {"error_rate", rate}});
  for (const auto& [id, se] : evaluation.stdf_report.removed_by_entropy)
    stdf_report["removed_by_entropy"].push_back({{"test_id", id}, {"entropy", se}});

  json out = {
      {"verdict", verdict == Verdict::admit ? "admit" : "abstain"},
      {"mode", ltt::mode_name(lambda.mode)},
      {"lambda",
       {{"lambda1", lambda.stdf.lambda1},
        {"lambda2", lambda.stdf.lambda2},
        {"lambda3", std::isinf(lambda.stdf.lambda3) ? json("inf") : json(lambda.stdf.lambda3)},
        {"lambda_score", lambda.lambda_score}}},
      {"scores",
       {{"max_cluster_ratio", evaluation.max_cluster_ratio},
        {"semantic_entropy", evaluation.entropy}}},
      {"n_used", n_used},
      {"n_batches", n_batches},
      {"budget_clamped", budget_clamped},
      {"stdf_report", std::move(stdf_report)},
      {"cluster_sizes", evaluation.cluster_sizes},
      {"representatives", evaluation.representatives},
  };
  return out.dump(2);
}

}  // namespace refusalgate::engine

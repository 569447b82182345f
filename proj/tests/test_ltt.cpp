#include <doctest.h>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdlib>
#include <thread>

#include "helpers.hpp"
#include "refusalgate/bench.hpp"
#include "refusalgate/errors.hpp"
#include "refusalgate/ltt.hpp"
#include "refusalgate/synthetic.hpp"

using namespace refusalgate;
using namespace rgtest;
using ltt::Mode;
using ltt::ThresholdVector;
using ltt::Verdict;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ltt::CalTaskRecord record_with_split(const std::string& id, size_t big, size_t small,
                                     double h) {
  std::vector<std::vector<ExecOutcome>> rows;
  for (size_t i = 0; i < big; ++i) rows.push_back({V("a")});
  for (size_t i = 0; i < small; ++i) rows.push_back({V("b")});
  ltt::CalTaskRecord record{id,
                            make_matrix(rows, {}, {"g:t0"}),
                            {},
                            {"g:t0"},
                            static_cast<int>(big + small),
                            0,
                            h};
  return record;
}

ltt::ThresholdGrid tiny_cr_grid(const std::vector<double>& scores) {
  nlohmann::json spec = {{"mode", "cr"},
                         {"lambda1", {1.0}},
                         {"lambda2", {0.0}},
                         {"lambda3", {"inf"}},
                         {"lambda_score", scores}};
  return ltt::ThresholdGrid::from_spec_json(spec.dump());
}

synthetic::SyntheticTask uniform_task(const std::string& id, bool correct) {
  synthetic::SyntheticTask task;
  task.task_id = id;
  task.prompt = "synthetic:" + id;
  task.correct_group = 0;
  task.variants = {{"only", correct ? 0 : 1, 1.0, synthetic::InvalidBehavior::raise_error}};
  task.valid_inputs = {1, 2, 3, 4};
  task.oracle_inputs = {11, 12};
  return task;
}

}  // namespace

TEST_SUITE("ltt") {

TEST_CASE("count_correct audits every oracle cell") {
  // 5 samples x 3 oracle tests; expectations "2", "4", any-clean (assertion).
  std::vector<sandbox::OracleTest> oracles = {
      {"o0", "print(f(1))", "2"},
      {"o1", "print(f(2))", "4"},
      {"o2", "assert f(3) == 6", std::nullopt},
  };
  const auto matrix = make_matrix(
      {
          {V("2"), V("4"), V("")},        // correct
          {V("2"), V("4"), V("")},        // correct
          {V("2"), V("5"), V("")},        // wrong value on o1
          {V("2"), V("4"), E("AssertionError")},  // fails assertion oracle
          {V("2"), TO(), V("")},          // timeout on an oracle test
      },
      {}, {"o0", "o1", "o2"});
  CHECK(ltt::count_correct(matrix, oracles) == 2);

  SUBCASE("all matching") {
    const auto good = make_matrix({{V("2"), V("4"), V("ok")}}, {}, {"o0", "o1", "o2"});
    CHECK(ltt::count_correct(good, oracles) == 1);
  }
  SUBCASE("missing oracle column") {
    const auto missing = make_matrix({{V("2")}}, {}, {"o0"});
    CHECK_THROWS_AS(ltt::count_correct(missing, oracles), InputError);
  }
  SUBCASE("expected values are canonicalized before comparison") {
    std::vector<sandbox::OracleTest> padded = {{"o0", "print(f(1))", "2\n"}};
    const auto m = make_matrix({{V("2")}}, {}, {"o0"});
    CHECK(ltt::count_correct(m, padded) == 1);
  }
}

TEST_CASE("decision_for applies the CR rule on the filtered clustering") {
  const auto record = record_with_split("task", 6, 4, 0.5);
  CHECK(ltt::decision_for(record, {{1.0, 0.0, kInf}, 0.5, Mode::cr}) == Verdict::admit);
  CHECK(ltt::decision_for(record, {{1.0, 0.0, kInf}, 0.7, Mode::cr}) == Verdict::abstain);
}

TEST_CASE("decision_for SE boundary is strict") {
  const auto record = record_with_split("task", 10, 0, 0.0);  // single cluster, SE = 0
  CHECK(ltt::decision_for(record, {{1.0, 0.0, kInf}, 0.0, Mode::se}) == Verdict::admit);
}

TEST_CASE("empirical risk averages admitted H@k") {
  // Ratios 1.0, 1.0, 1.0 admit at 0.6; ratio 0.5 abstains.
  std::vector<ltt::CalTaskRecord> records;
  records.push_back(record_with_split("t1", 8, 0, 0.0));
  records.push_back(record_with_split("t2", 8, 0, 0.5));
  records.push_back(record_with_split("t3", 8, 0, 1.0));
  records.push_back(record_with_split("t4", 4, 4, 0.2));
  const ThresholdVector lambda{{1.0, 0.0, kInf}, 0.6, Mode::cr};
  CHECK(ltt::empirical_risk(lambda, records) == doctest::Approx(0.375));

  const ThresholdVector admit_all{{1.0, 0.0, kInf}, 0.0, Mode::cr};
  CHECK(ltt::empirical_risk(admit_all, records) == doctest::Approx((0.0 + 0.5 + 1.0 + 0.2) / 4));
}

TEST_CASE("abstaining lambda has zero risk") {
  std::vector<ltt::CalTaskRecord> records;
  records.push_back(record_with_split("t1", 5, 3, 0.9));
  const ThresholdVector lambda{{1.0, 0.0, kInf}, 1.0, Mode::cr};  // 0.625 < 1.0
  CHECK(ltt::empirical_risk(lambda, records) == doctest::Approx(0.0));
}

TEST_CASE("p-value: Hoeffding closed forms") {
  CHECK(ltt::p_value(0.25, 100, 0.2) == doctest::Approx(1.0));
  CHECK(ltt::p_value(0.2, 100, 0.2) == doctest::Approx(1.0));
  CHECK(ltt::p_value(0.1, 50, 0.2) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));
  CHECK(ltt::p_value(0.05, 200, 0.2) == doctest::Approx(std::exp(-9.0)).epsilon(1e-12));
}

TEST_CASE("p-value: Hoeffding-Bentkus is at least as tight") {
  for (double rhat : {0.0, 0.02, 0.05, 0.1, 0.15, 0.3}) {
    for (int m : {20, 50, 200}) {
      const double h = ltt::p_value(rhat, m, 0.2, ltt::PValueKind::hoeffding);
      const double hb = ltt::p_value(rhat, m, 0.2, ltt::PValueKind::hoeffding_bentkus);
      CHECK(hb <= h + 1e-12);
      CHECK(hb > 0.0);
      CHECK(hb <= 1.0);
    }
  }
}

TEST_CASE("p-value: Hoeffding-Bentkus closed forms") {
  // At rhat = 0 both terms collapse to (1 - alpha)^m (the e-scaled binomial
  // tail is e times larger, so the KL term wins).
  CHECK(ltt::p_value(0.0, 50, 0.2, ltt::PValueKind::hoeffding_bentkus) ==
        doctest::Approx(std::pow(0.8, 50)).epsilon(1e-10));

  // Against a log-space binomial-tail oracle at an interior point.
  const int m = 40;
  const double alpha = 0.2, rhat = 0.1;
  const int j = static_cast<int>(std::ceil(m * rhat));
  double tail = 0.0;
  for (int i = 0; i <= j; ++i) {
    double log_term = 0.0;
    for (int t = 0; t < i; ++t) log_term += std::log(static_cast<double>(m - t) / (i - t));
    log_term += i * std::log(alpha) + (m - i) * std::log(1.0 - alpha);
    tail += std::exp(log_term);
  }
  const double a = std::min(rhat, alpha);
  const double kl = a * std::log(a / alpha) + (1 - a) * std::log((1 - a) / (1 - alpha));
  const double expected = std::min({std::exp(-m * kl), std::exp(1.0) * tail, 1.0});
  CHECK(ltt::p_value(rhat, m, alpha, ltt::PValueKind::hoeffding_bentkus) ==
        doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("bonferroni valid set uses the delta/N cutoff inclusively") {
  const double pvalues[] = {0.0005, 0.002, 0.0009};
  const auto valid = ltt::bonferroni_valid_set(pvalues, 0.1, 100);  // cutoff 0.001
  CHECK(valid == std::vector<size_t>{0, 2});

  const double all_one[] = {1.0, 1.0};
  CHECK(ltt::bonferroni_valid_set(all_one, 0.1, 2).empty());

  const double boundary[] = {0.1};
  CHECK(ltt::bonferroni_valid_set(boundary, 0.1, 1) == std::vector<size_t>{0});
}

TEST_CASE("select_threshold minimizes abstention, ties by risk then order") {
  std::vector<ltt::PerLambda> per_lambda(3);
  per_lambda[0].abstention_rate = 0.8;
  per_lambda[0].empirical_risk = 0.01;
  per_lambda[1].abstention_rate = 0.3;
  per_lambda[1].empirical_risk = 0.05;
  per_lambda[2].abstention_rate = 0.3;
  per_lambda[2].empirical_risk = 0.02;

  const size_t all[] = {0, 1, 2};
  CHECK(ltt::select_threshold(per_lambda, all) == 2);

  const size_t single[] = {0};
  CHECK(ltt::select_threshold(per_lambda, single) == 0);

  CHECK_THROWS_AS(ltt::select_threshold(per_lambda, {}), NoValidThreshold);
}

TEST_CASE("calibrate: always-correct model validates the whole grid") {
  std::vector<synthetic::SyntheticTask> tasks;
  for (int i = 0; i < 60; ++i) tasks.push_back(uniform_task("good" + std::to_string(i), true));
  auto spec = std::make_shared<synthetic::SyntheticModelSpec>();
  spec->tasks = tasks;
  synthetic::SyntheticModel model(spec);
  synthetic::VirtualExecutor executor(spec);

  std::vector<bench::DatasetRecord> dataset;
  for (const auto& t : tasks) dataset.push_back(bench::record_for(t));

  ltt::CalibrationOptions options;
  options.n_samples = 8;
  options.n_tests = 4;
  options.seed = 3;
  const auto grid = tiny_cr_grid({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8});

  const auto artifact = ltt::calibrate(dataset, model, executor, grid, options);
  // R-hat = 0 for every lambda: p = exp(-2 * 60 * 0.04) ~ 0.0082 <= 0.1/8.
  CHECK(artifact.valid_set.size() == grid.size());
  REQUIRE(artifact.selected.has_value());
  CHECK(!artifact.always_abstain_fallback);
  for (const auto& entry : artifact.per_lambda) {
    CHECK(entry.empirical_risk == doctest::Approx(0.0));
    CHECK(entry.abstention_rate == doctest::Approx(0.0));
  }
}

TEST_CASE("calibrate: always-wrong model excludes always-admit lambdas") {
  std::vector<synthetic::SyntheticTask> tasks;
  for (int i = 0; i < 40; ++i) tasks.push_back(uniform_task("bad" + std::to_string(i), false));
  auto spec = std::make_shared<synthetic::SyntheticModelSpec>();
  spec->tasks = tasks;
  synthetic::SyntheticModel model(spec);
  synthetic::VirtualExecutor executor(spec);

  std::vector<bench::DatasetRecord> dataset;
  for (const auto& t : tasks) dataset.push_back(bench::record_for(t));

  ltt::CalibrationOptions options;
  options.n_samples = 8;
  options.n_tests = 4;
  const auto grid = tiny_cr_grid({0.1, 0.9});

  const auto artifact = ltt::calibrate(dataset, model, executor, grid, options);
  // The single wrong variant is perfectly consistent: every lambda admits
  // everything, R-hat = 1, p = 1, so nothing validates.
  CHECK(artifact.valid_set.empty());
  CHECK(artifact.always_abstain_fallback);
  CHECK(!artifact.selected.has_value());
  for (const auto& entry : artifact.per_lambda) {
    CHECK(entry.empirical_risk == doctest::Approx(1.0));
    CHECK(entry.p_value == doctest::Approx(1.0));
  }
}

TEST_CASE("small-m conservatism: m=60 cannot clear a 50-lambda Bonferroni cutoff") {
  // Even a perfect R-hat = 0 gives p = exp(-4.8) ~ 0.0082 > 0.1/50 = 0.002.
  std::vector<synthetic::SyntheticTask> tasks;
  for (int i = 0; i < 60; ++i) tasks.push_back(uniform_task("t" + std::to_string(i), true));
  auto spec = std::make_shared<synthetic::SyntheticModelSpec>();
  spec->tasks = tasks;
  synthetic::SyntheticModel model(spec);
  synthetic::VirtualExecutor executor(spec);

  std::vector<bench::DatasetRecord> dataset;
  for (const auto& t : tasks) dataset.push_back(bench::record_for(t));

  std::vector<double> scores;
  for (int i = 0; i < 50; ++i) scores.push_back((i + 1) / 50.0);
  const auto grid = tiny_cr_grid(scores);

  ltt::CalibrationOptions options;
  options.n_samples = 8;
  options.n_tests = 4;
  const auto artifact = ltt::calibrate(dataset, model, executor, grid, options);
  CHECK(artifact.always_abstain_fallback);
  CHECK(artifact.per_lambda.front().p_value == doctest::Approx(std::exp(-4.8)));
}

TEST_CASE("memoized grid evaluation matches the plain per-lambda path") {
  Rng rng(17);
  std::vector<ltt::CalTaskRecord> records;
  for (int i = 0; i < 12; ++i) {
    records.push_back(record_with_split("r" + std::to_string(i), 1 + rng.below(8),
                                        rng.below(5), rng.uniform()));
  }
  nlohmann::json spec = {{"mode", "cr"},
                         {"lambda1", {0.5, 1.0}},
                         {"lambda2", {0.0, 0.3}},
                         {"lambda3", {0.7, "inf"}},
                         {"lambda_score", {0.3, 0.6, 0.9}}};
  const auto grid = ltt::ThresholdGrid::from_spec_json(spec.dump());

  ltt::CalibrationOptions options;
  options.n_samples = 8;
  const auto artifact = ltt::calibrate_records(records, grid, options);
  REQUIRE(artifact.per_lambda.size() == grid.size());
  for (size_t i = 0; i < grid.size(); ++i) {
    CHECK(artifact.per_lambda[i].empirical_risk ==
          doctest::Approx(ltt::empirical_risk(grid.vectors[i], records)));
  }
}

TEST_CASE("SE threshold is monotone: lowering it never admits more") {
  Rng rng(23);
  for (int it = 0; it < 10; ++it) {
    const auto record = record_with_split("r", 1 + rng.below(6), rng.below(6), 0.5);
    ThresholdVector high{{1.0, 0.0, kInf}, 2.0, Mode::se};
    ThresholdVector low = high;
    low.lambda_score = 0.4;
    if (ltt::decision_for(record, low) == Verdict::admit) {
      CHECK(ltt::decision_for(record, high) == Verdict::admit);
    }
    // CR is monotone the other way.
    ThresholdVector cr_low{{1.0, 0.0, kInf}, 0.2, Mode::cr};
    ThresholdVector cr_high = cr_low;
    cr_high.lambda_score = 0.9;
    if (ltt::decision_for(record, cr_high) == Verdict::admit) {
      CHECK(ltt::decision_for(record, cr_low) == Verdict::admit);
    }
  }
}

TEST_CASE("artifact JSON round-trips and checks its schema") {
  std::vector<ltt::CalTaskRecord> records;
  for (int i = 0; i < 60; ++i) {
    records.push_back(record_with_split("r" + std::to_string(i), 8, 0, i % 7 == 0 ? 0.1 : 0.0));
  }
  const auto grid = tiny_cr_grid({0.5, 0.9});
  ltt::CalibrationOptions options;
  options.n_samples = 8;
  auto artifact = ltt::calibrate_records(records, grid, options);
  REQUIRE(!artifact.valid_set.empty());
  artifact.dataset_digest = "d";
  artifact.model = "m";

  const auto text = artifact.to_json();
  const auto loaded = ltt::CalibrationArtifact::from_json(text);
  CHECK(loaded.params.alpha == doctest::Approx(artifact.params.alpha));
  CHECK(loaded.per_lambda.size() == artifact.per_lambda.size());
  CHECK(loaded.valid_set == artifact.valid_set);
  CHECK(loaded.selected.has_value() == artifact.selected.has_value());
  if (loaded.selected) CHECK(*loaded.selected == *artifact.selected);
  CHECK(loaded.grid_spec_json == artifact.grid_spec_json);

  SUBCASE("schema tag is enforced") {
    auto bad = nlohmann::json::parse(text);
    bad["schema"] = "other";
    CHECK_THROWS_AS(ltt::CalibrationArtifact::from_json(bad.dump()), InputError);
  }
  SUBCASE("version is enforced") {
    auto bad = nlohmann::json::parse(text);
    bad["version"] = 99;
    CHECK_THROWS_AS(ltt::CalibrationArtifact::from_json(bad.dump()), InputError);
  }
  SUBCASE("tampered valid set is rejected") {
    auto bad = nlohmann::json::parse(text);
    for (auto& entry : bad["per_lambda"]) entry["p_value"] = 0.9;
    CHECK_THROWS_AS(ltt::CalibrationArtifact::from_json(bad.dump()), InputError);
  }
}

TEST_CASE("calibration is byte-reproducible under a fixed seed") {
  setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
  std::vector<synthetic::SyntheticTask> tasks;
  for (int i = 0; i < 10; ++i) {
    auto t = uniform_task("t" + std::to_string(i), i % 3 != 0);
    tasks.push_back(t);
  }
  auto spec = std::make_shared<synthetic::SyntheticModelSpec>();
  spec->tasks = tasks;
  synthetic::SyntheticModel model(spec);
  synthetic::VirtualExecutor executor(spec);
  std::vector<bench::DatasetRecord> dataset;
  for (const auto& t : tasks) dataset.push_back(bench::record_for(t));

  ltt::CalibrationOptions options;
  options.n_samples = 8;
  options.n_tests = 4;
  options.seed = 99;
  const auto grid = tiny_cr_grid({0.4, 0.8});
  const auto a = ltt::calibrate(dataset, model, executor, grid, options).to_json();
  const auto b = ltt::calibrate(dataset, model, executor, grid, options).to_json();
  CHECK(a == b);
  unsetenv("SOURCE_DATE_EPOCH");
}

TEST_CASE("calibrate end-to-end: mock endpoint, real sandbox") {
  // Full real-model path: chat-completion responses -> code-block parsing ->
  // sandboxed execution -> record building -> grid evaluation.
  httplib::Server server;
  server.Post("/v1/chat/completions", [](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    const std::string prompt = body.at("messages")[0].at("content").get<std::string>();
    const int n = body.at("n").get<int>();
    const bool wants_tests = prompt.find("test invocation") != std::string::npos;
    const bool task_b = prompt.find("TASK-B") != std::string::npos;

    nlohmann::json choices = nlohmann::json::array();
    for (int i = 0; i < n; ++i) {
      std::string code;
      if (wants_tests) {
        code = "print(f(" + std::to_string(2 + i % 3) + "))";
      } else if (task_b && i % 2 == 1) {
        code = "def f(x):\n    return x * 2 + 1\n";  // off-by-one half the time
      } else {
        code = "def f(x):\n    return x * 2\n";
      }
      choices.push_back({{"message", {{"content", "```python\n" + code + "```"}}}});
    }
    res.set_content(nlohmann::json{{"choices", choices}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  gateway::EndpointOptions endpoint;
  endpoint.url = "http://127.0.0.1:" + std::to_string(port);
  endpoint.model_name = "mock";
  gateway::EndpointModel model(endpoint);

  sandbox::ExecConfig config;
  config.timeout_ms = 3000;
  config.max_parallel = 2;
  sandbox::SandboxExecutor executor(config);

  std::vector<bench::DatasetRecord> tasks(2);
  tasks[0].task_id = "a";
  tasks[0].prompt = "TASK-A: double the input";
  tasks[0].oracle_tests = {{"a:o0", "print(f(5))", "10"}};
  tasks[1].task_id = "b";
  tasks[1].prompt = "TASK-B: double the input";
  tasks[1].oracle_tests = {{"b:o0", "print(f(5))", "10"}};

  ltt::CalibrationOptions options;
  options.n_samples = 8;
  options.n_tests = 4;
  const auto artifact =
      ltt::calibrate(tasks, model, executor, tiny_cr_grid({0.4, 0.9}), options);

  server.stop();
  server_thread.join();

  // Task a: all 8 samples correct (h = 0). Task b: 4 of 8 correct,
  // h = C(4,3)/C(8,3) = 4/56. With m = 2 nothing validates, but the records
  // and per-lambda statistics must reflect the executions.
  CHECK(artifact.excluded_tasks.empty());
  CHECK(artifact.valid_set.empty());
  const double h_b = 4.0 / 56.0;
  // lambda_score 0.4 admits both tasks (ratios 1.0 and 0.5): risk (0+h_b)/2.
  CHECK(artifact.per_lambda[0].empirical_risk == doctest::Approx(h_b / 2));
  // lambda_score 0.9 admits only the consistent task: risk 0.
  CHECK(artifact.per_lambda[1].empirical_risk == doctest::Approx(0.0));
  CHECK(artifact.per_lambda[1].abstention_rate == doctest::Approx(0.5));
  CHECK(artifact.model == "mock");
}

TEST_CASE("default grids have the documented shape") {
  const auto cr = ltt::ThresholdGrid::default_for(Mode::cr);
  CHECK(cr.size() == 5 * 4 * 4 * 10);
  const auto se = ltt::ThresholdGrid::default_for(Mode::se);
  CHECK(se.size() == 800);
  // CR scores top out at exactly 1.0 so an all-consensus demand is on the grid.
  bool has_one = false;
  for (const auto& v : cr.vectors) has_one |= v.lambda_score == 1.0;
  CHECK(has_one);
}

}  // TEST_SUITE

#include "refusalgate/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "refusalgate/errors.hpp"

namespace refusalgate::synthetic {

using nlohmann::json;

namespace {

constexpr const char* kProgramMarker = "# refusalgate-synthetic task=";

std::string behavior_name(InvalidBehavior b) {
  switch (b) {
    case InvalidBehavior::assert_check: return "assert";
    case InvalidBehavior::return_zero: return "zero";
    case InvalidBehavior::raise_error: return "raise";
    case InvalidBehavior::infinite_loop: return "loop";
    case InvalidBehavior::negate: return "negate";
  }
  return "raise";
}

InvalidBehavior behavior_from(const std::string& name) {
  if (name == "assert") return InvalidBehavior::assert_check;
  if (name == "zero") return InvalidBehavior::return_zero;
  if (name == "raise") return InvalidBehavior::raise_error;
  if (name == "loop") return InvalidBehavior::infinite_loop;
  if (name == "negate") return InvalidBehavior::negate;
  throw InputError("unknown invalid_behavior: " + name);
}

long multiplier(const SyntheticTask&, int group) { return group + 2; }

// "# refusalgate-synthetic task=<id> variant=<tag>" -> (id, tag)
std::optional<std::pair<std::string, std::string>> parse_program_marker(
    const std::string& source) {
  const size_t pos = source.find(kProgramMarker);
  if (pos == std::string::npos) return std::nullopt;
  const size_t id_start = pos + std::string(kProgramMarker).size();
  const size_t id_end = source.find(' ', id_start);
  if (id_end == std::string::npos) return std::nullopt;
  const std::string variant_key = "variant=";
  const size_t v_pos = source.find(variant_key, id_end);
  if (v_pos == std::string::npos) return std::nullopt;
  const size_t v_start = v_pos + variant_key.size();
  size_t v_end = source.find_first_of(" \n", v_start);
  if (v_end == std::string::npos) v_end = source.size();
  return std::make_pair(source.substr(id_start, id_end - id_start),
                        source.substr(v_start, v_end - v_start));
}

// Extract the integer argument from "print(f(-3))".
std::optional<int> parse_invocation_input(const std::string& invocation) {
  const size_t call = invocation.find("f(");
  if (call == std::string::npos) return std::nullopt;
  size_t pos = call + 2;
  bool negative = false;
  if (pos < invocation.size() && invocation[pos] == '-') {
    negative = true;
    ++pos;
  }
  if (pos >= invocation.size() || !std::isdigit(static_cast<unsigned char>(invocation[pos])))
    return std::nullopt;
  long value = 0;
  while (pos < invocation.size() && std::isdigit(static_cast<unsigned char>(invocation[pos]))) {
    value = value * 10 + (invocation[pos] - '0');
    ++pos;
  }
  if (pos >= invocation.size() || invocation[pos] != ')') return std::nullopt;
  return static_cast<int>(negative ? -value : value);
}

}  // namespace

void SyntheticTask::validate() const {
  if (task_id.empty()) throw InputError("synthetic task: task_id required");
  if (variants.empty()) throw InputError("synthetic task " + task_id + ": needs >= 1 variant");
  for (const auto& v : variants) {
    if (v.weight <= 0.0)
      throw InputError("synthetic task " + task_id + ": weights must be positive");
    if (v.group < 0) throw InputError("synthetic task " + task_id + ": group must be >= 0");
  }
  for (int x : valid_inputs)
    if (x < 1) throw InputError("synthetic task " + task_id + ": valid inputs must be >= 1");
  for (int x : invalid_inputs)
    if (x > -1) throw InputError("synthetic task " + task_id + ": invalid inputs must be <= -1");
  for (int x : oracle_inputs)
    if (x < 1) throw InputError("synthetic task " + task_id + ": oracle inputs must be >= 1");
}

double SyntheticTask::correct_mass() const {
  if (draw_mode == DrawMode::round_robin) {
    size_t correct = 0;
    for (const auto& v : variants)
      if (v.group == correct_group) ++correct;
    return static_cast<double>(correct) / static_cast<double>(variants.size());
  }
  double total = 0.0, correct = 0.0;
  for (const auto& v : variants) {
    total += v.weight;
    if (v.group == correct_group) correct += v.weight;
  }
  return correct / total;
}

double SyntheticTask::true_h_at_k(int k) const {
  return std::pow(1.0 - correct_mass(), k);
}

std::string expected_output(const SyntheticTask& task, int x) {
  return std::to_string(static_cast<long>(x) * multiplier(task, task.correct_group));
}

std::string invocation_for(int x) { return "print(f(" + std::to_string(x) + "))"; }

std::vector<OracleTest> SyntheticTask::oracle_tests() const {
  std::vector<OracleTest> out;
  out.reserve(oracle_inputs.size());
  for (size_t i = 0; i < oracle_inputs.size(); ++i) {
    out.push_back({task_id + ":o" + std::to_string(i), invocation_for(oracle_inputs[i]),
                   expected_output(*this, oracle_inputs[i])});
  }
  return out;
}

std::string variant_program(const SyntheticTask& task, const Variant& variant) {
  std::ostringstream os;
  os << kProgramMarker << task.task_id << " variant=" << variant.tag << "\n";
  os << "def f(x):\n";
  switch (variant.invalid_behavior) {
    case InvalidBehavior::assert_check:
      os << "    assert x >= 0\n";
      break;
    case InvalidBehavior::return_zero:
      os << "    if x < 0:\n        return 0\n";
      break;
    case InvalidBehavior::raise_error:
      os << "    if x < 0:\n        raise RuntimeError(\"negative input\")\n";
      break;
    case InvalidBehavior::infinite_loop:
      os << "    if x < 0:\n        while True:\n            pass\n";
      break;
    case InvalidBehavior::negate:
      os << "    if x < 0:\n        x = -x\n";
      break;
  }
  os << "    return x * " << multiplier(task, variant.group) << "\n";
  return os.str();
}

ExecOutcome virtual_outcome(const SyntheticTask& task, const Variant& variant, int x) {
  const long m = multiplier(task, variant.group);
  if (x >= 0) return ExecOutcome::value(std::to_string(x * m));
  switch (variant.invalid_behavior) {
    case InvalidBehavior::assert_check: return ExecOutcome::error("AssertionError");
    case InvalidBehavior::return_zero: return ExecOutcome::value("0");
    case InvalidBehavior::raise_error: return ExecOutcome::error("RuntimeError");
    case InvalidBehavior::infinite_loop: return ExecOutcome::timeout();
    case InvalidBehavior::negate: return ExecOutcome::value(std::to_string(-static_cast<long>(x) * m));
  }
  return ExecOutcome::error("RuntimeError");
}

void SyntheticModelSpec::validate() const {
  for (const auto& t : tasks) t.validate();
}

const SyntheticTask* SyntheticModelSpec::find_by_prompt(const std::string& prompt) const {
  for (const auto& t : tasks) {
    if (t.prompt == prompt || t.task_id == prompt) return &t;
  }
  return nullptr;
}

const SyntheticTask& SyntheticModelSpec::require_by_prompt(const std::string& prompt) const {
  const SyntheticTask* t = find_by_prompt(prompt);
  if (!t) throw InputError("synthetic spec has no task for prompt: " + prompt);
  return *t;
}

const SyntheticTask* SyntheticModelSpec::find_by_id(const std::string& task_id) const {
  for (const auto& t : tasks)
    if (t.task_id == task_id) return &t;
  return nullptr;
}

std::string SyntheticModelSpec::to_json() const {
  json out;
  out["version"] = 1;
  out["tasks"] = json::array();
  for (const auto& t : tasks) {
    json jt;
    jt["task_id"] = t.task_id;
    jt["prompt"] = t.prompt;
    jt["correct_group"] = t.correct_group;
    jt["draw_mode"] = t.draw_mode == DrawMode::weighted ? "weighted" : "round_robin";
    jt["variants"] = json::array();
    for (const auto& v : t.variants) {
      jt["variants"].push_back({{"tag", v.tag},
                                {"group", v.group},
                                {"weight", v.weight},
                                {"invalid_behavior", behavior_name(v.invalid_behavior)}});
    }
    jt["valid_inputs"] = t.valid_inputs;
    jt["invalid_inputs"] = t.invalid_inputs;
    jt["oracle_inputs"] = t.oracle_inputs;
    out["tasks"].push_back(std::move(jt));
  }
  return out.dump(2);
}

SyntheticModelSpec SyntheticModelSpec::from_json(const std::string& text) {
  json parsed;
  try {
    parsed = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("synthetic spec: bad JSON: ") + e.what());
  }
  SyntheticModelSpec spec;
  for (const auto& jt : parsed.value("tasks", json::array())) {
    SyntheticTask t;
    t.task_id = jt.value("task_id", "");
    t.prompt = jt.value("prompt", "synthetic:" + t.task_id);
    t.correct_group = jt.value("correct_group", 0);
    t.draw_mode =
        jt.value("draw_mode", "weighted") == "round_robin" ? DrawMode::round_robin
                                                           : DrawMode::weighted;
    for (const auto& jv : jt.value("variants", json::array())) {
      Variant v;
      v.tag = jv.value("tag", "");
      v.group = jv.value("group", 0);
      v.weight = jv.value("weight", 1.0);
      v.invalid_behavior = behavior_from(jv.value("invalid_behavior", "raise"));
      t.variants.push_back(std::move(v));
    }
    t.valid_inputs = jt.value("valid_inputs", std::vector<int>{});
    t.invalid_inputs = jt.value("invalid_inputs", std::vector<int>{});
    t.oracle_inputs = jt.value("oracle_inputs", std::vector<int>{});
    spec.tasks.push_back(std::move(t));
  }
  spec.validate();
  return spec;
}

SyntheticModelSpec SyntheticModelSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open synthetic spec: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void SyntheticModelSpec::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write synthetic spec: " + path.string());
  out << to_json() << "\n";
}

std::vector<ProgramSource> SyntheticModel::generate_code(
    const gateway::GenerationRequest& request) {
  if (request.count < 1) throw InputError("generate_code: count must be >= 1");
  const SyntheticTask& task = spec_->require_by_prompt(request.prompt);
  Rng rng(derive_seed(request.seed, task.task_id + "/code"));

  std::vector<double> weights;
  weights.reserve(task.variants.size());
  for (const auto& v : task.variants) weights.push_back(v.weight);

  std::vector<ProgramSource> out;
  out.reserve(request.count);
  for (int i = 0; i < request.count; ++i) {
    const size_t pick = task.draw_mode == DrawMode::round_robin
                            ? i % task.variants.size()
                            : rng.weighted(weights);
    out.push_back({"s" + std::to_string(i), "python3",
                   variant_program(task, task.variants[pick])});
  }
  return out;
}

std::vector<TestInput> SyntheticModel::generate_tests(
    const gateway::GenerationRequest& request) {
  if (request.count < 1) throw InputError("generate_tests: count must be >= 1");
  const SyntheticTask& task = spec_->require_by_prompt(request.prompt);
  Rng rng(derive_seed(request.seed, task.task_id + "/tests"));

  std::vector<int> pool = task.valid_inputs;
  pool.insert(pool.end(), task.invalid_inputs.begin(), task.invalid_inputs.end());
  if (pool.empty()) throw InputError("synthetic task " + task.task_id + ": empty test pool");

  // Draw without replacement per cycle; each pass covers the whole pool.
  std::vector<TestInput> out;
  out.reserve(request.count);
  while (static_cast<int>(out.size()) < request.count) {
    std::vector<int> cycle = pool;
    rng.shuffle(cycle);
    for (int x : cycle) {
      if (static_cast<int>(out.size()) >= request.count) break;
      out.push_back({"t" + std::to_string(out.size()), invocation_for(x)});
    }
  }
  return out;
}

ExecOutcome VirtualExecutor::execute_one(const ProgramSource& program, const TestInput& input) {
  const auto marker = parse_program_marker(program.source);
  if (!marker) {
    // The sentinel program raises before the invocation ever runs.
    if (program.source == gateway::kSentinelProgram) return ExecOutcome::error("RuntimeError");
    return ExecOutcome::error("NonZeroExit");
  }
  const SyntheticTask* task = spec_->find_by_id(marker->first);
  if (!task) throw EngineError("virtual executor: unknown synthetic task " + marker->first);
  const auto vit = std::find_if(task->variants.begin(), task->variants.end(),
                                [&](const Variant& v) { return v.tag == marker->second; });
  if (vit == task->variants.end())
    throw EngineError("virtual executor: unknown variant " + marker->second + " in task " +
                      marker->first);

  if (input.invocation == gateway::kSentinelInvocation) return ExecOutcome::error("ValueError");
  const auto x = parse_invocation_input(input.invocation);
  if (!x) return ExecOutcome::error("NonZeroExit");
  return virtual_outcome(*task, *vit, *x);
}

OutcomeMatrix VirtualExecutor::execute_matrix(std::span<const ProgramSource> samples,
                                              std::span<const TestInput> tests) {
  if (samples.empty()) throw InputError("execute_matrix: samples must be non-empty");
  std::vector<std::string> sample_ids, test_ids;
  for (const auto& s : samples) sample_ids.push_back(s.sample_id);
  for (const auto& t : tests) test_ids.push_back(t.test_id);
  std::vector<ExecOutcome> cells;
  cells.reserve(samples.size() * tests.size());
  for (const auto& s : samples) {
    for (const auto& t : tests) cells.push_back(execute_one(s, t));
  }
  return OutcomeMatrix(std::move(sample_ids), std::move(test_ids), std::move(cells));
}

void TaskDistribution::validate() const {
  if (p_solid < 0 || p_mixed < 0 || p_weak < 0 || p_broken < 0 ||
      p_solid + p_mixed + p_weak + p_broken <= 0.0)
    throw InputError("TaskDistribution: archetype mass must be positive");
  if (wrong_group_weights.empty())
    throw InputError("TaskDistribution: wrong_group_weights must be non-empty");
  if (min_invalid_inputs < 0 || max_invalid_inputs < min_invalid_inputs)
    throw InputError("TaskDistribution: need 0 <= min_invalid_inputs <= max_invalid_inputs");
}

SyntheticTask TaskDistribution::sample(Rng& rng, const std::string& task_id) const {
  validate();
  SyntheticTask task;
  task.task_id = task_id;
  task.prompt = "synthetic:" + task_id;
  task.correct_group = 0;

  const double archetypes[4] = {p_solid, p_mixed, p_weak, p_broken};
  double q = 0.0;
  switch (rng.weighted(archetypes)) {
    case 0: q = rng.uniform(0.85, 1.0); break;
    case 1: q = rng.uniform(0.40, 0.80); break;
    case 2: q = rng.uniform(0.10, 0.40); break;
    default: q = rng.uniform(0.0, 0.10); break;
  }

  static const InvalidBehavior behaviors[] = {
      InvalidBehavior::assert_check, InvalidBehavior::return_zero,
      InvalidBehavior::raise_error, InvalidBehavior::negate};
  int next_variant = 0;
  const auto add_variant = [&](int group, double weight) {
    if (weight <= 1e-9) return;
    Variant v;
    v.tag = "v" + std::to_string(next_variant++);
    v.group = group;
    v.weight = weight;
    v.invalid_behavior = behaviors[rng.below(4)];
    task.variants.push_back(std::move(v));
  };

  if (q > 1e-9) {
    // Occasionally split the correct mass over two variants that differ only
    // in invalid-input handling (they must differ there, or they would be a
    // single behavior).
    if (q > 0.3 && rng.uniform() < 0.5) {
      const double part = q * rng.uniform(0.3, 0.7);
      add_variant(0, part);
      add_variant(0, q - part);
      auto& a = task.variants[task.variants.size() - 2];
      auto& b = task.variants.back();
      if (a.invalid_behavior == b.invalid_behavior) {
        b.invalid_behavior = a.invalid_behavior == InvalidBehavior::assert_check
                                 ? InvalidBehavior::return_zero
                                 : InvalidBehavior::assert_check;
      }
    } else {
      add_variant(0, q);
    }
  }
  const double wrong_mass = 1.0 - q;
  if (wrong_mass > 1e-9) {
    // Hallucinating behavior scatters: wrong mass spreads over groups with
    // bounded dominance (per-group weight in [1, 2]), so a wrong consensus
    // is possible but rare.
    const int wrong_groups = 1 + static_cast<int>(rng.weighted(wrong_group_weights));
    std::vector<double> shares;
    double share_total = 0.0;
    for (int g = 0; g < wrong_groups; ++g) {
      shares.push_back(rng.uniform(1.0, 2.0));
      share_total += shares.back();
    }
    for (int g = 0; g < wrong_groups; ++g) {
      add_variant(g + 1, wrong_mass * shares[g] / share_total);
    }
  }
  if (task.variants.empty()) add_variant(1, 1.0);
  if (force_two_variants && task.variants.size() == 1) {
    Variant split = task.variants[0];
    task.variants[0].weight = split.weight * 0.6;
    split.tag = "v" + std::to_string(next_variant++);
    split.weight *= 0.4;
    split.invalid_behavior = task.variants[0].invalid_behavior == InvalidBehavior::assert_check
                                 ? InvalidBehavior::return_zero
                                 : InvalidBehavior::assert_check;
    task.variants.push_back(std::move(split));
  }

  for (int i = 0; i < n_valid_inputs; ++i) task.valid_inputs.push_back(i + 1);
  const int n_invalid =
      min_invalid_inputs +
      static_cast<int>(rng.below(max_invalid_inputs - min_invalid_inputs + 1));
  for (int i = 0; i < n_invalid; ++i) task.invalid_inputs.push_back(-(i + 1));
  for (int i = 0; i < n_oracle_inputs; ++i) task.oracle_inputs.push_back(101 + i);

  task.validate();
  return task;
}

std::vector<SyntheticTask> TaskDistribution::sample_many(uint64_t seed, int count,
                                                         const std::string& id_prefix) const {
  std::vector<SyntheticTask> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, id_prefix + "/" + std::to_string(i)));
    out.push_back(sample(rng, id_prefix + std::to_string(i)));
  }
  return out;
}

}  // namespace refusalgate::synthetic

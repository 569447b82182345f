#include <doctest.h>

#include <csignal>
#include <chrono>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "refusalgate/errors.hpp"
#include "refusalgate/sandbox.hpp"

using namespace refusalgate;
using namespace refusalgate::sandbox;

namespace {

ExecConfig fast_config() {
  ExecConfig config;
  config.timeout_ms = 4000;
  config.max_parallel = 2;
  return config;
}

ProgramSource program(const std::string& id, const std::string& source) {
  return {id, "python3", source};
}

namespace fs = std::filesystem;

size_t count_scratch_dirs(const fs::path& root) {
  size_t n = 0;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.path().filename().string().starts_with("rg-exec-")) ++n;
  }
  return n;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("rg-test-" + std::to_string(
                             std::chrono::steady_clock::now().time_since_epoch().count()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

}  // namespace

TEST_SUITE("sandbox") {

TEST_CASE("canonicalize_stdout applies the value rules") {
  CHECK(canonicalize_stdout("3.0\n") == "3.0");
  CHECK(canonicalize_stdout("a \n b") == "a\n b");
  CHECK(canonicalize_stdout("") == "");
  CHECK(canonicalize_stdout("x\r\n") == "x");
  CHECK(canonicalize_stdout("line1  \t\nline2\t \n") == "line1\nline2");
  CHECK(canonicalize_stdout("x\n\n") == "x\n");
  // Lossy decode replaces invalid bytes.
  CHECK(canonicalize_stdout("ok\xff") == "ok\xef\xbf\xbd");
}

TEST_CASE("canonicalize_output maps termination reasons to atoms") {
  CHECK(canonicalize_output("3.0\n", 0, Termination::exited) == ExecOutcome::value("3.0"));
  CHECK(canonicalize_output("whatever", 0, Termination::timed_out) == ExecOutcome::timeout());
  CHECK(canonicalize_output("", 0, Termination::resource_limit) ==
        ExecOutcome::resource_exceeded());
  CHECK(canonicalize_output("", 1, Termination::exited,
                            "Traceback (most recent call last):\n  ...\nZeroDivisionError: "
                            "division by zero\n") == ExecOutcome::error("ZeroDivisionError"));
  CHECK(canonicalize_output("", 3, Termination::exited, "no class here!") ==
        ExecOutcome::error("NonZeroExit"));
  CHECK(canonicalize_output("", 0, Termination::signaled, "", SIGKILL) ==
        ExecOutcome::resource_exceeded());
  CHECK(canonicalize_output("", 0, Termination::signaled, "", SIGSEGV) ==
        ExecOutcome::error("Signaled:SIGSEGV"));
}

TEST_CASE("parse_error_class reads the last traceback line") {
  CHECK(parse_error_class("Traceback ...\nValueError: bad\n") == "ValueError");
  CHECK(parse_error_class("KeyboardInterrupt\n") == "KeyboardInterrupt");
  CHECK(parse_error_class("pkg.mod.CustomError: boom\n") == "pkg.mod.CustomError");
  CHECK(parse_error_class("completely unstructured! text") == "");
  CHECK(parse_error_class("") == "");
}

TEST_CASE("execute_one returns canonical stdout") {
  SandboxExecutor executor(fast_config());
  const auto outcome = executor.execute_one(
      program("s0", "def f(x):\n    return 42\n"), {"t0", "print(f(1))"});
  CHECK(outcome == ExecOutcome::value("42"));
}

TEST_CASE("execute_one classes runtime errors") {
  SandboxExecutor executor(fast_config());
  const auto outcome = executor.execute_one(
      program("s0", "def f(x):\n    return 1 / 0\n"), {"t0", "print(f(1))"});
  CHECK(outcome == ExecOutcome::error("ZeroDivisionError"));
}

TEST_CASE("unbounded loop hits the timeout within the grace window") {
  ExecConfig config = fast_config();
  config.timeout_ms = 1000;
  SandboxExecutor executor(config);
  const auto start = std::chrono::steady_clock::now();
  const auto outcome =
      executor.execute_one(program("s0", "while True:\n    pass\n"), {"t0", ""});
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - start)
                           .count();
  CHECK(outcome == ExecOutcome::timeout());
  CHECK(elapsed <= config.timeout_ms + config.grace_ms);
}

TEST_CASE("cpu limit surfaces as resource exhaustion") {
  ExecConfig config = fast_config();
  config.timeout_ms = 8000;
  config.cpu_limit_sec = 1;
  SandboxExecutor executor(config);
  const auto outcome =
      executor.execute_one(program("s0", "x = 0\nwhile True:\n    x += 1\n"), {"t0", ""});
  CHECK(outcome == ExecOutcome::resource_exceeded());
}

TEST_CASE("address-space cap turns huge allocations into MemoryError") {
  ExecConfig config = fast_config();
  config.memory_cap_bytes = 256L << 20;
  SandboxExecutor executor(config);
  const auto outcome = executor.execute_one(
      program("s0", "x = bytearray(1 << 30)\nprint(len(x))\n"), {"t0", ""});
  CHECK(outcome == ExecOutcome::error("MemoryError"));
}

TEST_CASE("missing interpreter is an engine error, not an outcome") {
  ExecConfig config = fast_config();
  config.interpreters["python3"] = "/nonexistent/bin/python3";
  SandboxExecutor executor(config);
  CHECK_THROWS_AS(executor.execute_one(program("s0", "print(1)"), {"t0", ""}), EngineError);
}

TEST_CASE("empty source is rejected") {
  SandboxExecutor executor(fast_config());
  CHECK_THROWS_AS(executor.execute_one(program("s0", ""), {"t0", ""}), InputError);
}

TEST_CASE("execute_matrix builds the complete grid") {
  SandboxExecutor executor(fast_config());
  const std::vector<ProgramSource> samples = {
      program("a", "def f(x):\n    return x + 1\n"),
      program("b", "def f(x):\n    return x + 1\n"),
      program("c", "def f(x):\n    return x * 10\n"),
  };
  const std::vector<TestInput> tests = {{"t0", "print(f(1))"}, {"t1", "print(f(2))"}};
  const auto matrix = executor.execute_matrix(samples, tests);

  // Identical programs produce identical rows.
  for (const auto& t : {"t0", "t1"}) {
    CHECK(matrix.at("a", t) == matrix.at("b", t));
  }
  // Grid equals six independent execute_one calls.
  for (const auto& s : samples) {
    for (const auto& t : tests) {
      CHECK(matrix.at(s.sample_id, t.test_id) == executor.execute_one(s, t));
    }
  }
  CHECK(matrix.at("c", "t0") == ExecOutcome::value("10"));
  CHECK(matrix.at("c", "t1") == ExecOutcome::value("20"));
}

TEST_CASE("degenerate grids: zero tests is valid, zero samples is not") {
  SandboxExecutor executor(fast_config());
  const std::vector<ProgramSource> samples = {program("a", "x = 1\n"),
                                              program("b", "x = 2\n")};
  const auto matrix = executor.execute_matrix(samples, {});
  CHECK(matrix.n_samples() == 2);
  CHECK(matrix.n_tests() == 0);
  CHECK_THROWS_AS(executor.execute_matrix({}, {}), InputError);
}

TEST_CASE("repeated execution of a pure program is deterministic") {
  SandboxExecutor executor(fast_config());
  const auto p = program("s0", "def f(x):\n    return sum(range(x))\n");
  const TestInput t{"t0", "print(f(100))"};
  const auto first = executor.execute_one(p, t);
  for (int i = 0; i < 3; ++i) CHECK(executor.execute_one(p, t) == first);
}

TEST_CASE("isolation: programs write only inside a scratch dir that is removed") {
  TempDir scratch_root;
  ExecConfig config = fast_config();
  config.scratch_root = scratch_root.path;
  SandboxExecutor executor(config);
  const auto outcome = executor.execute_one(
      program("s0", "with open('dropped.txt', 'w') as f:\n    f.write('x')\nprint('done')\n"),
      {"t0", ""});
  CHECK(outcome == ExecOutcome::value("done"));
  CHECK(count_scratch_dirs(scratch_root.path) == 0);
}

TEST_CASE("disk cache round-trips outcomes and matches uncached execution") {
  TempDir cache_dir;
  const std::vector<ProgramSource> samples = {
      program("a", "def f(x):\n    return x - 1\n"),
      program("b", "def f(x):\n    raise ValueError('no')\n"),
  };
  const std::vector<TestInput> tests = {{"t0", "print(f(5))"}, {"t1", "print(f(7))"}};

  ExecConfig cached_config = fast_config();
  cached_config.cache_dir = cache_dir.path;

  SandboxExecutor warm(cached_config);
  const auto first = warm.execute_matrix(samples, tests);

  // A fresh executor over the same cache directory must serve identical
  // outcomes, as must an executor with no cache at all.
  SandboxExecutor reread(cached_config);
  const auto second = reread.execute_matrix(samples, tests);
  SandboxExecutor uncached(fast_config());
  const auto third = uncached.execute_matrix(samples, tests);
  for (const auto& s : samples) {
    for (const auto& t : tests) {
      CHECK(first.at(s.sample_id, t.test_id) == second.at(s.sample_id, t.test_id));
      CHECK(first.at(s.sample_id, t.test_id) == third.at(s.sample_id, t.test_id));
    }
  }
  CHECK(first.at("b", "t0") == ExecOutcome::error("ValueError"));
}

TEST_CASE("cached timeout is served without re-running") {
  TempDir cache_dir;
  ExecConfig config = fast_config();
  config.timeout_ms = 800;
  config.cache_dir = cache_dir.path;
  SandboxExecutor executor(config);
  const auto p = program("s0", "while True:\n    pass\n");
  const TestInput t{"t0", ""};
  CHECK(executor.execute_one(p, t) == ExecOutcome::timeout());

  SandboxExecutor again(config);
  const auto start = std::chrono::steady_clock::now();
  CHECK(again.execute_one(p, t) == ExecOutcome::timeout());
  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - start)
                           .count();
  CHECK(elapsed < 400);  // cache hit, no subprocess
}

TEST_CASE("exec config invariants") {
  ExecConfig config;
  config.timeout_ms = 0;
  CHECK_THROWS_AS(config.validate(), InputError);
  config = {};
  CHECK_NOTHROW(config.validate());
  CHECK(config.effective_parallel() >= 1);
}

TEST_CASE("outcome encoding round-trips") {
  for (const auto& o :
       {ExecOutcome::value("x\ny"), ExecOutcome::error("ValueError"), ExecOutcome::timeout(),
        ExecOutcome::resource_exceeded(), ExecOutcome::value("")}) {
    const auto decoded = ExecOutcome::decode(o.encode());
    REQUIRE(decoded.has_value());
    CHECK(*decoded == o);
  }
  CHECK(!ExecOutcome::decode("garbage").has_value());
}

}  // TEST_SUITE

#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace refusalgate::sandbox {

/// One candidate program emitted by the model.
struct ProgramSource {
  std::string sample_id;
  std::string language_tag = "python3";
  std::string source;  // full program text, non-empty
};

/// One generated test: a fragment that calls the entry point with a concrete
/// input and prints the result. Carries no expected-value assertion.
struct TestInput {
  std::string test_id;
  std::string invocation;
};

/// Calibration-only test with a known expectation. Either `expected` holds
/// the canonical output to compare against, or the invocation itself is an
/// assertion-style check (pass = clean Value outcome of any payload).
struct OracleTest {
  std::string test_id;
  std::string invocation;
  std::optional<std::string> expected;
};

enum class OutcomeKind : uint8_t { value, error, timeout, resource_exceeded };

/// Canonical, comparable result of running one sample on one input.
/// payload: canonicalized stdout for value, error class for error.
struct ExecOutcome {
  OutcomeKind kind = OutcomeKind::value;
  std::string payload;

  static ExecOutcome value(std::string v) { return {OutcomeKind::value, std::move(v)}; }
  static ExecOutcome error(std::string cls) { return {OutcomeKind::error, std::move(cls)}; }
  static ExecOutcome timeout() { return {OutcomeKind::timeout, {}}; }
  static ExecOutcome resource_exceeded() { return {OutcomeKind::resource_exceeded, {}}; }

  bool is_value() const { return kind == OutcomeKind::value; }

  bool operator==(const ExecOutcome&) const = default;
  auto operator<=>(const ExecOutcome&) const = default;

  /// Stable encoding used for fingerprint keys and the on-disk cache.
  std::string encode() const;
  static std::optional<ExecOutcome> decode(std::string_view encoded);
};

/// Why the child ended, as observed by the runner.
enum class Termination : uint8_t { exited, timed_out, resource_limit, signaled };

/// Total function reducing raw process results to a canonical outcome.
/// Value path: decode stdout as UTF-8 (lossy), strip one trailing newline,
/// strip trailing whitespace per line. Nonzero exit with a recognizable
/// error class on stderr -> Error(class); otherwise Error("NonZeroExit").
ExecOutcome canonicalize_output(std::string_view raw_stdout, int exit_status,
                                Termination reason, std::string_view raw_stderr = {},
                                int term_signal = 0);

/// Canonical Value-form text used by canonicalize_output, exposed so oracle
/// expectations can be normalized the same way.
std::string canonicalize_stdout(std::string_view raw_stdout);

/// Last-line error-class parse ("ZeroDivisionError: msg" -> "ZeroDivisionError").
/// Empty when no class is recognizable.
std::string parse_error_class(std::string_view raw_stderr);

struct ExecConfig {
  int timeout_ms = 4000;
  long memory_cap_bytes = 512L << 20;
  int max_parallel = 0;        // 0 = hardware concurrency
  int grace_ms = 500;          // reap allowance beyond timeout
  long cpu_limit_sec = 0;      // 0 = derived from timeout
  long output_cap_bytes = 8L << 20;
  std::map<std::string, std::string> interpreters;  // language_tag -> path ("" = resolve)
  std::filesystem::path scratch_root;               // empty = system temp dir
  std::filesystem::path cache_dir;                  // empty = no disk cache
  bool keep_scratch = false;

  /// Throws InputError on violated invariants (timeout > 0, max_parallel >= 0).
  void validate() const;
  int effective_parallel() const;

  /// Digest over the fields that can change an outcome.
  std::string outcome_digest(const std::string& resolved_interpreter) const;
};

/// Complete samples x tests grid of outcomes. Immutable once built.
class OutcomeMatrix {
 public:
  OutcomeMatrix(std::vector<std::string> sample_ids, std::vector<std::string> test_ids,
                std::vector<ExecOutcome> cells_row_major, ExecConfig config = {});

  const std::vector<std::string>& sample_ids() const { return sample_ids_; }
  const std::vector<std::string>& test_ids() const { return test_ids_; }
  size_t n_samples() const { return sample_ids_.size(); }
  size_t n_tests() const { return test_ids_.size(); }
  const ExecConfig& config() const { return config_; }

  bool has_test(const std::string& test_id) const;
  size_t test_index(const std::string& test_id) const;  // throws InputError
  size_t sample_index(const std::string& sample_id) const;

  const ExecOutcome& at(size_t sample_idx, size_t test_idx) const;
  const ExecOutcome& at(const std::string& sample_id, const std::string& test_id) const;

 private:
  std::vector<std::string> sample_ids_;
  std::vector<std::string> test_ids_;
  std::unordered_map<std::string, size_t> sample_index_;
  std::unordered_map<std::string, size_t> test_index_;
  std::vector<ExecOutcome> cells_;
  ExecConfig config_;
};

}  // namespace refusalgate::sandbox

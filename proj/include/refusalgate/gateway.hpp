#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "refusalgate/outcome.hpp"

namespace refusalgate::gateway {

using sandbox::ProgramSource;
using sandbox::TestInput;

enum class GenKind : uint8_t { code, tests };

struct GenerationRequest {
  std::string prompt;
  int count = 1;
  GenKind kind = GenKind::code;
  double temperature = 0.8;
  double top_p = 0.95;
  uint64_t seed = 0;  // honored by the synthetic model only
};

/// Abstract generation source: a remote chat-completion endpoint or a seeded
/// synthetic model.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::vector<ProgramSource> generate_code(const GenerationRequest& request) = 0;
  virtual std::vector<TestInput> generate_tests(const GenerationRequest& request) = 0;
  virtual std::string name() const = 0;
};

/// Fixed program substituted for responses that yield no usable code; it
/// always errors, so all unparseable responses form one behavior class.
extern const char* const kSentinelProgram;
/// Invocation substituted for unusable test responses; it errors on every
/// sample, so error-rate filtering prunes it.
extern const char* const kSentinelInvocation;

/// Extract the first fenced code block; fall back to the whole text when no
/// fence is present. Empty extraction yields the sentinel program text.
std::string parse_code_block(const std::string& response_text);

/// Prompt templates with a {{TASK}} placeholder. Defaults are embedded;
/// files override.
struct PromptTemplates {
  std::string code;
  std::string tests;

  static PromptTemplates defaults();
  static PromptTemplates load_dir(const std::filesystem::path& dir);  // falls back per file
  std::string render_code(const std::string& task) const;
  std::string render_tests(const std::string& task) const;
};

struct EndpointOptions {
  std::string url;    // e.g. http://host:port
  std::string token;  // optional bearer token
  std::string model_name = "default";
  std::string path = "/v1/chat/completions";
  int max_retries = 3;
  int retry_backoff_ms = 200;  // doubled per retry
  int request_timeout_sec = 120;
  int max_rounds = 8;      // extra requests when the server returns < n choices
  int max_in_flight = 4;   // cap on concurrent requests across decisions

  /// Fill url/token from REFUSALGATE_ENDPOINT / REFUSALGATE_TOKEN when unset.
  void apply_env();
};

/// Chat-completion client. POSTs {model, messages, n, temperature, top_p}
/// and extracts choices[i].message.content. Bounded retries with backoff;
/// persistent failure surfaces as EngineError, never a silent decision.
class EndpointModel final : public Generator {
 public:
  EndpointModel(EndpointOptions options, PromptTemplates templates = PromptTemplates::defaults());
  ~EndpointModel() override;

  std::vector<ProgramSource> generate_code(const GenerationRequest& request) override;
  std::vector<TestInput> generate_tests(const GenerationRequest& request) override;
  std::string name() const override { return options_.model_name; }

 private:
  EndpointOptions options_;
  PromptTemplates templates_;
  struct InFlightGate;
  std::unique_ptr<InFlightGate> gate_;

  std::vector<std::string> complete(const std::string& prompt, int n, double temperature,
                                    double top_p);
};

}  // namespace refusalgate::gateway

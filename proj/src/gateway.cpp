#include "refusalgate/gateway.hpp"

#include <condition_variable>
#include <mutex>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "refusalgate/errors.hpp"

namespace refusalgate::gateway {

using nlohmann::json;

const char* const kSentinelProgram =
    "raise RuntimeError(\"unparseable model response\")\n";
const char* const kSentinelInvocation =
    "raise ValueError(\"unparseable generated test\")";

namespace {

constexpr const char* kDefaultCodePrompt =
    "You are a careful Python programmer.\n"
    "Write a complete Python 3 solution for the task below. Reply with a single\n"
    "fenced code block containing only the program, no prose.\n"
    "\n"
    "Task:\n"
    "{{TASK}}\n";

constexpr const char* kDefaultTestPrompt =
    "You are exercising a Python 3 solution to the task below. The solution is\n"
    "already defined; produce one test invocation that calls the entry point\n"
    "with a concrete input and prints the result. Do not assert expected\n"
    "values; inputs only. Reply with a single fenced code block containing\n"
    "only the invocation.\n"
    "\n"
    "Task:\n"
    "{{TASK}}\n";

std::string replace_all(std::string text, const std::string& needle,
                        const std::string& replacement) {
  size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), replacement);
    pos += replacement.size();
  }
  return text;
}

std::string read_file_or(const std::filesystem::path& p, const std::string& fallback) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return fallback;
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_blank(const std::string& s) {
  for (char c : s) {
    if (c != ' ' && c != '\t' && c != '\n' && c != '\r') return false;
  }
  return true;
}

}  // namespace

std::string parse_code_block(const std::string& response_text) {
  // First fenced block wins; an info string after the opening fence (e.g.
  // ```python) is dropped.
  size_t open = response_text.find("```");
  if (open != std::string::npos) {
    size_t body_start = response_text.find('\n', open + 3);
    if (body_start != std::string::npos) {
      ++body_start;
      const size_t close = response_text.find("```", body_start);
      if (close != std::string::npos) {
        std::string body = response_text.substr(body_start, close - body_start);
        if (!body.empty() && body.back() == '\n') body.pop_back();
        if (!body.empty() && body.back() == '\r') body.pop_back();
        // A closed fence is authoritative; an empty one is an empty extraction.
        return is_blank(body) ? kSentinelProgram : body;
      }
    }
  }
  if (is_blank(response_text)) return kSentinelProgram;
  return response_text;
}

PromptTemplates PromptTemplates::defaults() {
  return {kDefaultCodePrompt, kDefaultTestPrompt};
}

PromptTemplates PromptTemplates::load_dir(const std::filesystem::path& dir) {
  PromptTemplates t;
  t.code = read_file_or(dir / "code_prompt.txt", kDefaultCodePrompt);
  t.tests = read_file_or(dir / "test_prompt.txt", kDefaultTestPrompt);
  return t;
}

std::string PromptTemplates::render_code(const std::string& task) const {
  return replace_all(code, "{{TASK}}", task);
}

std::string PromptTemplates::render_tests(const std::string& task) const {
  return replace_all(tests, "{{TASK}}", task);
}

void EndpointOptions::apply_env() {
  if (url.empty()) {
    if (const char* e = std::getenv("REFUSALGATE_ENDPOINT"); e && *e) url = e;
  }
  if (token.empty()) {
    if (const char* e = std::getenv("REFUSALGATE_TOKEN"); e && *e) token = e;
  }
}

// Counting gate bounding concurrent requests across decisions.
struct EndpointModel::InFlightGate {
  std::mutex mu;
  std::condition_variable cv;
  int available;

  explicit InFlightGate(int cap) : available(cap) {}

  struct Slot {
    InFlightGate& gate;
    explicit Slot(InFlightGate& g) : gate(g) {
      std::unique_lock lock(gate.mu);
      gate.cv.wait(lock, [&] { return gate.available > 0; });
      --gate.available;
    }
    ~Slot() {
      {
        std::scoped_lock lock(gate.mu);
        ++gate.available;
      }
      gate.cv.notify_one();
    }
  };
};

EndpointModel::EndpointModel(EndpointOptions options, PromptTemplates templates)
    : options_(std::move(options)), templates_(std::move(templates)) {
  options_.apply_env();
  if (options_.url.empty())
    throw InputError("endpoint URL not set (flag or REFUSALGATE_ENDPOINT)");
  gate_ = std::make_unique<InFlightGate>(std::max(options_.max_in_flight, 1));
}

EndpointModel::~EndpointModel() = default;

std::vector<std::string> EndpointModel::complete(const std::string& prompt, int n,
                                                 double temperature, double top_p) {
  InFlightGate::Slot slot(*gate_);
  httplib::Client client(options_.url);
  client.set_connection_timeout(options_.request_timeout_sec, 0);
  client.set_read_timeout(options_.request_timeout_sec, 0);
  httplib::Headers headers;
  if (!options_.token.empty()) headers.emplace("Authorization", "Bearer " + options_.token);

  std::vector<std::string> contents;
  int rounds = 0;
  while (static_cast<int>(contents.size()) < n && rounds < options_.max_rounds) {
    ++rounds;
    const json body = {
        {"model", options_.model_name},
        {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
        {"n", n - static_cast<int>(contents.size())},
        {"temperature", temperature},
        {"top_p", top_p},
    };

    std::string last_failure;
    bool got_response = false;
    for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(
            std::chrono::milliseconds(options_.retry_backoff_ms << (attempt - 1)));
      }
      auto res = client.Post(options_.path, headers, body.dump(), "application/json");
      if (!res) {
        last_failure = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_failure = "server error: HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw EngineError("endpoint rejected request: HTTP " + std::to_string(res->status) +
                          " " + res->body.substr(0, 200));
      }
      json parsed;
      try {
        parsed = json::parse(res->body);
      } catch (const json::exception& e) {
        last_failure = std::string("bad JSON from endpoint: ") + e.what();
        continue;
      }
      for (const auto& choice : parsed.value("choices", json::array())) {
        contents.push_back(choice.value("message", json::object()).value("content", ""));
      }
      got_response = true;
      break;
    }
    if (!got_response)
      throw EngineError("endpoint " + options_.url + " failed after " +
                        std::to_string(options_.max_retries + 1) + " attempts: " + last_failure);
  }
  if (static_cast<int>(contents.size()) < n)
    throw EngineError("endpoint returned " + std::to_string(contents.size()) + " of " +
                      std::to_string(n) + " requested completions");
  contents.resize(n);
  return contents;
}

std::vector<ProgramSource> EndpointModel::generate_code(const GenerationRequest& request) {
  if (request.count < 1) throw InputError("generate_code: count must be >= 1");
  const auto contents = complete(templates_.render_code(request.prompt), request.count,
                                 request.temperature, request.top_p);
  std::vector<ProgramSource> out;
  out.reserve(contents.size());
  for (size_t i = 0; i < contents.size(); ++i) {
    out.push_back({"s" + std::to_string(i), "python3", parse_code_block(contents[i])});
  }
  return out;
}

std::vector<TestInput> EndpointModel::generate_tests(const GenerationRequest& request) {
  if (request.count < 1) throw InputError("generate_tests: count must be >= 1");
  const auto contents = complete(templates_.render_tests(request.prompt), request.count,
                                 request.temperature, request.top_p);
  std::vector<TestInput> out;
  out.reserve(contents.size());
  for (size_t i = 0; i < contents.size(); ++i) {
    std::string invocation = parse_code_block(contents[i]);
    if (invocation == kSentinelProgram) invocation = kSentinelInvocation;
    out.push_back({"t" + std::to_string(i), std::move(invocation)});
  }
  return out;
}

}  // namespace refusalgate::gateway

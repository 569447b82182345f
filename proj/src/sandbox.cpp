#include "refusalgate/sandbox.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>
#include <vector>

#include "refusalgate/digest.hpp"
#include "refusalgate/errors.hpp"

namespace refusalgate::sandbox {

namespace {

constexpr const char* kExecFailureMarker = "refusalgate-exec-failure";

std::string read_file_capped(const std::filesystem::path& p, long cap) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  std::error_code ec;
  const auto size = std::filesystem::file_size(p, ec);
  const long want = ec ? cap : std::min<long>(cap, static_cast<long>(size));
  std::string data;
  data.resize(static_cast<size_t>(want));
  in.read(data.data(), want);
  data.resize(static_cast<size_t>(in.gcount()));
  return data;
}

bool is_executable_file(const std::filesystem::path& p) {
  std::error_code ec;
  return std::filesystem::is_regular_file(p, ec) && ::access(p.c_str(), X_OK) == 0;
}

std::string find_in_path(const std::string& name) {
  const char* path_env = std::getenv("PATH");
  if (!path_env) return {};
  std::istringstream ss(path_env);
  std::string dir;
  while (std::getline(ss, dir, ':')) {
    if (dir.empty()) continue;
    std::filesystem::path candidate = std::filesystem::path(dir) / name;
    if (is_executable_file(candidate)) return candidate.string();
  }
  return {};
}

struct RawResult {
  std::string stdout_bytes;
  std::string stderr_bytes;
  int exit_status = 0;
  Termination reason = Termination::exited;
  int term_signal = 0;
  bool exec_failed = false;
};

RawResult run_child(const std::string& interpreter, const std::filesystem::path& scratch,
                    const std::filesystem::path& script, const ExecConfig& cfg) {
  const std::filesystem::path out_path = scratch / "stdout";
  const std::filesystem::path err_path = scratch / "stderr";

  // Everything the child needs is prepared before fork so the child only
  // makes async-signal-safe calls between fork and exec.
  const std::string script_str = script.string();
  const std::string scratch_str = scratch.string();
  const char* argv[3] = {interpreter.c_str(), script_str.c_str(), nullptr};
  const long cpu_sec = cfg.cpu_limit_sec > 0 ? cfg.cpu_limit_sec : cfg.timeout_ms / 1000 + 2;

  const pid_t pid = ::fork();
  if (pid < 0) throw EngineError("fork failed: " + std::string(std::strerror(errno)));

  if (pid == 0) {
    ::setsid();  // own process group, so the whole tree can be killed

    rlimit rl{};
    if (cfg.memory_cap_bytes > 0) {
      rl = {static_cast<rlim_t>(cfg.memory_cap_bytes), static_cast<rlim_t>(cfg.memory_cap_bytes)};
      ::setrlimit(RLIMIT_AS, &rl);
    }
    rl = {static_cast<rlim_t>(cpu_sec), static_cast<rlim_t>(cpu_sec)};
    ::setrlimit(RLIMIT_CPU, &rl);
    rl = {0, 0};
    ::setrlimit(RLIMIT_CORE, &rl);

    const int devnull = ::open("/dev/null", O_RDONLY);
    const int out_fd = ::open(out_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
    const int err_fd = ::open(err_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
    if (devnull < 0 || out_fd < 0 || err_fd < 0) ::_exit(126);
    ::dup2(devnull, STDIN_FILENO);
    ::dup2(out_fd, STDOUT_FILENO);
    ::dup2(err_fd, STDERR_FILENO);
    if (::chdir(scratch_str.c_str()) != 0) ::_exit(126);

    ::execv(argv[0], const_cast<char* const*>(argv));
    // exec failed: leave a marker so the parent can tell this apart from a
    // program that exits 127 on its own.
    const char* msg = kExecFailureMarker;
    ssize_t n = ::write(STDERR_FILENO, msg, std::strlen(msg));
    (void)n;
    ::_exit(127);
  }

  RawResult result;
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(cfg.timeout_ms);
  int status = 0;
  bool reaped = false;
  bool killed_for_timeout = false;
  for (;;) {
    const pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) {
      reaped = true;
      break;
    }
    if (r < 0 && errno != EINTR) break;
    if (!killed_for_timeout && std::chrono::steady_clock::now() >= deadline) {
      // Group kill plus a direct kill, in case the child has not reached
      // setsid yet.
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
      killed_for_timeout = true;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  if (!reaped) {
    ::kill(-pid, SIGKILL);
    ::kill(pid, SIGKILL);
    ::waitpid(pid, &status, 0);
  }
  // Sweep any stragglers the program may have spawned in its group.
  ::kill(-pid, SIGKILL);

  result.stdout_bytes = read_file_capped(out_path, cfg.output_cap_bytes);
  result.stderr_bytes = read_file_capped(err_path, cfg.output_cap_bytes);

  if (WIFSIGNALED(status)) {
    const int sig = WTERMSIG(status);
    result.term_signal = sig;
    if (killed_for_timeout && sig == SIGKILL) {
      result.reason = Termination::timed_out;
    } else {
      result.reason = (sig == SIGKILL || sig == SIGXCPU) ? Termination::resource_limit
                                                         : Termination::signaled;
    }
  } else {
    result.exit_status = WIFEXITED(status) ? WEXITSTATUS(status) : 1;
    result.reason = Termination::exited;
    if (result.exit_status == 127 &&
        result.stderr_bytes.find(kExecFailureMarker) != std::string::npos) {
      result.exec_failed = true;
    }
  }
  return result;
}

class ScratchDir {
 public:
  ScratchDir(const std::filesystem::path& root, bool keep) : keep_(keep) {
    std::string tmpl = (root / "rg-exec-XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (::mkdtemp(buf.data()) == nullptr)
      throw EngineError("scratch dir unwritable under " + root.string() + ": " +
                        std::strerror(errno));
    path_ = buf.data();
  }
  ~ScratchDir() {
    if (keep_) return;
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  bool keep_;
};

}  // namespace

ExecCache::ExecCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (!dir_.empty()) std::filesystem::create_directories(dir_);
}

std::filesystem::path ExecCache::path_for(const std::string& key) const {
  return dir_ / key.substr(0, 2) / (key.substr(2) + ".rec");
}

std::optional<ExecOutcome> ExecCache::lookup(const std::string& key) const {
  {
    std::shared_lock lock(mu_);
    auto it = mem_.find(key);
    if (it != mem_.end()) return it->second;
  }
  if (dir_.empty()) return std::nullopt;
  std::ifstream in(path_for(key), std::ios::binary);
  if (!in) return std::nullopt;
  std::string encoded((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto outcome = ExecOutcome::decode(encoded);
  if (outcome) {
    std::unique_lock lock(mu_);
    mem_.emplace(key, *outcome);
  }
  return outcome;
}

void ExecCache::store(const std::string& key, const ExecOutcome& outcome) {
  {
    std::unique_lock lock(mu_);
    mem_[key] = outcome;
  }
  if (dir_.empty()) return;
  const auto path = path_for(key);
  std::error_code ec;
  std::filesystem::create_directories(path.parent_path(), ec);
  const auto tmp = path.string() + ".tmp-" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << outcome.encode();
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) std::filesystem::remove(tmp, ec);
}

SandboxExecutor::SandboxExecutor(ExecConfig config) : config_(std::move(config)) {
  config_.validate();
  if (config_.scratch_root.empty())
    config_.scratch_root = std::filesystem::temp_directory_path();
  cache_ = std::make_unique<ExecCache>(config_.cache_dir);
}

std::string SandboxExecutor::interpreter_for(const std::string& language_tag) {
  {
    std::scoped_lock lock(resolve_mu_);
    auto it = resolved_.find(language_tag);
    if (it != resolved_.end()) return it->second;
  }

  std::string configured;
  if (auto it = config_.interpreters.find(language_tag); it != config_.interpreters.end())
    configured = it->second;
  if (configured.empty() && language_tag == "python3") {
    if (const char* env = std::getenv("REFUSALGATE_PYTHON"); env && *env) configured = env;
  }
  if (configured.empty()) configured = language_tag;  // tag doubles as binary name

  std::string path = configured;
  if (path.find('/') == std::string::npos) path = find_in_path(path);
  if (path.empty() || !is_executable_file(path))
    throw EngineError("interpreter for '" + language_tag + "' not executable: " + configured);

  std::scoped_lock lock(resolve_mu_);
  resolved_[language_tag] = path;
  return path;
}

std::string SandboxExecutor::cache_key(const ProgramSource& program, const TestInput& input,
                                       const std::string& interpreter) const {
  const std::string program_digest = sha256_hex(program.language_tag + '\x1f' + program.source);
  const std::string test_digest = sha256_hex(input.invocation);
  return sha256_hex(program_digest + '\x1f' + test_digest + '\x1f' +
                    config_.outcome_digest(interpreter));
}

ExecOutcome SandboxExecutor::run_uncached(const ProgramSource& program, const TestInput& input,
                                          const std::string& interpreter) {
  ScratchDir scratch(config_.scratch_root, config_.keep_scratch);
  const auto script = scratch.path() / "main.py";
  {
    std::ofstream out(script, std::ios::binary | std::ios::trunc);
    if (!out) throw EngineError("cannot write script in scratch dir " + scratch.path().string());
    out << program.source << "\n\n" << input.invocation << "\n";
  }

  RawResult raw = run_child(interpreter, scratch.path(), script, config_);
  if (raw.exec_failed)
    throw EngineError("failed to execute interpreter '" + interpreter + "'");
  if (raw.reason == Termination::exited && raw.exit_status == 126)
    throw EngineError("sandbox child setup failed in " + scratch.path().string());

  return canonicalize_output(raw.stdout_bytes, raw.exit_status, raw.reason, raw.stderr_bytes,
                             raw.term_signal);
}

ExecOutcome SandboxExecutor::execute_one(const ProgramSource& program, const TestInput& input) {
  if (program.source.empty()) throw InputError("ProgramSource.source is empty");
  const std::string interpreter = interpreter_for(program.language_tag);
  const std::string key = cache_key(program, input, interpreter);
  if (auto hit = cache_->lookup(key)) return *hit;
  ExecOutcome outcome = run_uncached(program, input, interpreter);
  cache_->store(key, outcome);
  return outcome;
}

OutcomeMatrix SandboxExecutor::execute_matrix(std::span<const ProgramSource> samples,
                                              std::span<const TestInput> tests) {
  if (samples.empty()) throw InputError("execute_matrix: samples must be non-empty");

  std::vector<std::string> sample_ids, test_ids;
  sample_ids.reserve(samples.size());
  test_ids.reserve(tests.size());
  for (const auto& s : samples) sample_ids.push_back(s.sample_id);
  for (const auto& t : tests) test_ids.push_back(t.test_id);

  const size_t n_cells = samples.size() * tests.size();
  std::vector<ExecOutcome> cells(n_cells);
  if (n_cells > 0) {
    std::atomic<size_t> next{0};
    std::atomic<bool> abort{false};
    std::exception_ptr first_error;
    std::mutex error_mu;

    auto worker = [&] {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= n_cells || abort.load()) return;
        try {
          cells[i] = execute_one(samples[i / tests.size()], tests[i % tests.size()]);
        } catch (...) {
          std::scoped_lock lock(error_mu);
          if (!first_error) first_error = std::current_exception();
          abort.store(true);
          return;
        }
      }
    };

    const size_t n_workers =
        std::min<size_t>(static_cast<size_t>(config_.effective_parallel()), n_cells);
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (size_t w = 0; w + 1 < n_workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  return OutcomeMatrix(std::move(sample_ids), std::move(test_ids), std::move(cells), config_);
}

}  // namespace refusalgate::sandbox

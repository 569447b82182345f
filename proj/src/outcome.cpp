#include "refusalgate/outcome.hpp"

#include <csignal>
#include <cstring>
#include <sstream>
#include <thread>

#include "refusalgate/digest.hpp"
#include "refusalgate/errors.hpp"

namespace refusalgate::sandbox {

namespace {

// Lossy UTF-8 decode: invalid sequences become U+FFFD, one replacement per
// rejected byte. Valid input passes through untouched.
std::string utf8_lossy(std::string_view bytes) {
  static const char* replacement = "\xef\xbf\xbd";
  std::string out;
  out.reserve(bytes.size());
  size_t i = 0;
  const auto cont = [&](size_t j) {
    return j < bytes.size() && (static_cast<unsigned char>(bytes[j]) & 0xc0) == 0x80;
  };
  while (i < bytes.size()) {
    const unsigned char b = bytes[i];
    size_t len = 0;
    if (b < 0x80) {
      len = 1;
    } else if ((b & 0xe0) == 0xc0 && b >= 0xc2) {
      len = cont(i + 1) ? 2 : 0;
    } else if ((b & 0xf0) == 0xe0) {
      len = (cont(i + 1) && cont(i + 2)) ? 3 : 0;
    } else if ((b & 0xf8) == 0xf0 && b <= 0xf4) {
      len = (cont(i + 1) && cont(i + 2) && cont(i + 3)) ? 4 : 0;
    }
    if (len == 0) {
      out += replacement;
      ++i;
    } else {
      out.append(bytes.substr(i, len));
      i += len;
    }
  }
  return out;
}

bool is_ident_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
         c == '_';
}

// "pkg.mod.SomeError" shaped?
bool looks_like_error_class(std::string_view s) {
  if (s.empty()) return false;
  bool start_of_part = true;
  for (char c : s) {
    if (start_of_part) {
      if (!((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_')) return false;
      start_of_part = false;
    } else if (c == '.') {
      start_of_part = true;
    } else if (!is_ident_char(c)) {
      return false;
    }
  }
  return !start_of_part;
}

const char* signal_name(int sig) {
  switch (sig) {
    case SIGSEGV: return "SIGSEGV";
    case SIGABRT: return "SIGABRT";
    case SIGBUS: return "SIGBUS";
    case SIGFPE: return "SIGFPE";
    case SIGILL: return "SIGILL";
    case SIGTERM: return "SIGTERM";
    case SIGINT: return "SIGINT";
    default: return nullptr;
  }
}

}  // namespace

std::string canonicalize_stdout(std::string_view raw_stdout) {
  std::string text = utf8_lossy(raw_stdout);
  // Strip one trailing newline (tolerating \r\n).
  if (!text.empty() && text.back() == '\n') text.pop_back();
  if (!text.empty() && text.back() == '\r') text.pop_back();
  // Strip trailing whitespace per line.
  std::string out;
  out.reserve(text.size());
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    std::string_view line(text.data() + pos,
                          (nl == std::string::npos ? text.size() : nl) - pos);
    while (!line.empty() &&
           (line.back() == ' ' || line.back() == '\t' || line.back() == '\r')) {
      line.remove_suffix(1);
    }
    out.append(line);
    if (nl == std::string::npos) break;
    out.push_back('\n');
    pos = nl + 1;
  }
  return out;
}

std::string parse_error_class(std::string_view raw_stderr) {
  std::string text = utf8_lossy(raw_stderr);
  // Walk lines from the end; the final non-empty line of a Python traceback
  // is "Class: message" or a bare "Class".
  size_t end = text.size();
  while (end > 0) {
    size_t start = text.rfind('\n', end - 1);
    const size_t line_begin = (start == std::string::npos) ? 0 : start + 1;
    std::string_view line(text.data() + line_begin, end - line_begin);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r'))
      line.remove_suffix(1);
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t'))
      line.remove_prefix(1);
    if (!line.empty()) {
      const size_t colon = line.find(':');
      std::string_view head = colon == std::string_view::npos ? line : line.substr(0, colon);
      if (looks_like_error_class(head)) return std::string(head);
      return {};
    }
    if (start == std::string::npos) break;
    end = start;
  }
  return {};
}

ExecOutcome canonicalize_output(std::string_view raw_stdout, int exit_status,
                                Termination reason, std::string_view raw_stderr,
                                int term_signal) {
  switch (reason) {
    case Termination::timed_out:
      return ExecOutcome::timeout();
    case Termination::resource_limit:
      return ExecOutcome::resource_exceeded();
    case Termination::signaled: {
      if (term_signal == SIGKILL || term_signal == SIGXCPU)
        return ExecOutcome::resource_exceeded();
      if (const char* name = signal_name(term_signal))
        return ExecOutcome::error(std::string("Signaled:") + name);
      return ExecOutcome::error("Signaled:" + std::to_string(term_signal));
    }
    case Termination::exited:
      break;
  }
  if (exit_status == 0) return ExecOutcome::value(canonicalize_stdout(raw_stdout));
  std::string cls = parse_error_class(raw_stderr);
  return ExecOutcome::error(cls.empty() ? "NonZeroExit" : cls);
}

std::string ExecOutcome::encode() const {
  switch (kind) {
    case OutcomeKind::value: return "V:" + payload;
    case OutcomeKind::error: return "E:" + payload;
    case OutcomeKind::timeout: return "T";
    case OutcomeKind::resource_exceeded: return "R";
  }
  return {};
}

std::optional<ExecOutcome> ExecOutcome::decode(std::string_view encoded) {
  if (encoded == "T") return ExecOutcome::timeout();
  if (encoded == "R") return ExecOutcome::resource_exceeded();
  if (encoded.starts_with("V:")) return ExecOutcome::value(std::string(encoded.substr(2)));
  if (encoded.starts_with("E:")) return ExecOutcome::error(std::string(encoded.substr(2)));
  return std::nullopt;
}

void ExecConfig::validate() const {
  if (timeout_ms <= 0) throw InputError("ExecConfig: timeout must be > 0");
  if (max_parallel < 0) throw InputError("ExecConfig: max_parallel must be >= 0");
  if (grace_ms < 0) throw InputError("ExecConfig: grace must be >= 0");
}

int ExecConfig::effective_parallel() const {
  if (max_parallel > 0) return max_parallel;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

std::string ExecConfig::outcome_digest(const std::string& resolved_interpreter) const {
  std::ostringstream os;
  os << timeout_ms << '\x1f' << memory_cap_bytes << '\x1f' << cpu_limit_sec << '\x1f'
     << output_cap_bytes << '\x1f' << resolved_interpreter;
  return sha256_hex(os.str());
}

OutcomeMatrix::OutcomeMatrix(std::vector<std::string> sample_ids,
                             std::vector<std::string> test_ids,
                             std::vector<ExecOutcome> cells_row_major, ExecConfig config)
    : sample_ids_(std::move(sample_ids)),
      test_ids_(std::move(test_ids)),
      cells_(std::move(cells_row_major)),
      config_(std::move(config)) {
  if (cells_.size() != sample_ids_.size() * test_ids_.size())
    throw InputError("OutcomeMatrix: cell count does not form a complete grid");
  for (size_t i = 0; i < sample_ids_.size(); ++i) {
    if (!sample_index_.emplace(sample_ids_[i], i).second)
      throw InputError("OutcomeMatrix: duplicate sample_id " + sample_ids_[i]);
  }
  for (size_t j = 0; j < test_ids_.size(); ++j) {
    if (!test_index_.emplace(test_ids_[j], j).second)
      throw InputError("OutcomeMatrix: duplicate test_id " + test_ids_[j]);
  }
}

bool OutcomeMatrix::has_test(const std::string& test_id) const {
  return test_index_.contains(test_id);
}

size_t OutcomeMatrix::test_index(const std::string& test_id) const {
  auto it = test_index_.find(test_id);
  if (it == test_index_.end()) throw InputError("unknown test_id: " + test_id);
  return it->second;
}

size_t OutcomeMatrix::sample_index(const std::string& sample_id) const {
  auto it = sample_index_.find(sample_id);
  if (it == sample_index_.end()) throw InputError("unknown sample_id: " + sample_id);
  return it->second;
}

const ExecOutcome& OutcomeMatrix::at(size_t sample_idx, size_t test_idx) const {
  return cells_[sample_idx * test_ids_.size() + test_idx];
}

const ExecOutcome& OutcomeMatrix::at(const std::string& sample_id,
                                     const std::string& test_id) const {
  return at(sample_index(sample_id), test_index(test_id));
}

}  // namespace refusalgate::sandbox

#include "pdjournal/llmgw.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <thread>

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "pdjournal/errors.hpp"
#include "pdjournal/nlu.hpp"

namespace pdj::llmgw {

namespace {

char ascii_lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::string ascii_lowered(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), ascii_lower);
  return out;
}

// Start offsets of whole-word, case-insensitive occurrences of `needle`,
// ignoring the redaction placeholder itself.
std::vector<std::size_t> find_words(std::string_view haystack, std::string_view needle) {
  std::vector<std::size_t> out;
  if (needle.empty()) return out;
  auto hay = ascii_lowered(haystack);
  auto pat = ascii_lowered(needle);
  for (std::size_t pos = hay.find(pat); pos != std::string::npos; pos = hay.find(pat, pos + 1)) {
    std::size_t end = pos + pat.size();
    bool left_ok = pos == 0 || !word_char(hay[pos - 1]) || !word_char(pat.front());
    bool right_ok = end == hay.size() || !word_char(hay[end]) || !word_char(pat.back());
    if (!left_ok || !right_ok) continue;
    bool placeholder = pos > 0 && hay[pos - 1] == '[' && end < hay.size() && hay[end] == ']' &&
                       hay.compare(pos - 1, kRedactedName.size(), kRedactedName) == 0;
    if (placeholder) continue;
    out.push_back(pos);
  }
  return out;
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

std::string redact(std::string_view text, const std::vector<std::string>& identifiers) {
  std::string out(text);
  for (const auto& id : identifiers) {
    if (text::trim(id).empty()) continue;
    auto hits = find_words(out, id);
    for (auto it = hits.rbegin(); it != hits.rend(); ++it) out.replace(*it, id.size(), kRedactedName);
  }
  return out;
}

bool contains_identifier(std::string_view text, std::string_view identifier) {
  if (text::trim(identifier).empty()) return false;
  return !find_words(text, identifier).empty();
}

void check_redaction(const CompletionRequest& req) {
  for (const auto& id : req.protected_identifiers) {
    if (contains_identifier(req.prompt, id)) {
      throw Error(Errc::RedactionViolation, "prompt for '" + req.purpose + "' contains a protected identifier");
    }
  }
}

std::string Gateway::complete(const CompletionRequest& req) {
  check_redaction(req);
  auto start = std::chrono::steady_clock::now();
  auto out = do_complete(req);
  auto elapsed =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  if (req.deadline_ms > 0 && elapsed > req.deadline_ms) {
    throw Error(Errc::Timeout, name() + " answered after " + std::to_string(elapsed) + " ms");
  }
  return out;
}

MockProvider::MockProvider(std::shared_ptr<const nlu::Lexicon> lexicon,
                           std::shared_ptr<const prompts::IntentPrompt> intent,
                           std::shared_ptr<const prompts::PersonalizationPrompt> personalization,
                           std::shared_ptr<const prompts::ClarificationPrompt> clarification, Options options)
    : lexicon_(std::move(lexicon)),
      intent_(std::move(intent)),
      personalization_(std::move(personalization)),
      clarification_(std::move(clarification)),
      options_(options) {}

MockProvider::MockProvider(std::shared_ptr<const nlu::Lexicon> lexicon,
                           std::shared_ptr<const prompts::IntentPrompt> intent,
                           std::shared_ptr<const prompts::PersonalizationPrompt> personalization,
                           std::shared_ptr<const prompts::ClarificationPrompt> clarification)
    : MockProvider(std::move(lexicon), std::move(intent), std::move(personalization), std::move(clarification),
                   Options{}) {}

std::string MockProvider::do_complete(const CompletionRequest& req) {
  calls_.fetch_add(1);
  bool is_personalization = personalization_ && personalization_->extract_probe(req.prompt).has_value();
  bool delayed = options_.delay_ms > 0 && (!options_.delay_personalization_only || is_personalization);
  if (delayed) {
    int wait = req.deadline_ms > 0 ? std::min(options_.delay_ms, req.deadline_ms) : options_.delay_ms;
    std::this_thread::sleep_for(std::chrono::milliseconds(wait));
    if (req.deadline_ms > 0 && options_.delay_ms > req.deadline_ms) {
      throw Error(Errc::Timeout, "mock exceeded the " + std::to_string(req.deadline_ms) + " ms deadline");
    }
  }
  if (options_.mode == Mode::Fail) {
    throw Error(Errc::ProviderError, "mock configured to fail", options_.fail_status);
  }
  return respond(req);
}

std::string MockProvider::respond(const CompletionRequest& req) const {
  if (intent_) {
    if (auto message = intent_->extract(req.prompt)) {
      if (options_.mode == Mode::Unrelated) return std::string(kUnrelatedText);
      return nlu::pattern_label(*message, *lexicon_);
    }
  }
  if (personalization_) {
    if (auto probe = personalization_->extract_probe(req.prompt)) {
      if (options_.mode == Mode::Unrelated) return std::string(kUnrelatedText);
      std::string body = text::trim(*probe);
      // With retrieved history, mention the first symptom the user reported there.
      if (auto history = personalization_->extract_history(req.prompt)) {
        std::istringstream lines(*history);
        for (std::string line; std::getline(lines, line);) {
          if (line.rfind("User:", 0) != 0) continue;
          auto r = nlu::classify_pattern(line.substr(5), *lexicon_);
          if (r.intent.is(Intent::Kind::Symptom) || r.intent.is(Intent::Kind::Multiple)) {
            return std::string(kRedactedName) + ", you mentioned " + std::string(to_string(r.intent.symptoms().front())) +
                   " before. " + body;
          }
        }
      }
      if (!body.empty()) body[0] = ascii_lower(body[0]);
      return std::string(kRedactedName) + ", " + body;
    }
  }
  if (clarification_) {
    if (auto topic = clarification_->extract_topic(req.prompt)) {
      if (options_.mode == Mode::Unrelated) return std::string(kUnrelatedText);
      return "I am asking about " + text::trim(*topic) + ".";
    }
  }
  throw Error(Errc::ProviderError, "mock does not recognise the prompt", 400);
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(Errc::InvalidArgument, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

ReplayProvider::ReplayProvider(std::filesystem::path fixtures_dir) : dir_(std::move(fixtures_dir)) {}

std::filesystem::path ReplayProvider::fixture_path(std::string_view prompt) const {
  return dir_ / (sha256_hex(prompt) + ".txt");
}

std::string ReplayProvider::do_complete(const CompletionRequest& req) {
  auto path = fixture_path(req.prompt);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::ProviderError, "no replay fixture " + path.filename().string(), 404);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RecordingProvider::RecordingProvider(std::shared_ptr<Gateway> inner, std::filesystem::path fixtures_dir)
    : inner_(std::move(inner)), replay_(fixtures_dir) {
  std::error_code ec;
  std::filesystem::create_directories(fixtures_dir, ec);
}

std::string RecordingProvider::do_complete(const CompletionRequest& req) {
  auto out = inner_->complete(req);
  auto path = replay_.fixture_path(req.prompt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::StorageError, "cannot write fixture " + path.string());
  f << out;
  return out;
}

ObservedGateway::ObservedGateway(std::shared_ptr<Gateway> inner, BusyObserver* observer,
                                 std::function<std::int64_t()> clock_ms)
    : inner_(std::move(inner)), observer_(observer), clock_ms_(clock_ms ? std::move(clock_ms) : now_ms) {}

std::vector<BusySpan> ObservedGateway::spans() const {
  std::lock_guard lock(mu_);
  return spans_;
}

std::string ObservedGateway::do_complete(const CompletionRequest& req) {
  BusySpan span;
  {
    std::lock_guard lock(mu_);
    span.call_id = next_id_++;
  }
  span.purpose = req.purpose;
  span.start_ms = clock_ms_();
  span.outcome = "ok";
  if (observer_) observer_->busy_start(span);

  // Emits the stop notification on every exit path.
  struct StopGuard {
    ObservedGateway& self;
    BusySpan& span;
    ~StopGuard() {
      span.stop_ms = self.clock_ms_();
      {
        std::lock_guard lock(self.mu_);
        self.spans_.push_back(span);
      }
      if (self.observer_) {
        try {
          self.observer_->busy_stop(span);
        } catch (const std::exception& e) {
          spdlog::error("busy observer failed: {}", e.what());
        }
      }
    }
  } guard{*this, span};

  try {
    return inner_->complete(req);
  } catch (const Error& e) {
    span.outcome = std::string(errc_name(e.code()));
    throw;
  } catch (...) {
    span.outcome = "error";
    throw;
  }
}

}  // namespace pdj::llmgw

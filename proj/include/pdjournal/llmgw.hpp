#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "pdjournal/prompts.hpp"

namespace pdj::nlu {
class Lexicon;
}

namespace pdj::llmgw {

struct CompletionRequest {
  std::string prompt;
  int max_tokens = 256;
  double temperature = 0.0;
  int deadline_ms = 3000;
  std::string purpose;  // "intent", "personalize", "clarify"; informational
  // Strings that must not appear in the prompt (display names).
  std::vector<std::string> protected_identifiers;
};

inline constexpr std::string_view kRedactedName = "[name]";

// Whole-word, case-insensitive occurrences of each identifier become "[name]".
std::string redact(std::string_view text, const std::vector<std::string>& identifiers);
bool contains_identifier(std::string_view text, std::string_view identifier);
// Throws Error(RedactionViolation).
void check_redaction(const CompletionRequest& req);

/// Provider-agnostic completion gateway. complete() applies the redaction
/// guard and the deadline for every provider; subclasses implement
/// do_complete() and are expected to honour the deadline cooperatively.
class Gateway {
public:
  virtual ~Gateway() = default;

  // Throws Error(Timeout | ProviderError | RedactionViolation).
  std::string complete(const CompletionRequest& req);
  virtual std::string name() const = 0;

protected:
  virtual std::string do_complete(const CompletionRequest& req) = 0;
};

/// Deterministic offline provider.
///
/// Intent prompts are answered with the pattern classifier's label;
/// personalization prompts with the probe prefixed by "[name],";
/// clarification prompts with a one-line description of the topic.
class MockProvider : public Gateway {
public:
  enum class Mode { Normal, Unrelated, Fail };

  struct Options {
    Mode mode = Mode::Normal;
    int delay_ms = 0;
    bool delay_personalization_only = false;
    int fail_status = 503;
  };

  MockProvider(std::shared_ptr<const nlu::Lexicon> lexicon, std::shared_ptr<const prompts::IntentPrompt> intent,
               std::shared_ptr<const prompts::PersonalizationPrompt> personalization,
               std::shared_ptr<const prompts::ClarificationPrompt> clarification, Options options);
  MockProvider(std::shared_ptr<const nlu::Lexicon> lexicon, std::shared_ptr<const prompts::IntentPrompt> intent,
               std::shared_ptr<const prompts::PersonalizationPrompt> personalization,
               std::shared_ptr<const prompts::ClarificationPrompt> clarification);

  std::string name() const override { return "mock"; }
  std::size_t calls() const { return calls_.load(); }

  static constexpr std::string_view kUnrelatedText = "The museum opens at nine and the gift shop sells postcards.";

protected:
  std::string do_complete(const CompletionRequest& req) override;

private:
  std::string respond(const CompletionRequest& req) const;

  std::shared_ptr<const nlu::Lexicon> lexicon_;
  std::shared_ptr<const prompts::IntentPrompt> intent_;
  std::shared_ptr<const prompts::PersonalizationPrompt> personalization_;
  std::shared_ptr<const prompts::ClarificationPrompt> clarification_;
  Options options_;
  std::atomic<std::size_t> calls_{0};
};

std::string sha256_hex(std::string_view data);

/// Replays recorded completions from `<dir>/<sha256(prompt)>.txt`, byte-exact.
class ReplayProvider : public Gateway {
public:
  explicit ReplayProvider(std::filesystem::path fixtures_dir);
  std::string name() const override { return "replay"; }
  std::filesystem::path fixture_path(std::string_view prompt) const;

protected:
  std::string do_complete(const CompletionRequest& req) override;

private:
  std::filesystem::path dir_;
};

/// Forwards to another gateway and stores each successful completion as a replay fixture.
class RecordingProvider : public Gateway {
public:
  RecordingProvider(std::shared_ptr<Gateway> inner, std::filesystem::path fixtures_dir);
  std::string name() const override { return "recording:" + inner_->name(); }

protected:
  std::string do_complete(const CompletionRequest& req) override;

private:
  std::shared_ptr<Gateway> inner_;
  ReplayProvider replay_;
};

/// Chat-completions style HTTP(S) endpoint.
class HttpProvider : public Gateway {
public:
  struct Config {
    std::string endpoint;  // e.g. https://api.openai.com/v1/chat/completions
    std::string api_key;
    std::string model = "gpt-4";
  };

  explicit HttpProvider(Config config);
  // PDJ_LLM_ENDPOINT, PDJ_LLM_API_KEY, PDJ_LLM_MODEL. Throws ConfigError when the endpoint is unset.
  static Config config_from_env();

  std::string name() const override { return "http"; }

  static std::string build_body(const Config& config, const CompletionRequest& req);
  // Throws ProviderError when the body has no completion text.
  static std::string parse_body(std::string_view body);

protected:
  std::string do_complete(const CompletionRequest& req) override;

private:
  Config config_;
  std::string scheme_host_port_;
  std::string path_;
};

struct BusySpan {
  std::uint64_t call_id = 0;
  std::string purpose;
  std::int64_t start_ms = 0;
  std::int64_t stop_ms = 0;
  std::string outcome;  // "ok" or the error code name
};

class BusyObserver {
public:
  virtual ~BusyObserver() = default;
  virtual void busy_start(const BusySpan& span) = 0;
  virtual void busy_stop(const BusySpan& span) = 0;
};

/// Wraps a gateway so every call is bracketed by busy start/stop
/// notifications, whatever the outcome. Spans are kept for the caller.
class ObservedGateway : public Gateway {
public:
  ObservedGateway(std::shared_ptr<Gateway> inner, BusyObserver* observer,
                  std::function<std::int64_t()> clock_ms);
  std::string name() const override { return inner_->name(); }
  std::vector<BusySpan> spans() const;

protected:
  std::string do_complete(const CompletionRequest& req) override;

private:
  std::shared_ptr<Gateway> inner_;
  BusyObserver* observer_;
  std::function<std::int64_t()> clock_ms_;
  mutable std::mutex mu_;
  std::vector<BusySpan> spans_;
  std::uint64_t next_id_ = 1;
};

}  // namespace pdj::llmgw

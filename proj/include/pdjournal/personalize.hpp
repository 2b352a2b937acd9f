#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pdjournal/domain.hpp"
#include "pdjournal/journal.hpp"
#include "pdjournal/prompts.hpp"

namespace pdj::llmgw {
class Gateway;
}

namespace pdj::personalize {

struct PersonalizeConfig {
  double similarity_threshold = 0.70;
  int latency_ms = 3000;
  std::size_t token_budget = 8192;
  std::size_t k_history = 5;
  double temperature = 0.7;
  int max_tokens = 256;

  static PersonalizeConfig from_json(const json& doc);
  static PersonalizeConfig load(const std::filesystem::path& path);
  json to_json() const;
};

// ceil(whitespace-delimited words * 1.3).
std::size_t estimate_tokens(std::string_view text);

// Cosine of lowercase unigram term-frequency vectors. Both empty -> 1, one empty -> 0.
double similarity(std::string_view a, std::string_view b);

struct PromptBundle {
  std::vector<JournalEntry> conversation_context;  // oldest first
  std::string profile_text;
  std::vector<journal::RetrievalHit> history;  // best first
  std::string probe;
  std::string rendered;
  std::size_t token_count = 0;
  std::size_t dropped_history = 0;
  std::size_t dropped_context = 0;
};

// Profile as shown to the model; the display name is never included.
std::string render_profile(const PatientProfile& profile);
std::string render_turns(const std::vector<JournalEntry>& turns, const std::vector<std::string>& protected_ids);
std::string render_history(const std::vector<journal::RetrievalHit>& hits,
                           const std::vector<std::string>& protected_ids);

// Fills the personalization prompt, dropping the lowest-ranked history and then
// the oldest context turns until the estimate fits. Throws BudgetExceeded when
// the probe and profile alone do not fit.
PromptBundle assemble(const prompts::PersonalizationPrompt& prompt, const std::vector<JournalEntry>& context,
                      const PatientProfile& profile, const std::vector<journal::RetrievalHit>& hits,
                      std::string_view probe, std::size_t budget);

enum class Fallback { None, LowSimilarity, Timeout, ProviderError, BudgetExceeded };
std::string_view to_string(Fallback f);

struct Provenance {
  Fallback fallback = Fallback::None;
  bool personalized() const { return fallback == Fallback::None; }
  std::string tag() const;  // "personalized" or "fallback(<reason>)"
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct PersonalizeResult {
  std::string text;
  Provenance provenance;
  double similarity = 0.0;  // of the candidate completion, 0 when there was none
  std::size_t prompt_tokens = 0;
};

// Never throws for provider problems: any failure yields the canonical probe.
PersonalizeResult personalize(const prompts::PersonalizationPrompt& prompt, std::string_view probe,
                              const std::vector<JournalEntry>& context, const PatientProfile& profile,
                              const std::vector<journal::RetrievalHit>& hits, llmgw::Gateway& gateway,
                              const PersonalizeConfig& cfg);

// Puts the display name back where the model kept the placeholder.
std::string restore_name(std::string_view completion, std::string_view display_name);

}  // namespace pdj::personalize

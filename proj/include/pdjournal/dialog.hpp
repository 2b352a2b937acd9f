#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pdjournal/domain.hpp"
#include "pdjournal/journal.hpp"
#include "pdjournal/llmgw.hpp"
#include "pdjournal/nlu.hpp"
#include "pdjournal/personalize.hpp"
#include "pdjournal/prompts.hpp"

namespace pdj::dialog {

enum class Affect { Positive, Negative, Neutral };
std::string_view to_string(Affect a);

// Keyword valence; negators flip positive words ("not good" is negative).
Affect detect_affect(std::string_view text);

/// Agent phrasing, loaded from dialog_templates.config.
struct Templates {
  std::string greeting;          // uses {name}
  std::string greeting_no_name;
  std::string open_prompt;       // "What would you like to record?"
  std::string anything_else;     // closing confirmation question
  std::string recorded;          // said when a symptom's agenda is complete
  std::string farewell;
  std::string restart;
  std::string acknowledgment;    // anecdotes and unrecognised entries
  std::string symptom_acknowledgment;
  std::string empathy_negative;
  std::string empathy_positive;
  std::string empathy_neutral;
  std::string repair;
  std::string repair_skip_offer;
  std::string refusal;
  std::string topic_switch_confirm;  // uses {symptom}
  std::string clarify_fallback;      // uses {topic}
  std::string clarify_open;
  std::string skip_acknowledgment;
  std::vector<std::string> advice_deny_list;  // phrasing no reply may contain

  static Templates from_json(const json& doc);
  static Templates load(const std::filesystem::path& path);
};

// Case-insensitive deny-list check over a reply.
std::optional<std::string> advice_violation(std::string_view reply, const std::vector<std::string>& deny_list);

struct DialogAction {
  std::vector<std::string> replies;
  // Parallel to replies; set for replies that went through personalization.
  std::vector<std::optional<personalize::Provenance>> provenance;
  std::vector<JournalEntry> writes;
  SessionState next_state;
  std::vector<llmgw::BusySpan> busy;
  bool session_over = false;
  bool restart_requested = false;
  std::optional<nlu::IntentResult> intent;  // classification of the user's utterance
};

/// Per-turn collaborators. All pointers may be null: without a gateway the
/// engine runs pattern-only and never personalizes.
struct TurnContext {
  PatientProfile profile;
  llmgw::Gateway* gateway = nullptr;
  const journal::JournalStore* store = nullptr;
  llmgw::BusyObserver* observer = nullptr;
};

struct EngineOptions {
  bool personalize = true;
  int clarify_deadline_ms = 3000;
  std::function<std::int64_t()> clock_ms;  // wall clock in ms when empty
};

/// Response-generation state machine. handle() is a pure transition on
/// (state, utterance) apart from gateway calls.
class DialogEngine {
public:
  DialogEngine(std::shared_ptr<const nlu::IntentClassifier> classifier, std::shared_ptr<const FollowUpConfig> followups,
               std::shared_ptr<const Templates> templates,
               std::shared_ptr<const prompts::PersonalizationPrompt> personalization_prompt,
               std::shared_ptr<const prompts::ClarificationPrompt> clarification_prompt,
               personalize::PersonalizeConfig personalize_config, EngineOptions options = {});

  DialogAction begin_session(const PatientProfile& profile, std::string session_id) const;

  // Throws SessionClosed when the session has ended.
  DialogAction handle(const SessionState& state, std::string_view utterance, const TurnContext& ctx) const;

  DialogAction terminate(const SessionState& state, const TurnContext& ctx) const;

  // The canonical follow-up for (symptom, topic) before personalization.
  std::string canonical_probe(Symptom s, ProbingTopic t, const PatientProfile& profile) const;

  const nlu::IntentClassifier& classifier() const { return *classifier_; }
  const FollowUpConfig& followups() const { return *followups_; }
  const Templates& templates() const { return *templates_; }
  const personalize::PersonalizeConfig& personalize_config() const { return personalize_config_; }
  std::int64_t now_ms() const;

private:
  class Turn;

  std::shared_ptr<const nlu::IntentClassifier> classifier_;
  std::shared_ptr<const FollowUpConfig> followups_;
  std::shared_ptr<const Templates> templates_;
  std::shared_ptr<const prompts::PersonalizationPrompt> personalization_prompt_;
  std::shared_ptr<const prompts::ClarificationPrompt> clarification_prompt_;
  personalize::PersonalizeConfig personalize_config_;
  EngineOptions options_;
};

}  // namespace pdj::dialog

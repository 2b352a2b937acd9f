#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace pdj {

using json = nlohmann::json;

enum class Symptom : std::uint8_t {
  Tremor,
  Bradykinesia,
  Dizziness,
  Falling,
  Mood,
  Sleeplessness,
  Stiffness,
  Fatigue,
  Dyskinesia,
  Dystonia,
  Balance,
  Pain,
  Weakness,
};

inline constexpr std::array<Symptom, 13> kAllSymptoms = {
    Symptom::Tremor,   Symptom::Bradykinesia, Symptom::Dizziness,  Symptom::Falling,
    Symptom::Mood,     Symptom::Sleeplessness, Symptom::Stiffness, Symptom::Fatigue,
    Symptom::Dyskinesia, Symptom::Dystonia,  Symptom::Balance,    Symptom::Pain,
    Symptom::Weakness,
};

enum class ProbingTopic : std::uint8_t {
  Medication,
  DailyActivity,
  Severity,
  Cooccurrence,
  Duration,
  TimeOfDay,
  Location,
  ActivityAtTime,
  TriggerFactors,
  History,
};

inline constexpr std::array<ProbingTopic, 10> kAllTopics = {
    ProbingTopic::Medication,   ProbingTopic::DailyActivity, ProbingTopic::Severity,
    ProbingTopic::Cooccurrence, ProbingTopic::Duration,      ProbingTopic::TimeOfDay,
    ProbingTopic::Location,     ProbingTopic::ActivityAtTime, ProbingTopic::TriggerFactors,
    ProbingTopic::History,
};

enum class AnecdoteKind : std::uint8_t { Positive, Negative, Medication, Other };
enum class ControlKind : std::uint8_t { Clarify, Skip, Exit, Restart, Affirm, Deny, Confused };
enum class Speaker : std::uint8_t { Patient, Agent };

// Stable serialization identifiers ("tremor", "daily_activity", ...).
std::string_view to_string(Symptom s);
std::string_view to_string(ProbingTopic t);
std::string_view to_string(AnecdoteKind k);
std::string_view to_string(ControlKind k);
std::string_view to_string(Speaker s);
std::optional<Symptom> parse_symptom(std::string_view s);
std::optional<ProbingTopic> parse_topic(std::string_view s);
std::optional<AnecdoteKind> parse_anecdote_kind(std::string_view s);
std::optional<ControlKind> parse_control_kind(std::string_view s);
std::optional<Speaker> parse_speaker(std::string_view s);

/// Classification of one utterance.
///
/// Serialized form is a compact tag: `symptom:tremor`, `multiple:tremor,mood`,
/// `asr`, `none`, `anecdote:positive`, `control:skip`.
class Intent {
public:
  enum class Kind : std::uint8_t { Symptom, Multiple, Asr, None, Anecdote, Control };

  static Intent symptom(Symptom s);
  // Requires at least two distinct symptoms; duplicates are dropped keeping first mention.
  static Intent multiple(const std::vector<Symptom>& symptoms);
  static Intent asr();
  static Intent none();
  static Intent anecdote(AnecdoteKind kind);
  static Intent control(ControlKind kind);

  Kind kind() const noexcept { return kind_; }
  bool is(Kind k) const noexcept { return kind_ == k; }
  bool is_control(ControlKind c) const noexcept { return kind_ == Kind::Control && control_ == c; }
  const std::vector<Symptom>& symptoms() const noexcept { return symptoms_; }
  AnecdoteKind anecdote_kind() const noexcept { return anecdote_; }
  ControlKind control_kind() const noexcept { return control_; }

  std::string tag() const;
  static Intent parse(std::string_view tag);

  friend bool operator==(const Intent&, const Intent&) = default;

private:
  Intent() = default;
  Kind kind_ = Kind::None;
  std::vector<Symptom> symptoms_;
  AnecdoteKind anecdote_ = AnecdoteKind::Other;
  ControlKind control_ = ControlKind::Affirm;
};

struct Medication {
  std::string name;
  std::string schedule_note;
  friend bool operator==(const Medication&, const Medication&) = default;
};

struct PatientProfile {
  std::string patient_id;
  std::string display_name;  // local only; redacted before any provider call
  std::vector<Medication> medications;
  std::vector<std::string> daily_activities;
  std::vector<std::string> challenges;
  int version = 1;
  friend bool operator==(const PatientProfile&, const PatientProfile&) = default;
};

struct JournalEntry {
  std::uint64_t entry_id = 0;  // 0 until persisted
  std::string patient_id;
  std::string session_id;
  std::int64_t timestamp_ms = 0;
  Speaker speaker = Speaker::Patient;
  std::string text;
  std::optional<Intent> intent_tag;
  std::optional<ProbingTopic> topic_tag;
  friend bool operator==(const JournalEntry&, const JournalEntry&) = default;
};

enum class Phase : std::uint8_t {
  Greeting,
  OpenPrompt,
  InFollowups,
  AwaitingTopicSwitchConfirm,
  ClosingConfirm,
  Ended,
};
std::string_view to_string(Phase p);

struct ActiveRule {
  Symptom symptom = Symptom::Tremor;
  std::deque<ProbingTopic> remaining_topics;  // front is the pending topic
  std::map<ProbingTopic, std::string> answered;
  std::string report;      // the clause that activated the rule
  std::string last_asked;  // delivered text of the most recent question for this rule
};

struct SessionState {
  std::string session_id;
  std::string patient_id;
  std::vector<ActiveRule> rule_stack;  // back() is the top
  Phase phase = Phase::Greeting;
  int consecutive_repairs = 0;
  std::vector<JournalEntry> transcript;
  std::string last_question;                // exact text of the last question asked
  std::vector<Symptom> pending_switch;      // symptoms awaiting topic-switch confirmation

  const ActiveRule* top() const { return rule_stack.empty() ? nullptr : &rule_stack.back(); }
  bool has_rule_for(Symptom s) const;
};

/// Per-symptom probing agenda plus prompt templates.
struct FollowUpConfig {
  std::map<Symptom, std::vector<ProbingTopic>> topics;
  std::map<std::pair<Symptom, ProbingTopic>, std::vector<std::string>> templates;
  std::map<Symptom, std::string> labels;                // "{symptom}" rendering
  std::map<ProbingTopic, std::string> topic_descriptions;  // used for clarifications
};

FollowUpConfig parse_followup_config(const json& doc);
FollowUpConfig load_followup_config(const std::filesystem::path& path);
json followup_config_to_json(const FollowUpConfig& cfg);

// Returns every invariant violation; empty means valid.
std::vector<std::string> validate_config(const FollowUpConfig& cfg);

using TemplateVars = std::map<std::string, std::string, std::less<>>;

// Replaces `{key}` placeholders. Unresolved placeholders render empty and log a warning.
std::string render_template(std::string_view tpl, const TemplateVars& vars);

std::string default_data_dir();

json to_json(const PatientProfile& p);
PatientProfile profile_from_json(const json& j);
json to_json(const JournalEntry& e);
JournalEntry entry_from_json(const json& j);

json read_json_file(const std::filesystem::path& path);

}  // namespace pdj

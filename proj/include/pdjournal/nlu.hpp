#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pdjournal/domain.hpp"
#include "pdjournal/prompts.hpp"
#include "pdjournal/text.hpp"

namespace pdj::llmgw {
class Gateway;
}

namespace pdj::nlu {

using text::TokenSequence;
using text::tokenize;
using prompts::IntentPrompt;

enum class PhraseClass : std::uint8_t { Symptom, Control, Anecdote, Advice, Answer };

struct PhraseHit {
  PhraseClass cls;
  std::uint8_t value;  // Symptom / ControlKind / AnecdoteKind, 0 otherwise
  std::size_t first;   // token index
  std::size_t count;   // tokens covered
  bool negated = false;

  Symptom symptom() const { return static_cast<Symptom>(value); }
  ControlKind control() const { return static_cast<ControlKind>(value); }
  AnecdoteKind anecdote() const { return static_cast<AnecdoteKind>(value); }
};

/// Trigger phrases for symptoms (medical and lay terms), conversational
/// controls, anecdotes and advice requests. Matching is token based, longest
/// phrase first, non-overlapping.
class Lexicon {
public:
  static Lexicon from_json(const json& doc);
  static Lexicon load(const std::filesystem::path& path);
  json to_json() const;

  // Empty when valid.
  std::vector<std::string> validate() const;

  const std::map<Symptom, std::set<std::string>>& symptom_phrases() const { return symptoms_; }
  const std::map<ControlKind, std::set<std::string>>& control_phrases() const { return controls_; }
  const std::map<AnecdoteKind, std::set<std::string>>& anecdote_phrases() const { return anecdotes_; }
  const std::set<std::string>& advice_phrases() const { return advice_; }
  const std::set<std::string>& medication_vocabulary() const { return medications_; }

  void add_symptom_phrase(Symptom s, const std::string& phrase);
  void remove_symptom(Symptom s);

  std::vector<PhraseHit> scan(const TokenSequence& seq) const;

  // Lowercased tokens of every phrase in the lexicon, used to tell known words from OOV ones.
  bool known_word(std::string_view lower_token) const;

private:
  struct Target {
    PhraseClass cls;
    std::uint8_t value;
  };
  void rebuild_index();
  void index_phrase(const std::string& phrase, Target t);

  std::map<Symptom, std::set<std::string>> symptoms_;
  std::map<ControlKind, std::set<std::string>> controls_;
  std::map<AnecdoteKind, std::set<std::string>> anecdotes_;
  std::set<std::string> advice_;
  std::set<std::string> answers_;
  std::set<std::string> medications_;
  std::set<std::string> negators_;

  std::unordered_map<std::string, Target> index_;  // space-joined phrase tokens -> target
  std::set<std::string, std::less<>> vocabulary_;
  std::size_t max_phrase_tokens_ = 1;
  std::vector<std::string> index_conflicts_;
};

enum class Provider : std::uint8_t { Pattern, LanguageModel };
std::string_view to_string(Provider p);

struct IntentResult {
  Intent intent = Intent::none();
  double confidence = 0.0;
  Provider provider = Provider::Pattern;
  std::vector<Symptom> sub_symptoms;  // non-empty iff intent is multiple
  std::vector<ControlKind> controls;  // every control phrase seen, in order
  bool seeks_advice = false;
};

inline constexpr double kMinPatternConfidence = 0.05;
inline constexpr double kMaxPatternConfidence = 0.95;
// Pattern results below this confidence are treated as not understood.
inline constexpr double kRepairThreshold = 0.20;

IntentResult classify_pattern(std::string_view text, const Lexicon& lexicon);

// ASR damage, or a pattern result too weak to act on.
bool needs_repair(const IntentResult& r);

// Heuristic for speech-recognition damage: dangling endings, near-empty
// utterances, and split-up misspellings of medication names.
bool detect_asr(std::string_view text, const Lexicon& lexicon, const std::vector<std::string>& medication_names = {});

// Pattern classifier plus ASR heuristic, expressed as a single label in the
// vocabulary of the intent prompt ("tremor", ..., "insomnia", "multiple", "asr", "none").
std::string pattern_label(std::string_view text, const Lexicon& lexicon,
                          const std::vector<std::string>& medication_names = {});

// Maps a model reply to an intent label; nullopt when the label is not recognised.
std::optional<Intent> parse_label(std::string_view reply);

struct Clause {
  Symptom symptom;
  std::string text;
  friend bool operator==(const Clause&, const Clause&) = default;
};

std::vector<Clause> split_bulk(std::string_view text, const Lexicon& lexicon);

bool seeks_advice(std::string_view text, const Lexicon& lexicon);

struct LlmOptions {
  int deadline_ms = 3000;
  int max_tokens = 16;
  std::vector<std::string> protected_identifiers;
};

// Throws Error(ProviderUnavailable) or Error(UnparseableLabel).
IntentResult classify_llm(std::string_view text, llmgw::Gateway& gateway, const IntentPrompt& prompt,
                          const Lexicon& lexicon, const LlmOptions& options = {});

/// Composed classifier: deterministic controls, then the language model when a
/// gateway is given, falling back to the pattern path on any model failure.
class IntentClassifier {
public:
  IntentClassifier(std::shared_ptr<const Lexicon> lexicon, std::shared_ptr<const IntentPrompt> prompt,
                   LlmOptions options = {});

  // `medication_names` come from the profile; `protected_identifiers` are redacted before any model call.
  IntentResult classify(std::string_view text, llmgw::Gateway* gateway,
                        const std::vector<std::string>& medication_names = {},
                        const std::vector<std::string>& protected_identifiers = {}) const;

  const Lexicon& lexicon() const { return *lexicon_; }
  const IntentPrompt& prompt() const { return *prompt_; }

private:
  std::shared_ptr<const Lexicon> lexicon_;
  std::shared_ptr<const IntentPrompt> prompt_;
  LlmOptions options_;
};

}  // namespace pdj::nlu

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pdjournal/dialog.hpp"
#include "pdjournal/domain.hpp"
#include "pdjournal/journal.hpp"
#include "pdjournal/llmgw.hpp"
#include "pdjournal/nlu.hpp"

namespace pdj::eval {

struct ScriptTurn {
  std::string utterance;
  std::optional<Intent> gold_intent;
};

struct Noise {
  double asr_rate = 0.0;
  double bulk_merge_rate = 0.0;
  std::uint64_t seed = 0;
};

struct PatientScript {
  std::string name;
  PatientProfile profile;
  std::vector<std::vector<ScriptTurn>> sessions;  // one conversation per element
  Noise noise;
};

PatientScript script_from_json(const json& doc);
json to_json(const PatientScript& script);
// A file holds one script object or {"scripts": [...]}.
std::vector<PatientScript> load_scripts(const std::filesystem::path& path);

/// Phonetic substitutions applied to simulate speech-recognition damage.
class ConfusionTable {
public:
  static ConfusionTable from_json(const json& doc);
  static ConfusionTable load(const std::filesystem::path& path);

  // Replaces every known term (whole words, case-insensitive, longest first).
  std::string corrupt(std::string_view text) const;
  bool applies(std::string_view text) const;

private:
  std::vector<std::pair<std::string, std::string>> entries_;  // longest source first
};

// Uniform [0, 1) draw with a fixed bit recipe, identical on every platform.
double uniform01(std::mt19937_64& rng);

struct NoisyTurn {
  std::string utterance;
  std::string original;
  std::vector<std::size_t> source_turns;   // indices into the scripted session
  std::optional<Intent> expected_intent;   // gold of the source turn(s)
  bool asr_corrupted = false;
};

// Gold for two turns spoken as one.
std::optional<Intent> merged_gold(const std::optional<Intent>& a, const std::optional<Intent>& b);

// Applies bulk merging, then ASR corruption, to each session under the script's seed.
std::vector<std::vector<NoisyTurn>> apply_noise(const PatientScript& script, const ConfusionTable& table);

struct TurnLog {
  std::size_t session_index = 0;
  std::string session_id;
  NoisyTurn turn;
  std::string predicted;  // intent tag
  std::string provider;
  double confidence = 0.0;
  std::vector<std::string> replies;
  std::vector<std::string> provenance;  // per reply; empty string when untagged
  bool session_over = false;
};

struct SessionOpen {
  std::size_t session_index = 0;
  std::string session_id;
  std::string greeting;
};

struct SimLog {
  std::string patient;
  std::vector<SessionOpen> sessions;
  std::vector<TurnLog> turns;
};

json to_json(const SimLog& log);
SimLog simlog_from_json(const json& doc);

// Deterministic transcript text used for golden comparisons.
std::string render_transcript(const SimLog& log);

struct SimEnvironment {
  const dialog::DialogEngine* engine = nullptr;
  llmgw::Gateway* gateway = nullptr;
  journal::JournalStore* store = nullptr;
  const ConfusionTable* confusions = nullptr;
};

// Plays the script through the pipeline. Throws Error naming the failing turn.
SimLog simulate(const PatientScript& script, const SimEnvironment& env);

struct PatientMetrics {
  std::string patient;
  std::size_t labeled_turns = 0;
  std::size_t correct_intents = 0;
  double intent_accuracy = 0.0;
  std::size_t personalized_count = 0;
  std::size_t total_responses = 0;
  double personalization_rate = 0.0;
};

struct Aggregate {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation
};

struct MetricsReport {
  std::vector<PatientMetrics> patients;
  Aggregate intent_accuracy;
  Aggregate personalization_rate;
};

double round2(double x);
// round(personalized / total, 2); throws InvalidArgument when total is 0.
double personalization_rate(std::size_t personalized, std::size_t total);
// Mean and sample SD, both rounded to 2 decimals.
Aggregate aggregate(const std::vector<double>& values);

// Multiple-symptom intents compare as sets.
bool same_intent(const Intent& a, const Intent& b);

using GoldLabels = std::map<std::string, std::vector<std::optional<Intent>>>;  // patient -> per logged turn
GoldLabels gold_from_json(const json& doc);
GoldLabels gold_from_logs(const std::vector<SimLog>& logs);

// Throws AlignmentError when a patient's gold list does not match its logged turns.
MetricsReport compute_metrics(const std::vector<SimLog>& logs, const GoldLabels& gold);
json to_json(const MetricsReport& report);
std::string render_table(const MetricsReport& report);

struct GoldenResult {
  bool pass = false;
  std::size_t line = 0;  // 1-based first divergent line
  std::string expected;
  std::string actual;
};

// Byte-exact comparison. Throws InvalidArgument when a file is missing.
GoldenResult golden_check(const std::filesystem::path& transcript, const std::filesystem::path& expected);
GoldenResult compare_text(std::string_view actual, std::string_view expected);

struct IntentCase {
  std::string text;
  Intent label;
  bool exemplar = false;
  std::string category;
};

std::vector<IntentCase> load_intent_corpus(const std::filesystem::path& path);

struct IntentFailure {
  std::string text;
  std::string expected;
  std::string predicted;
  bool exemplar = false;
};

struct IntentEvalReport {
  std::size_t total = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  std::size_t exemplars = 0;
  std::size_t exemplar_errors = 0;
  std::map<std::string, std::pair<std::size_t, std::size_t>> by_category;  // category -> (correct, total)
  std::vector<IntentFailure> failures;
};

IntentEvalReport evaluate_intents(const std::vector<IntentCase>& corpus, const nlu::IntentClassifier& classifier,
                                  llmgw::Gateway* gateway);
json to_json(const IntentEvalReport& report);
std::string render_table(const IntentEvalReport& report);

// Relevance coding sheet: each agent reply paired with the user turn it answered.
json relevance_worksheet(const SimLog& log);
// Fraction of rows whose `field` ("system_relevant" or "participant_relevant") is coded 1;
// uncoded rows are ignored. nullopt when nothing is coded.
std::optional<double> relevance_rate(const json& worksheet, std::string_view field = "system_relevant");

}  // namespace pdj::eval

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pdjournal/dialog.hpp"
#include "pdjournal/journal.hpp"
#include "pdjournal/llmgw.hpp"
#include "pdjournal/nlu.hpp"
#include "pdjournal/personalize.hpp"
#include "pdjournal/prompts.hpp"

namespace pdj::service {

/// Every configuration file the engine needs, loaded from one data directory.
struct Assets {
  std::shared_ptr<const nlu::Lexicon> lexicon;
  std::shared_ptr<const prompts::IntentPrompt> intent_prompt;
  std::shared_ptr<const prompts::PersonalizationPrompt> personalization_prompt;
  std::shared_ptr<const prompts::ClarificationPrompt> clarification_prompt;
  std::shared_ptr<const FollowUpConfig> followups;
  std::shared_ptr<const dialog::Templates> templates;
  personalize::PersonalizeConfig personalize_config;

  // Throws ConfigError naming the offending file.
  static Assets load(const std::filesystem::path& data_dir);
};

std::shared_ptr<dialog::DialogEngine> make_engine(const Assets& assets, dialog::EngineOptions options = {},
                                                  nlu::LlmOptions llm = {});
std::shared_ptr<llmgw::MockProvider> make_mock(const Assets& assets, llmgw::MockProvider::Options options = {});

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir = "var";
  std::string provider = "mock";  // mock | replay | record | http
  std::filesystem::path fixtures_dir = "fixtures/llm";
  std::string bearer_token;       // empty disables authentication
  int heartbeat_ms = 15000;
  int intent_deadline_ms = 3000;

  static ServiceConfig from_json(const json& doc);
  static ServiceConfig load(const std::filesystem::path& path);
};

// Provider selected by name; credentials for "http" and "record" come from the environment.
std::shared_ptr<llmgw::Gateway> make_gateway(const ServiceConfig& config, const Assets& assets);

struct Event {
  std::uint64_t id = 0;
  std::string type;  // busy_start | busy_stop | reply | session_over
  json data;
};

/// Ordered, replayable event history of one session.
class EventLog {
public:
  std::uint64_t publish(std::string type, json data);
  // Events with id > after_id; waits up to `timeout` for the first one.
  std::vector<Event> wait_after(std::uint64_t after_id, std::chrono::milliseconds timeout) const;
  std::vector<Event> snapshot() const;
  void close();
  bool closed() const;
  std::uint64_t last_id() const;

private:
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::vector<Event> events_;
  bool closed_ = false;
};

struct ReplyProvenance {
  std::size_t reply_index = 0;
  personalize::Provenance provenance;
};

struct TurnResponse {
  std::string session_id;
  std::uint64_t turn_id = 0;
  std::vector<std::string> replies;
  std::vector<ReplyProvenance> provenance;
  bool session_over = false;
  std::optional<std::string> next_session_id;  // set after "restart"
  std::optional<std::string> next_greeting;
  std::optional<nlu::IntentResult> intent;
};

json to_json(const TurnResponse& r);

struct SessionStart {
  std::string session_id;
  std::string greeting;
};

/// Transport-independent session lifecycle and turn handling.
class SessionManager {
public:
  SessionManager(std::shared_ptr<journal::JournalStore> store, std::shared_ptr<const dialog::DialogEngine> engine,
                 std::shared_ptr<llmgw::Gateway> gateway);

  PatientProfile put_profile(PatientProfile profile);
  PatientProfile profile(std::string_view patient_id) const;
  std::vector<JournalEntry> journal(std::string_view patient_id, std::int64_t since_ms) const;

  // Throws UnknownPatient.
  SessionStart start_session(std::string_view patient_id);
  // Throws UnknownSession, SessionClosed, ConcurrentTurn, StorageError.
  TurnResponse post_message(std::string_view session_id, std::string_view text);
  // Throws UnknownSession.
  std::shared_ptr<EventLog> events(std::string_view session_id) const;
  SessionState state(std::string_view session_id) const;

  // Closes every event stream so long-lived readers return.
  void shutdown();

  journal::JournalStore& store() { return *store_; }
  const dialog::DialogEngine& engine() const { return *engine_; }

private:
  struct Session {
    std::mutex turn_mu;
    mutable std::mutex state_mu;
    SessionState state;
    std::shared_ptr<EventLog> events = std::make_shared<EventLog>();
    std::uint64_t turns = 0;
  };

  std::shared_ptr<Session> find(std::string_view session_id) const;
  std::string new_session_id();
  SessionStart open(const PatientProfile& profile);

  std::shared_ptr<journal::JournalStore> store_;
  std::shared_ptr<const dialog::DialogEngine> engine_;
  std::shared_ptr<llmgw::Gateway> gateway_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>, std::less<>> sessions_;
};

}  // namespace pdj::service

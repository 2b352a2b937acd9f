#include "pdjournal/session.hpp"

#include <random>

#include <spdlog/spdlog.h>

#include "pdjournal/errors.hpp"

namespace fs = std::filesystem;

namespace pdj::service {

Assets Assets::load(const fs::path& dir) {
  Assets a;
  auto lexicon = std::make_shared<nlu::Lexicon>(nlu::Lexicon::load(dir / "lexicon.config"));
  if (auto problems = lexicon->validate(); !problems.empty()) {
    throw Error(Errc::ConfigError, "lexicon.config: " + problems.front());
  }
  a.lexicon = std::move(lexicon);
  a.intent_prompt = std::make_shared<prompts::IntentPrompt>(prompts::IntentPrompt::load(dir / "prompts" / "intent.txt"));
  a.personalization_prompt = std::make_shared<prompts::PersonalizationPrompt>(
      prompts::PersonalizationPrompt::load(dir / "prompts" / "personalization.txt"));
  a.clarification_prompt = std::make_shared<prompts::ClarificationPrompt>(
      prompts::ClarificationPrompt::load(dir / "prompts" / "clarification.txt"));
  auto followups = std::make_shared<FollowUpConfig>(load_followup_config(dir / "followups.config"));
  if (auto problems = validate_config(*followups); !problems.empty()) {
    throw Error(Errc::ConfigError, "followups.config: " + problems.front());
  }
  a.followups = std::move(followups);
  a.templates = std::make_shared<dialog::Templates>(dialog::Templates::load(dir / "dialog_templates.config"));
  a.personalize_config = personalize::PersonalizeConfig::load(dir / "personalize.config");
  return a;
}

std::shared_ptr<dialog::DialogEngine> make_engine(const Assets& assets, dialog::EngineOptions options,
                                                  nlu::LlmOptions llm) {
  auto classifier = std::make_shared<nlu::IntentClassifier>(assets.lexicon, assets.intent_prompt, std::move(llm));
  return std::make_shared<dialog::DialogEngine>(classifier, assets.followups, assets.templates,
                                                assets.personalization_prompt, assets.clarification_prompt,
                                                assets.personalize_config, std::move(options));
}

std::shared_ptr<llmgw::MockProvider> make_mock(const Assets& assets, llmgw::MockProvider::Options options) {
  return std::make_shared<llmgw::MockProvider>(assets.lexicon, assets.intent_prompt, assets.personalization_prompt,
                                               assets.clarification_prompt, options);
}

ServiceConfig ServiceConfig::from_json(const json& doc) {
  ServiceConfig c;
  try {
    c.host = doc.value("host", c.host);
    c.port = doc.value("port", c.port);
    c.data_dir = doc.value("data_dir", c.data_dir.string());
    c.provider = doc.value("provider", c.provider);
    c.fixtures_dir = doc.value("fixtures_dir", c.fixtures_dir.string());
    c.bearer_token = doc.value("bearer_token", c.bearer_token);
    c.heartbeat_ms = doc.value("heartbeat_ms", c.heartbeat_ms);
    c.intent_deadline_ms = doc.value("intent_deadline_ms", c.intent_deadline_ms);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("server config: ") + e.what());
  }
  if (c.port < 0 || c.port > 65535) throw Error(Errc::ConfigError, "port out of range");
  if (c.heartbeat_ms <= 0) throw Error(Errc::ConfigError, "heartbeat_ms must be positive");
  return c;
}

ServiceConfig ServiceConfig::load(const fs::path& path) { return from_json(read_json_file(path)); }

std::shared_ptr<llmgw::Gateway> make_gateway(const ServiceConfig& config, const Assets& assets) {
  if (config.provider == "mock") return make_mock(assets);
  if (config.provider == "replay") return std::make_shared<llmgw::ReplayProvider>(config.fixtures_dir);
  if (config.provider == "http") return std::make_shared<llmgw::HttpProvider>(llmgw::HttpProvider::config_from_env());
  if (config.provider == "record") {
    auto inner = std::make_shared<llmgw::HttpProvider>(llmgw::HttpProvider::config_from_env());
    return std::make_shared<llmgw::RecordingProvider>(inner, config.fixtures_dir);
  }
  if (config.provider == "none") return nullptr;
  throw Error(Errc::ConfigError, "unknown provider '" + config.provider + "'");
}

std::uint64_t EventLog::publish(std::string type, json data) {
  std::uint64_t id;
  {
    std::lock_guard lock(mu_);
    id = events_.size() + 1;
    events_.push_back({id, std::move(type), std::move(data)});
  }
  cv_.notify_all();
  return id;
}

std::vector<Event> EventLog::wait_after(std::uint64_t after_id, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return events_.size() > after_id || closed_; });
  if (events_.size() <= after_id) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(after_id), events_.end()};
}

std::vector<Event> EventLog::snapshot() const {
  std::lock_guard lock(mu_);
  return events_;
}

void EventLog::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool EventLog::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

std::uint64_t EventLog::last_id() const {
  std::lock_guard lock(mu_);
  return events_.size();
}

json to_json(const TurnResponse& r) {
  json prov = json::array();
  for (const auto& p : r.provenance) prov.push_back({{"reply_index", p.reply_index}, {"provenance", p.provenance.tag()}});
  json j = {{"session_id", r.session_id},
            {"turn_id", r.turn_id},
            {"replies", r.replies},
            {"provenance", prov},
            {"session_over", r.session_over}};
  if (r.next_session_id) j["next_session_id"] = *r.next_session_id;
  if (r.next_greeting) j["next_greeting"] = *r.next_greeting;
  if (r.intent) {
    j["intent"] = {{"tag", r.intent->intent.tag()},
                   {"provider", nlu::to_string(r.intent->provider)},
                   {"confidence", r.intent->confidence}};
  }
  return j;
}

namespace {

// Forwards busy notifications to the session's event stream as they happen.
class EventObserver : public llmgw::BusyObserver {
public:
  explicit EventObserver(std::shared_ptr<EventLog> log) : log_(std::move(log)) {}
  void busy_start(const llmgw::BusySpan& span) override {
    log_->publish("busy_start", {{"call_id", span.call_id}, {"purpose", span.purpose}});
  }
  void busy_stop(const llmgw::BusySpan& span) override {
    log_->publish("busy_stop", {{"call_id", span.call_id}, {"purpose", span.purpose}, {"outcome", span.outcome}});
  }

private:
  std::shared_ptr<EventLog> log_;
};

}  // namespace

SessionManager::SessionManager(std::shared_ptr<journal::JournalStore> store,
                               std::shared_ptr<const dialog::DialogEngine> engine,
                               std::shared_ptr<llmgw::Gateway> gateway)
    : store_(std::move(store)), engine_(std::move(engine)), gateway_(std::move(gateway)) {
  if (!store_ || !engine_) throw Error(Errc::InvalidArgument, "session manager needs a store and an engine");
}

PatientProfile SessionManager::put_profile(PatientProfile profile) { return store_->put_profile(std::move(profile)); }

PatientProfile SessionManager::profile(std::string_view patient_id) const { return store_->profile(patient_id); }

std::vector<JournalEntry> SessionManager::journal(std::string_view patient_id, std::int64_t since_ms) const {
  return store_->entries_since(patient_id, since_ms);
}

std::string SessionManager::new_session_id() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  static constexpr char kHex[] = "0123456789abcdef";
  std::string id = "s-";
  for (int i = 0; i < 2; ++i) {
    auto v = rng();
    for (int k = 0; k < 16; ++k) id.push_back(kHex[(v >> (k * 4)) & 0xF]);
  }
  return id;
}

SessionStart SessionManager::open(const PatientProfile& profile) {
  auto session = std::make_shared<Session>();
  std::string id;
  {
    std::lock_guard lock(mu_);
    do {
      id = new_session_id();
    } while (sessions_.count(id));
  }
  auto action = engine_->begin_session(profile, id);
  auto ids = store_->append_batch(action.writes);
  for (std::size_t i = 0; i < ids.size(); ++i) action.next_state.transcript[i].entry_id = ids[i];
  session->state = std::move(action.next_state);
  for (const auto& reply : action.replies) session->events->publish("reply", {{"text", reply}, {"turn_id", 0}});
  {
    std::lock_guard lock(mu_);
    sessions_[id] = session;
  }
  return {id, action.replies.front()};
}

SessionStart SessionManager::start_session(std::string_view patient_id) { return open(store_->profile(patient_id)); }

std::shared_ptr<SessionManager::Session> SessionManager::find(std::string_view session_id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Error(Errc::UnknownSession, "unknown session '" + std::string(session_id) + "'");
  return it->second;
}

TurnResponse SessionManager::post_message(std::string_view session_id, std::string_view text) {
  auto session = find(session_id);
  std::unique_lock turn(session->turn_mu, std::try_to_lock);
  if (!turn.owns_lock()) throw Error(Errc::ConcurrentTurn, "a turn is already in progress");

  SessionState state;
  {
    std::lock_guard lock(session->state_mu);
    state = session->state;
  }
  if (state.phase == Phase::Ended) throw Error(Errc::SessionClosed, "session has ended");

  auto profile = store_->profile(state.patient_id);
  EventObserver observer(session->events);
  dialog::TurnContext ctx{profile, gateway_.get(), store_.get(), &observer};
  auto action = engine_->handle(state, text, ctx);

  // Persist the whole turn before the new state becomes visible.
  auto ids = store_->append_batch(action.writes);
  auto& transcript = action.next_state.transcript;
  const auto first = transcript.size() - ids.size();
  for (std::size_t i = 0; i < ids.size(); ++i) transcript[first + i].entry_id = ids[i];

  TurnResponse resp;
  resp.session_id = std::string(session_id);
  resp.turn_id = ++session->turns;
  resp.replies = action.replies;
  resp.session_over = action.session_over;
  resp.intent = action.intent;
  for (std::size_t i = 0; i < action.provenance.size(); ++i) {
    if (action.provenance[i]) resp.provenance.push_back({i, *action.provenance[i]});
  }
  {
    std::lock_guard lock(session->state_mu);
    session->state = std::move(action.next_state);
  }

  for (std::size_t i = 0; i < resp.replies.size(); ++i) {
    json data = {{"text", resp.replies[i]}, {"turn_id", resp.turn_id}, {"reply_index", i}};
    if (action.provenance[i]) data["provenance"] = action.provenance[i]->tag();
    session->events->publish("reply", std::move(data));
  }
  if (action.restart_requested) {
    auto next = open(profile);
    resp.next_session_id = next.session_id;
    resp.next_greeting = next.greeting;
  }
  if (resp.session_over) {
    json data = {{"turn_id", resp.turn_id}};
    if (resp.next_session_id) data["next_session_id"] = *resp.next_session_id;
    session->events->publish("session_over", std::move(data));
    session->events->close();
  }
  return resp;
}

std::shared_ptr<EventLog> SessionManager::events(std::string_view session_id) const { return find(session_id)->events; }

SessionState SessionManager::state(std::string_view session_id) const {
  auto s = find(session_id);
  std::lock_guard lock(s->state_mu);
  return s->state;
}

void SessionManager::shutdown() {
  std::lock_guard lock(mu_);
  for (auto& [_, s] : sessions_) s->events->close();
}

}  // namespace pdj::service

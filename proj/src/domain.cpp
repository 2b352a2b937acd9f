#include "pdjournal/domain.hpp"

#include <cstdlib>
#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "pdjournal/errors.hpp"

namespace pdj {

namespace {

constexpr std::array<std::string_view, 13> kSymptomNames = {
    "tremor",     "bradykinesia", "dizziness", "falling", "mood",    "sleeplessness", "stiffness",
    "fatigue",    "dyskinesia",   "dystonia",  "balance", "pain",    "weakness",
};

constexpr std::array<std::string_view, 10> kTopicNames = {
    "medication", "daily_activity", "severity",         "cooccurrence",    "duration",
    "time_of_day", "location",      "activity_at_time", "trigger_factors", "history",
};

constexpr std::array<std::string_view, 4> kAnecdoteNames = {"positive", "negative", "medication",
                                                            "other"};
constexpr std::array<std::string_view, 7> kControlNames = {
    "clarify", "skip", "exit", "restart", "affirm", "deny", "confused"};

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<std::string_view, N>& names, std::string_view s) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<E>(i);
  }
  return std::nullopt;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string_view to_string(Symptom s) { return kSymptomNames[static_cast<std::size_t>(s)]; }
std::string_view to_string(ProbingTopic t) { return kTopicNames[static_cast<std::size_t>(t)]; }
std::string_view to_string(AnecdoteKind k) { return kAnecdoteNames[static_cast<std::size_t>(k)]; }
std::string_view to_string(ControlKind k) { return kControlNames[static_cast<std::size_t>(k)]; }
std::string_view to_string(Speaker s) { return s == Speaker::Patient ? "patient" : "agent"; }

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::Greeting: return "greeting";
    case Phase::OpenPrompt: return "open_prompt";
    case Phase::InFollowups: return "in_followups";
    case Phase::AwaitingTopicSwitchConfirm: return "awaiting_topic_switch_confirm";
    case Phase::ClosingConfirm: return "closing_confirm";
    case Phase::Ended: return "ended";
  }
  return "ended";
}

std::optional<Symptom> parse_symptom(std::string_view s) { return lookup<Symptom>(kSymptomNames, s); }
std::optional<ProbingTopic> parse_topic(std::string_view s) { return lookup<ProbingTopic>(kTopicNames, s); }
std::optional<AnecdoteKind> parse_anecdote_kind(std::string_view s) {
  return lookup<AnecdoteKind>(kAnecdoteNames, s);
}
std::optional<ControlKind> parse_control_kind(std::string_view s) {
  return lookup<ControlKind>(kControlNames, s);
}
std::optional<Speaker> parse_speaker(std::string_view s) {
  if (s == "patient") return Speaker::Patient;
  if (s == "agent") return Speaker::Agent;
  return std::nullopt;
}

// ---- Intent ----

Intent Intent::symptom(Symptom s) {
  Intent i;
  i.kind_ = Kind::Symptom;
  i.symptoms_ = {s};
  return i;
}

Intent Intent::multiple(const std::vector<Symptom>& symptoms) {
  Intent i;
  i.kind_ = Kind::Multiple;
  for (auto s : symptoms) {
    if (std::find(i.symptoms_.begin(), i.symptoms_.end(), s) == i.symptoms_.end()) i.symptoms_.push_back(s);
  }
  if (i.symptoms_.size() < 2) {
    throw Error(Errc::InvalidArgument, "multiple intent needs at least two distinct symptoms");
  }
  return i;
}

Intent Intent::asr() {
  Intent i;
  i.kind_ = Kind::Asr;
  return i;
}

Intent Intent::none() { return Intent{}; }

Intent Intent::anecdote(AnecdoteKind kind) {
  Intent i;
  i.kind_ = Kind::Anecdote;
  i.anecdote_ = kind;
  return i;
}

Intent Intent::control(ControlKind kind) {
  Intent i;
  i.kind_ = Kind::Control;
  i.control_ = kind;
  return i;
}

std::string Intent::tag() const {
  switch (kind_) {
    case Kind::Symptom: return "symptom:" + std::string(to_string(symptoms_.front()));
    case Kind::Multiple: {
      std::string out = "multiple:";
      for (std::size_t i = 0; i < symptoms_.size(); ++i) {
        if (i) out += ',';
        out += to_string(symptoms_[i]);
      }
      return out;
    }
    case Kind::Asr: return "asr";
    case Kind::None: return "none";
    case Kind::Anecdote: return "anecdote:" + std::string(to_string(anecdote_));
    case Kind::Control: return "control:" + std::string(to_string(control_));
  }
  return "none";
}

Intent Intent::parse(std::string_view tag) {
  auto bad = [&] { return Error(Errc::InvalidArgument, "bad intent tag '" + std::string(tag) + "'"); };
  if (tag == "asr") return asr();
  if (tag == "none") return none();
  auto colon = tag.find(':');
  if (colon == std::string_view::npos) throw bad();
  auto head = tag.substr(0, colon);
  auto rest = tag.substr(colon + 1);
  if (head == "symptom") {
    auto s = parse_symptom(rest);
    if (!s) throw bad();
    return symptom(*s);
  }
  if (head == "multiple") {
    std::vector<Symptom> list;
    for (auto part : split(rest, ',')) {
      auto s = parse_symptom(part);
      if (!s) throw bad();
      list.push_back(*s);
    }
    return multiple(list);
  }
  if (head == "anecdote") {
    auto k = parse_anecdote_kind(rest);
    if (!k) throw bad();
    return anecdote(*k);
  }
  if (head == "control") {
    auto k = parse_control_kind(rest);
    if (!k) throw bad();
    return control(*k);
  }
  throw bad();
}

bool SessionState::has_rule_for(Symptom s) const {
  return std::any_of(rule_stack.begin(), rule_stack.end(), [s](const ActiveRule& r) { return r.symptom == s; });
}

// ---- FollowUpConfig ----

FollowUpConfig parse_followup_config(const json& doc) {
  if (!doc.is_object() || doc.value("v", 0) != 1) {
    throw Error(Errc::ConfigError, "followups config must be an object with \"v\": 1");
  }
  FollowUpConfig cfg;
  for (const auto& [name, body] : doc.at("symptoms").items()) {
    auto s = parse_symptom(name);
    if (!s) throw Error(Errc::ConfigError, "unknown symptom '" + name + "'");
    cfg.labels[*s] = body.value("label", name);
    auto& topics = cfg.topics[*s];
    for (const auto& t : body.at("topics")) {
      auto topic_name = t.at("topic").get<std::string>();
      auto topic = parse_topic(topic_name);
      if (!topic) throw Error(Errc::ConfigError, "unknown topic '" + topic_name + "'");
      topics.push_back(*topic);
      auto& templates = cfg.templates[{*s, *topic}];
      for (const auto& tpl : t.at("templates")) templates.push_back(tpl.get<std::string>());
    }
  }
  if (doc.contains("topic_descriptions")) {
    for (const auto& [name, text] : doc.at("topic_descriptions").items()) {
      auto topic = parse_topic(name);
      if (!topic) throw Error(Errc::ConfigError, "unknown topic '" + name + "'");
      cfg.topic_descriptions[*topic] = text.get<std::string>();
    }
  }
  return cfg;
}

FollowUpConfig load_followup_config(const std::filesystem::path& path) {
  try {
    return parse_followup_config(read_json_file(path));
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, path.string() + ": " + e.what());
  }
}

json followup_config_to_json(const FollowUpConfig& cfg) {
  json doc;
  doc["v"] = 1;
  doc["symptoms"] = json::object();
  for (const auto& [s, topics] : cfg.topics) {
    json body;
    auto label = cfg.labels.find(s);
    body["label"] = label != cfg.labels.end() ? label->second : std::string(to_string(s));
    body["topics"] = json::array();
    for (auto t : topics) {
      auto it = cfg.templates.find({s, t});
      body["topics"].push_back({{"topic", to_string(t)},
                                {"templates", it != cfg.templates.end() ? it->second : std::vector<std::string>{}}});
    }
    doc["symptoms"][std::string(to_string(s))] = body;
  }
  json desc = json::object();
  for (const auto& [t, text] : cfg.topic_descriptions) desc[std::string(to_string(t))] = text;
  doc["topic_descriptions"] = desc;
  return doc;
}

std::vector<std::string> validate_config(const FollowUpConfig& cfg) {
  std::vector<std::string> out;
  auto has_topic = [&](Symptom s, ProbingTopic t) {
    auto it = cfg.topics.find(s);
    return it != cfg.topics.end() && std::find(it->second.begin(), it->second.end(), t) != it->second.end();
  };
  for (auto s : kAllSymptoms) {
    auto it = cfg.topics.find(s);
    if (it == cfg.topics.end()) {
      out.push_back("missing symptom: " + std::string(to_string(s)));
      continue;
    }
    if (it->second.empty()) out.push_back(std::string(to_string(s)) + " has no probing topics");
    std::set<ProbingTopic> seen;
    for (auto t : it->second) {
      if (!seen.insert(t).second) {
        out.push_back(std::string(to_string(s)) + " lists topic " + std::string(to_string(t)) + " twice");
      }
      auto tpl = cfg.templates.find({s, t});
      if (tpl == cfg.templates.end() || tpl->second.empty()) {
        out.push_back("no template for " + std::string(to_string(s)) + "/" + std::string(to_string(t)));
      } else {
        for (const auto& text : tpl->second) {
          if (text.empty()) {
            out.push_back("empty template for " + std::string(to_string(s)) + "/" + std::string(to_string(t)));
          }
        }
      }
    }
  }
  for (auto t : {ProbingTopic::Medication, ProbingTopic::DailyActivity, ProbingTopic::Duration}) {
    if (cfg.topics.count(Symptom::Tremor) && !has_topic(Symptom::Tremor, t)) {
      out.push_back("tremor must probe " + std::string(to_string(t)));
    }
  }
  if (has_topic(Symptom::Falling, ProbingTopic::Duration)) out.push_back("falling must not probe duration");
  return out;
}

std::string render_template(std::string_view tpl, const TemplateVars& vars) {
  std::string out;
  out.reserve(tpl.size());
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      auto close = tpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        auto key = tpl.substr(i + 1, close - i - 1);
        auto it = vars.find(key);
        if (it != vars.end()) {
          out += it->second;
        } else {
          spdlog::warn("unresolved template placeholder {{{}}}", key);
        }
        i = close + 1;
        continue;
      }
    }
    out += tpl[i++];
  }
  return out;
}

std::string default_data_dir() {
  if (const char* env = std::getenv("PDJ_DATA_DIR")) return env;
  return PDJ_DATA_DIR;
}

// ---- JSON ----

json to_json(const PatientProfile& p) {
  json meds = json::array();
  for (const auto& m : p.medications) meds.push_back({{"name", m.name}, {"schedule_note", m.schedule_note}});
  return {{"patient_id", p.patient_id},
          {"display_name", p.display_name},
          {"medications", meds},
          {"daily_activities", p.daily_activities},
          {"challenges", p.challenges},
          {"version", p.version}};
}

PatientProfile profile_from_json(const json& j) {
  PatientProfile p;
  p.patient_id = j.at("patient_id").get<std::string>();
  p.display_name = j.value("display_name", "");
  for (const auto& m : j.value("medications", json::array())) {
    p.medications.push_back({m.at("name").get<std::string>(), m.value("schedule_note", "")});
  }
  p.daily_activities = j.value("daily_activities", std::vector<std::string>{});
  p.challenges = j.value("challenges", std::vector<std::string>{});
  p.version = j.value("version", 1);
  return p;
}

json to_json(const JournalEntry& e) {
  json j = {{"entry_id", e.entry_id},
            {"patient_id", e.patient_id},
            {"session_id", e.session_id},
            {"timestamp", e.timestamp_ms},
            {"speaker", to_string(e.speaker)},
            {"text", e.text}};
  j["intent_tag"] = e.intent_tag ? json(e.intent_tag->tag()) : json(nullptr);
  j["topic_tag"] = e.topic_tag ? json(to_string(*e.topic_tag)) : json(nullptr);
  return j;
}

JournalEntry entry_from_json(const json& j) {
  JournalEntry e;
  e.entry_id = j.at("entry_id").get<std::uint64_t>();
  e.patient_id = j.at("patient_id").get<std::string>();
  e.session_id = j.at("session_id").get<std::string>();
  e.timestamp_ms = j.at("timestamp").get<std::int64_t>();
  auto speaker = parse_speaker(j.at("speaker").get<std::string>());
  if (!speaker) throw Error(Errc::InvalidArgument, "bad speaker");
  e.speaker = *speaker;
  e.text = j.at("text").get<std::string>();
  if (j.contains("intent_tag") && !j["intent_tag"].is_null()) {
    e.intent_tag = Intent::parse(j["intent_tag"].get<std::string>());
  }
  if (j.contains("topic_tag") && !j["topic_tag"].is_null()) {
    auto t = parse_topic(j["topic_tag"].get<std::string>());
    if (!t) throw Error(Errc::InvalidArgument, "bad topic tag");
    e.topic_tag = *t;
  }
  return e;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, path.string() + ": " + e.what());
  }
}

}  // namespace pdj

#include "pdjournal/evalharness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "pdjournal/errors.hpp"
#include "pdjournal/text.hpp"

namespace fs = std::filesystem;

namespace pdj::eval {

namespace {

std::optional<Intent> optional_intent(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return Intent::parse(j[key].get<std::string>());
}

json intent_or_null(const std::optional<Intent>& i) { return i ? json(i->tag()) : json(nullptr); }

std::vector<ScriptTurn> turns_from_json(const json& arr) {
  std::vector<ScriptTurn> out;
  for (const auto& t : arr) {
    if (t.is_string()) {
      out.push_back({t.get<std::string>(), std::nullopt});
    } else {
      out.push_back({t.at("utterance").get<std::string>(), optional_intent(t, "gold_intent")});
    }
  }
  return out;
}

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '\''; }

// Byte offset of the first whole-word, case-insensitive occurrence of `needle` at or after `from`.
std::size_t find_word(const std::string& lower_hay, const std::string& lower_needle, std::size_t from) {
  for (auto pos = lower_hay.find(lower_needle, from); pos != std::string::npos;
       pos = lower_hay.find(lower_needle, pos + 1)) {
    bool left = pos == 0 || !word_char(lower_hay[pos - 1]);
    auto end = pos + lower_needle.size();
    bool right = end >= lower_hay.size() || !word_char(lower_hay[end]);
    if (left && right) return pos;
  }
  return std::string::npos;
}

std::string strip_trailing_punct(std::string s) {
  while (!s.empty() && (std::ispunct(static_cast<unsigned char>(s.back())) || s.back() == ' ')) s.pop_back();
  return s;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(Errc::InvalidArgument, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fixed2(double v) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(2) << v;
  return ss.str();
}

}  // namespace

PatientScript script_from_json(const json& doc) {
  try {
    PatientScript s;
    s.profile = profile_from_json(doc.at("profile"));
    s.name = doc.value("name", s.profile.patient_id);
    if (doc.contains("sessions")) {
      for (const auto& sess : doc["sessions"]) s.sessions.push_back(turns_from_json(sess));
    } else {
      s.sessions.push_back(turns_from_json(doc.at("turns")));
    }
    if (doc.contains("noise")) {
      const auto& n = doc["noise"];
      s.noise.asr_rate = n.value("asr_rate", 0.0);
      s.noise.bulk_merge_rate = n.value("bulk_merge_rate", 0.0);
      s.noise.seed = n.value("seed", std::uint64_t{0});
    }
    auto in_unit = [](double r) { return r >= 0.0 && r <= 1.0; };
    if (!in_unit(s.noise.asr_rate) || !in_unit(s.noise.bulk_merge_rate)) {
      throw Error(Errc::InvalidArgument, "noise rates must lie in [0, 1]");
    }
    return s;
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("script: ") + e.what());
  }
}

json to_json(const PatientScript& script) {
  json sessions = json::array();
  for (const auto& sess : script.sessions) {
    json turns = json::array();
    for (const auto& t : sess) turns.push_back({{"utterance", t.utterance}, {"gold_intent", intent_or_null(t.gold_intent)}});
    sessions.push_back(std::move(turns));
  }
  return {{"name", script.name},
          {"profile", pdj::to_json(script.profile)},
          {"sessions", sessions},
          {"noise",
           {{"asr_rate", script.noise.asr_rate},
            {"bulk_merge_rate", script.noise.bulk_merge_rate},
            {"seed", script.noise.seed}}}};
}

std::vector<PatientScript> load_scripts(const fs::path& path) {
  auto doc = read_json_file(path);
  std::vector<PatientScript> out;
  if (doc.contains("scripts")) {
    for (const auto& s : doc["scripts"]) out.push_back(script_from_json(s));
  } else {
    out.push_back(script_from_json(doc));
  }
  return out;
}

ConfusionTable ConfusionTable::from_json(const json& doc) {
  ConfusionTable t;
  const json& map = doc.contains("confusions") ? doc["confusions"] : doc;
  if (!map.is_object()) throw Error(Errc::ConfigError, "confusion table must be an object of term -> rendering");
  for (const auto& [k, v] : map.items()) {
    if (k.empty() || !v.is_string()) throw Error(Errc::ConfigError, "bad confusion entry '" + k + "'");
    t.entries_.emplace_back(text::to_lower(k), v.get<std::string>());
  }
  std::stable_sort(t.entries_.begin(), t.entries_.end(),
                   [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
  return t;
}

ConfusionTable ConfusionTable::load(const fs::path& path) { return from_json(read_json_file(path)); }

std::string ConfusionTable::corrupt(std::string_view input) const {
  std::string out(input);
  for (const auto& [from, to] : entries_) {
    std::size_t pos = 0;
    while ((pos = find_word(text::to_lower(out), from, pos)) != std::string::npos) {
      out.replace(pos, from.size(), to);
      pos += to.size();
    }
  }
  return out;
}

bool ConfusionTable::applies(std::string_view input) const {
  auto lower = text::to_lower(input);
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return find_word(lower, e.first, 0) != std::string::npos; });
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::optional<Intent> merged_gold(const std::optional<Intent>& a, const std::optional<Intent>& b) {
  if (!a || !b) return std::nullopt;
  std::vector<Symptom> symptoms;
  for (const auto* i : {&*a, &*b}) {
    if (i->is(Intent::Kind::Symptom) || i->is(Intent::Kind::Multiple)) {
      symptoms.insert(symptoms.end(), i->symptoms().begin(), i->symptoms().end());
    }
  }
  std::vector<Symptom> distinct;
  for (auto s : symptoms) {
    if (std::find(distinct.begin(), distinct.end(), s) == distinct.end()) distinct.push_back(s);
  }
  if (distinct.size() >= 2) return Intent::multiple(distinct);
  if (distinct.size() == 1) return Intent::symptom(distinct.front());
  return a;
}

std::vector<std::vector<NoisyTurn>> apply_noise(const PatientScript& script, const ConfusionTable& table) {
  std::mt19937_64 rng(script.noise.seed);
  std::vector<std::vector<NoisyTurn>> out;
  for (const auto& session : script.sessions) {
    std::vector<NoisyTurn> noisy;
    for (std::size_t i = 0; i < session.size();) {
      const bool merge = i + 1 < session.size() && uniform01(rng) < script.noise.bulk_merge_rate;
      NoisyTurn t;
      if (merge) {
        t.original = strip_trailing_punct(session[i].utterance) + " and " + session[i + 1].utterance;
        t.source_turns = {i, i + 1};
        t.expected_intent = merged_gold(session[i].gold_intent, session[i + 1].gold_intent);
        i += 2;
      } else {
        t.original = session[i].utterance;
        t.source_turns = {i};
        t.expected_intent = session[i].gold_intent;
        i += 1;
      }
      t.utterance = t.original;
      noisy.push_back(std::move(t));
    }
    for (auto& t : noisy) {
      // One draw per turn keeps the stream aligned whether or not the turn is corruptible.
      const bool hit = uniform01(rng) < script.noise.asr_rate;
      if (hit && table.applies(t.utterance)) {
        t.utterance = table.corrupt(t.utterance);
        t.asr_corrupted = true;
      }
    }
    out.push_back(std::move(noisy));
  }
  return out;
}

json to_json(const SimLog& log) {
  json sessions = json::array();
  for (const auto& s : log.sessions) {
    sessions.push_back({{"session_index", s.session_index}, {"session_id", s.session_id}, {"greeting", s.greeting}});
  }
  json turns = json::array();
  for (const auto& t : log.turns) {
    turns.push_back({{"session_index", t.session_index},
                     {"session_id", t.session_id},
                     {"utterance", t.turn.utterance},
                     {"original", t.turn.original},
                     {"source_turns", t.turn.source_turns},
                     {"expected_intent", intent_or_null(t.turn.expected_intent)},
                     {"asr_corrupted", t.turn.asr_corrupted},
                     {"predicted", t.predicted},
                     {"provider", t.provider},
                     {"confidence", t.confidence},
                     {"replies", t.replies},
                     {"provenance", t.provenance},
                     {"session_over", t.session_over}});
  }
  return {{"patient", log.patient}, {"sessions", sessions}, {"turns", turns}};
}

SimLog simlog_from_json(const json& doc) {
  try {
    SimLog log;
    log.patient = doc.at("patient").get<std::string>();
    for (const auto& s : doc.at("sessions")) {
      log.sessions.push_back({s.at("session_index").get<std::size_t>(), s.at("session_id").get<std::string>(),
                              s.at("greeting").get<std::string>()});
    }
    for (const auto& j : doc.at("turns")) {
      TurnLog t;
      t.session_index = j.at("session_index").get<std::size_t>();
      t.session_id = j.at("session_id").get<std::string>();
      t.turn.utterance = j.at("utterance").get<std::string>();
      t.turn.original = j.value("original", t.turn.utterance);
      t.turn.source_turns = j.value("source_turns", std::vector<std::size_t>{});
      t.turn.expected_intent = optional_intent(j, "expected_intent");
      t.turn.asr_corrupted = j.value("asr_corrupted", false);
      t.predicted = j.at("predicted").get<std::string>();
      t.provider = j.value("provider", "");
      t.confidence = j.value("confidence", 0.0);
      t.replies = j.at("replies").get<std::vector<std::string>>();
      t.provenance = j.at("provenance").get<std::vector<std::string>>();
      t.session_over = j.value("session_over", false);
      if (t.provenance.size() != t.replies.size()) {
        throw Error(Errc::InvalidArgument, "turn provenance must parallel its replies");
      }
      log.turns.push_back(std::move(t));
    }
    return log;
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("simulation log: ") + e.what());
  }
}

std::string render_transcript(const SimLog& log) {
  std::string out = "# patient " + log.patient + "\n";
  auto turn = log.turns.begin();
  for (const auto& s : log.sessions) {
    out += "\n== session " + std::to_string(s.session_index + 1) + " (" + s.session_id + ") ==\n";
    out += "AGENT: " + s.greeting + "\n";
    for (; turn != log.turns.end() && turn->session_id == s.session_id; ++turn) {
      out += "USER [" + turn->predicted + "]: " + turn->turn.utterance + "\n";
      for (std::size_t i = 0; i < turn->replies.size(); ++i) {
        out += "AGENT";
        if (!turn->provenance[i].empty()) out += " {" + turn->provenance[i] + "}";
        out += ": " + turn->replies[i] + "\n";
      }
    }
  }
  return out;
}

SimLog simulate(const PatientScript& script, const SimEnvironment& env) {
  if (!env.engine || !env.store) throw Error(Errc::InvalidArgument, "simulation needs an engine and a store");
  const ConfusionTable empty;
  const auto noisy = apply_noise(script, env.confusions ? *env.confusions : empty);
  const auto profile = env.store->put_profile(script.profile);

  SimLog log;
  log.patient = profile.patient_id;
  std::size_t opened = 0;
  SessionState state;

  auto persist = [&](dialog::DialogAction& action) {
    auto ids = env.store->append_batch(action.writes);
    auto& transcript = action.next_state.transcript;
    const auto first = transcript.size() - ids.size();
    for (std::size_t i = 0; i < ids.size(); ++i) transcript[first + i].entry_id = ids[i];
  };
  auto open = [&](std::size_t session_index) {
    auto id = profile.patient_id + "-s" + std::to_string(++opened);
    auto action = env.engine->begin_session(profile, id);
    persist(action);
    state = std::move(action.next_state);
    log.sessions.push_back({session_index, id, action.replies.empty() ? std::string() : action.replies.front()});
  };

  for (std::size_t si = 0; si < noisy.size(); ++si) {
    open(si);
    for (std::size_t ti = 0; ti < noisy[si].size(); ++ti) {
      if (state.phase == Phase::Ended) open(si);
      const auto& nt = noisy[si][ti];
      dialog::TurnContext ctx{profile, env.gateway, env.store, nullptr};
      dialog::DialogAction action;
      try {
        action = env.engine->handle(state, nt.utterance, ctx);
      } catch (const Error& e) {
        throw Error(e.code(), "patient " + profile.patient_id + ", session " + std::to_string(si + 1) + ", turn " +
                                  std::to_string(ti + 1) + ": " + e.what(), e.status());
      }
      persist(action);

      TurnLog t;
      t.session_index = si;
      t.session_id = state.session_id;
      t.turn = nt;
      if (action.intent) {
        t.predicted = action.intent->intent.tag();
        t.provider = std::string(nlu::to_string(action.intent->provider));
        t.confidence = action.intent->confidence;
      }
      t.replies = action.replies;
      for (const auto& p : action.provenance) t.provenance.push_back(p ? p->tag() : std::string());
      t.session_over = action.session_over;
      log.turns.push_back(std::move(t));
      state = std::move(action.next_state);
    }
  }
  return log;
}

double round2(double x) { return std::round(x * 100.0) / 100.0; }

double personalization_rate(std::size_t personalized, std::size_t total) {
  if (total == 0) throw Error(Errc::InvalidArgument, "personalization rate needs at least one system response");
  if (personalized > total) throw Error(Errc::InvalidArgument, "personalized count exceeds total responses");
  return round2(static_cast<double>(personalized) / static_cast<double>(total));
}

Aggregate aggregate(const std::vector<double>& values) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double sd = 0.0;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    sd = std::sqrt(ss / (n - 1.0));
  }
  return {round2(mean), round2(sd)};
}

bool same_intent(const Intent& a, const Intent& b) {
  if (a.is(Intent::Kind::Multiple) && b.is(Intent::Kind::Multiple)) {
    std::set<Symptom> sa(a.symptoms().begin(), a.symptoms().end());
    std::set<Symptom> sb(b.symptoms().begin(), b.symptoms().end());
    return sa == sb;
  }
  return a == b;
}

GoldLabels gold_from_json(const json& doc) {
  GoldLabels gold;
  try {
    for (const auto& [patient, labels] : doc.items()) {
      auto& list = gold[patient];
      for (const auto& l : labels) list.push_back(l.is_null() ? std::nullopt : std::optional(Intent::parse(l.get<std::string>())));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("gold labels: ") + e.what());
  }
  return gold;
}

GoldLabels gold_from_logs(const std::vector<SimLog>& logs) {
  GoldLabels gold;
  for (const auto& log : logs) {
    auto& list = gold[log.patient];
    for (const auto& t : log.turns) list.push_back(t.turn.expected_intent);
  }
  return gold;
}

MetricsReport compute_metrics(const std::vector<SimLog>& logs, const GoldLabels& gold) {
  MetricsReport report;
  std::vector<double> accuracies, rates;
  for (const auto& log : logs) {
    auto it = gold.find(log.patient);
    if (it == gold.end()) throw Error(Errc::AlignmentError, "no gold labels for patient " + log.patient);
    if (it->second.size() != log.turns.size()) {
      throw Error(Errc::AlignmentError, "patient " + log.patient + ": " + std::to_string(it->second.size()) +
                                            " gold labels for " + std::to_string(log.turns.size()) + " logged turns");
    }
    PatientMetrics m;
    m.patient = log.patient;
    for (std::size_t i = 0; i < log.turns.size(); ++i) {
      const auto& t = log.turns[i];
      if (const auto& g = it->second[i]) {
        ++m.labeled_turns;
        if (!t.predicted.empty() && same_intent(Intent::parse(t.predicted), *g)) ++m.correct_intents;
      }
      for (const auto& p : t.provenance) {
        if (p.empty()) continue;
        ++m.total_responses;
        if (p == "personalized") ++m.personalized_count;
      }
    }
    if (m.labeled_turns > 0) {
      m.intent_accuracy = round2(static_cast<double>(m.correct_intents) / static_cast<double>(m.labeled_turns));
      accuracies.push_back(m.intent_accuracy);
    }
    try {
      m.personalization_rate = personalization_rate(m.personalized_count, m.total_responses);
    } catch (const Error&) {
      throw Error(Errc::InvalidArgument, "patient " + log.patient + " has no personalization-eligible responses");
    }
    rates.push_back(m.personalization_rate);
    report.patients.push_back(std::move(m));
  }
  report.intent_accuracy = aggregate(accuracies);
  report.personalization_rate = aggregate(rates);
  return report;
}

json to_json(const MetricsReport& report) {
  json patients = json::array();
  for (const auto& p : report.patients) {
    patients.push_back({{"patient", p.patient},
                        {"labeled_turns", p.labeled_turns},
                        {"correct_intents", p.correct_intents},
                        {"intent_accuracy", p.intent_accuracy},
                        {"personalized_count", p.personalized_count},
                        {"total_responses", p.total_responses},
                        {"personalization_rate", p.personalization_rate}});
  }
  return {{"patients", patients},
          {"intent_accuracy", {{"mean", report.intent_accuracy.mean}, {"sd", report.intent_accuracy.sd}}},
          {"personalization_rate",
           {{"mean", report.personalization_rate.mean}, {"sd", report.personalization_rate.sd}}}};
}

std::string render_table(const MetricsReport& report) {
  std::ostringstream out;
  out << std::left << std::setw(16) << "patient" << std::right << std::setw(10) << "intent" << std::setw(14)
      << "personalized" << std::setw(8) << "total" << std::setw(8) << "rate" << "\n";
  for (const auto& p : report.patients) {
    out << std::left << std::setw(16) << p.patient << std::right << std::setw(10) << fixed2(p.intent_accuracy)
        << std::setw(14) << p.personalized_count << std::setw(8) << p.total_responses << std::setw(8)
        << fixed2(p.personalization_rate) << "\n";
  }
  out << std::left << std::setw(16) << "mean" << std::right << std::setw(10) << fixed2(report.intent_accuracy.mean)
      << std::setw(30) << fixed2(report.personalization_rate.mean) << "\n";
  out << std::left << std::setw(16) << "sd" << std::right << std::setw(10) << fixed2(report.intent_accuracy.sd)
      << std::setw(30) << fixed2(report.personalization_rate.sd) << "\n";
  return out.str();
}

GoldenResult compare_text(std::string_view actual, std::string_view expected) {
  GoldenResult r;
  if (actual == expected) {
    r.pass = true;
    return r;
  }
  auto split = [](std::string_view s) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
      if (i == s.size() || s[i] == '\n') {
        lines.push_back(s.substr(start, i - start));
        start = i + 1;
      }
    }
    return lines;
  };
  auto a = split(actual), e = split(expected);
  std::size_t i = 0;
  while (i < a.size() && i < e.size() && a[i] == e[i]) ++i;
  r.line = i + 1;
  if (i < a.size()) r.actual = a[i];
  if (i < e.size()) r.expected = e[i];
  return r;
}

GoldenResult golden_check(const fs::path& transcript, const fs::path& expected) {
  return compare_text(read_file(transcript), read_file(expected));
}

std::vector<IntentCase> load_intent_corpus(const fs::path& path) {
  auto doc = read_json_file(path);
  const json& items = doc.is_array() ? doc : doc.at("items");
  std::vector<IntentCase> out;
  try {
    for (const auto& j : items) {
      out.push_back({j.at("text").get<std::string>(), Intent::parse(j.at("label").get<std::string>()),
                     j.value("exemplar", false), j.value("category", "")});
    }
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("intent corpus: ") + e.what());
  }
  return out;
}

IntentEvalReport evaluate_intents(const std::vector<IntentCase>& corpus, const nlu::IntentClassifier& classifier,
                                  llmgw::Gateway* gateway) {
  IntentEvalReport r;
  for (const auto& c : corpus) {
    auto result = classifier.classify(c.text, gateway);
    const bool ok = same_intent(result.intent, c.label);
    ++r.total;
    if (c.exemplar) ++r.exemplars;
    auto category = c.category.empty() ? std::string(c.label.tag().substr(0, c.label.tag().find(':'))) : c.category;
    auto& [cat_ok, cat_total] = r.by_category[category];
    ++cat_total;
    if (ok) {
      ++r.correct;
      ++cat_ok;
    } else {
      if (c.exemplar) ++r.exemplar_errors;
      r.failures.push_back({c.text, c.label.tag(), result.intent.tag(), c.exemplar});
    }
  }
  r.accuracy = r.total ? static_cast<double>(r.correct) / static_cast<double>(r.total) : 0.0;
  return r;
}

json to_json(const IntentEvalReport& r) {
  json cats = json::object();
  for (const auto& [name, counts] : r.by_category) cats[name] = {{"correct", counts.first}, {"total", counts.second}};
  json failures = json::array();
  for (const auto& f : r.failures) {
    failures.push_back({{"text", f.text}, {"expected", f.expected}, {"predicted", f.predicted}, {"exemplar", f.exemplar}});
  }
  return {{"total", r.total},         {"correct", r.correct},
          {"accuracy", r.accuracy},   {"exemplars", r.exemplars},
          {"exemplar_errors", r.exemplar_errors}, {"by_category", cats},
          {"failures", failures}};
}

std::string render_table(const IntentEvalReport& r) {
  std::ostringstream out;
  out << std::left << std::setw(20) << "category" << std::right << std::setw(9) << "correct" << std::setw(7) << "total"
      << "\n";
  for (const auto& [name, counts] : r.by_category) {
    out << std::left << std::setw(20) << name << std::right << std::setw(9) << counts.first << std::setw(7)
        << counts.second << "\n";
  }
  out << std::left << std::setw(20) << "overall" << std::right << std::setw(9) << r.correct << std::setw(7) << r.total
      << "   accuracy " << std::fixed << std::setprecision(4) << r.accuracy << "\n";
  out << "exemplar errors: " << r.exemplar_errors << " of " << r.exemplars << "\n";
  for (const auto& f : r.failures) {
    out << "  MISS " << (f.exemplar ? "[exemplar] " : "") << '"' << f.text << "\" expected " << f.expected << " got "
        << f.predicted << "\n";
  }
  return out.str();
}

json relevance_worksheet(const SimLog& log) {
  json rows = json::array();
  for (std::size_t i = 0; i < log.turns.size(); ++i) {
    const auto& t = log.turns[i];
    for (std::size_t r = 0; r < t.replies.size(); ++r) {
      rows.push_back({{"turn", i + 1},
                      {"session_id", t.session_id},
                      {"user", t.turn.utterance},
                      {"agent", t.replies[r]},
                      {"provenance", t.provenance[r]},
                      {"system_relevant", nullptr},
                      {"participant_relevant", nullptr}});
    }
  }
  return {{"patient", log.patient}, {"rows", rows}};
}

std::optional<double> relevance_rate(const json& worksheet, std::string_view field) {
  const json& rows = worksheet.is_array() ? worksheet : worksheet.at("rows");
  std::size_t coded = 0, relevant = 0;
  const std::string key(field);
  for (const auto& row : rows) {
    if (!row.contains(key) || row[key].is_null()) continue;
    ++coded;
    const auto& v = row[key];
    if ((v.is_boolean() && v.get<bool>()) || (v.is_number() && v.get<double>() == 1.0)) ++relevant;
  }
  if (coded == 0) return std::nullopt;
  return static_cast<double>(relevant) / static_cast<double>(coded);
}

}  // namespace pdj::eval

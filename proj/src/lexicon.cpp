#include <algorithm>

#include "pdjournal/errors.hpp"
#include "pdjournal/nlu.hpp"

namespace pdj::nlu {

namespace {

constexpr std::size_t kNegationWindow = 2;

bool is_determiner(std::string_view tok) {
  static const std::set<std::string, std::less<>> kDeterminers = {"any", "a", "an", "the", "my", "much",
                                                                   "more", "real", "really", "some"};
  return kDeterminers.count(tok) > 0;
}

std::string phrase_key(std::string_view phrase) { return text::join(tokenize(phrase).lower, " "); }

std::set<std::string> read_set(const json& j) {
  std::set<std::string> out;
  for (const auto& p : j) out.insert(p.get<std::string>());
  return out;
}

json write_set(const std::set<std::string>& s) { return json(std::vector<std::string>(s.begin(), s.end())); }

std::string describe(PhraseClass cls, std::uint8_t value) {
  switch (cls) {
    case PhraseClass::Symptom: return std::string(to_string(static_cast<Symptom>(value)));
    case PhraseClass::Control: return "control:" + std::string(to_string(static_cast<ControlKind>(value)));
    case PhraseClass::Anecdote: return "anecdote:" + std::string(to_string(static_cast<AnecdoteKind>(value)));
    case PhraseClass::Advice: return "advice";
    case PhraseClass::Answer: return "answer";
  }
  return "?";
}

}  // namespace

Lexicon Lexicon::from_json(const json& doc) {
  if (!doc.is_object() || doc.value("v", 0) != 1) {
    throw Error(Errc::ConfigError, "lexicon config must be an object with \"v\": 1");
  }
  Lexicon lex;
  try {
    for (const auto& [name, phrases] : doc.at("symptoms").items()) {
      auto s = parse_symptom(name);
      if (!s) throw Error(Errc::ConfigError, "unknown symptom '" + name + "' in lexicon");
      lex.symptoms_[*s] = read_set(phrases);
    }
    const json controls = doc.value("controls", json::object());
    for (const auto& [name, phrases] : controls.items()) {
      auto k = parse_control_kind(name);
      if (!k) throw Error(Errc::ConfigError, "unknown control kind '" + name + "'");
      lex.controls_[*k] = read_set(phrases);
    }
    const json anecdotes = doc.value("anecdotes", json::object());
    for (const auto& [name, phrases] : anecdotes.items()) {
      auto k = parse_anecdote_kind(name);
      if (!k) throw Error(Errc::ConfigError, "unknown anecdote kind '" + name + "'");
      lex.anecdotes_[*k] = read_set(phrases);
    }
    lex.advice_ = read_set(doc.value("advice", json::array()));
    lex.answers_ = read_set(doc.value("answers", json::array()));
    lex.medications_ = read_set(doc.value("medications", json::array()));
    lex.negators_ = read_set(doc.value("negators", json::array()));
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("lexicon: ") + e.what());
  }
  lex.rebuild_index();
  return lex;
}

Lexicon Lexicon::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

json Lexicon::to_json() const {
  json doc;
  doc["v"] = 1;
  doc["symptoms"] = json::object();
  for (const auto& [s, phrases] : symptoms_) doc["symptoms"][std::string(pdj::to_string(s))] = write_set(phrases);
  doc["controls"] = json::object();
  for (const auto& [k, phrases] : controls_) doc["controls"][std::string(pdj::to_string(k))] = write_set(phrases);
  doc["anecdotes"] = json::object();
  for (const auto& [k, phrases] : anecdotes_) doc["anecdotes"][std::string(pdj::to_string(k))] = write_set(phrases);
  doc["advice"] = write_set(advice_);
  doc["answers"] = write_set(answers_);
  doc["medications"] = write_set(medications_);
  doc["negators"] = write_set(negators_);
  return doc;
}

void Lexicon::add_symptom_phrase(Symptom s, const std::string& phrase) {
  symptoms_[s].insert(phrase);
  rebuild_index();
}

void Lexicon::remove_symptom(Symptom s) {
  symptoms_.erase(s);
  rebuild_index();
}

void Lexicon::index_phrase(const std::string& phrase, Target t) {
  auto key = phrase_key(phrase);
  if (key.empty()) return;
  auto [it, inserted] = index_.try_emplace(key, t);
  if (!inserted && (it->second.cls != t.cls || it->second.value != t.value)) {
    index_conflicts_.push_back("phrase '" + phrase + "' maps to both " + describe(it->second.cls, it->second.value) +
                               " and " + describe(t.cls, t.value));
  }
  auto toks = tokenize(key);
  max_phrase_tokens_ = std::max(max_phrase_tokens_, toks.size());
  for (const auto& w : toks.lower) vocabulary_.insert(w);
}

void Lexicon::rebuild_index() {
  index_.clear();
  vocabulary_.clear();
  index_conflicts_.clear();
  max_phrase_tokens_ = 1;
  for (const auto& [s, phrases] : symptoms_) {
    for (const auto& p : phrases) index_phrase(p, {PhraseClass::Symptom, static_cast<std::uint8_t>(s)});
  }
  for (const auto& [k, phrases] : controls_) {
    for (const auto& p : phrases) index_phrase(p, {PhraseClass::Control, static_cast<std::uint8_t>(k)});
  }
  for (const auto& [k, phrases] : anecdotes_) {
    for (const auto& p : phrases) index_phrase(p, {PhraseClass::Anecdote, static_cast<std::uint8_t>(k)});
  }
  for (const auto& p : advice_) index_phrase(p, {PhraseClass::Advice, 0});
  for (const auto* words : {&answers_, &medications_, &negators_}) {
    for (const auto& w : *words) {
      for (const auto& t : tokenize(w).lower) vocabulary_.insert(t);
    }
  }
}

std::vector<std::string> Lexicon::validate() const {
  std::vector<std::string> out = index_conflicts_;
  auto check_phrase = [&](const std::string& p, const std::string& where) {
    if (p.empty() || text::trim(p).empty()) {
      out.push_back("empty phrase in " + where);
      return;
    }
    if (text::trim(p) != p) out.push_back("phrase '" + p + "' in " + where + " is not trimmed");
    if (text::to_lower(p) != p) out.push_back("phrase '" + p + "' in " + where + " is not lowercase");
    if (tokenize(p).empty()) out.push_back("phrase '" + p + "' in " + where + " has no words");
  };
  for (auto s : kAllSymptoms) {
    auto it = symptoms_.find(s);
    if (it == symptoms_.end() || it->second.empty()) {
      out.push_back("no trigger phrases for symptom " + std::string(pdj::to_string(s)));
      continue;
    }
    for (const auto& p : it->second) check_phrase(p, std::string(pdj::to_string(s)));
  }
  for (const auto& [k, phrases] : controls_) {
    for (const auto& p : phrases) check_phrase(p, "control " + std::string(pdj::to_string(k)));
  }
  for (const auto& [k, phrases] : anecdotes_) {
    for (const auto& p : phrases) check_phrase(p, "anecdote " + std::string(pdj::to_string(k)));
  }
  for (const auto& p : advice_) check_phrase(p, "advice");
  return out;
}

bool Lexicon::known_word(std::string_view lower_token) const { return vocabulary_.count(lower_token) > 0; }

std::vector<PhraseHit> Lexicon::scan(const TokenSequence& seq) const {
  std::vector<PhraseHit> hits;
  const auto n = seq.size();
  std::size_t i = 0;
  while (i < n) {
    bool matched = false;
    for (std::size_t len = std::min(max_phrase_tokens_, n - i); len >= 1; --len) {
      std::string key = seq.lower[i];
      for (std::size_t k = 1; k < len; ++k) key += ' ' + seq.lower[i + k];
      auto it = index_.find(key);
      if (it != index_.end()) {
        hits.push_back({it->second.cls, it->second.value, i, len});
        i += len;
        matched = true;
        break;
      }
    }
    if (!matched) ++i;
  }

  // A symptom preceded by a negator ("no tremors", "didn't fall") is negated.
  // The negator itself is not a conversational "no".
  std::vector<std::size_t> consumed_negators;
  for (auto& h : hits) {
    if (h.cls != PhraseClass::Symptom) continue;
    std::size_t looked = 0;
    for (std::size_t j = h.first; j-- > 0 && looked < kNegationWindow;) {
      const auto& tok = seq.lower[j];
      if (is_determiner(tok)) continue;
      ++looked;
      if (negators_.count(tok)) {
        h.negated = true;
        consumed_negators.push_back(j);
        break;
      }
    }
  }
  std::erase_if(hits, [&](const PhraseHit& h) {
    return h.cls == PhraseClass::Control && h.count == 1 &&
           std::find(consumed_negators.begin(), consumed_negators.end(), h.first) != consumed_negators.end();
  });
  return hits;
}

}  // namespace pdj::nlu

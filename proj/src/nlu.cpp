#include "pdjournal/nlu.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include <spdlog/spdlog.h>

#include "pdjournal/errors.hpp"
#include "pdjournal/llmgw.hpp"

namespace pdj::nlu {

namespace {

// Highest priority first when several controls appear without a symptom.
constexpr std::array<ControlKind, 7> kControlPriority = {
    ControlKind::Exit,     ControlKind::Restart, ControlKind::Skip,  ControlKind::Clarify,
    ControlKind::Confused, ControlKind::Deny,    ControlKind::Affirm,
};

const std::set<std::string, std::less<>> kDanglingEndings = {
    "and", "or", "but", "the", "a", "an", "to", "of", "with", "my", "for", "because", "if", "your", "about", "some"};

const std::set<std::string, std::less<>> kRequestVerbs = {"record", "journal", "log", "note", "tell", "talk", "report"};

constexpr std::array<std::string_view, 7> kAdjectiveSuffixes = {"ful", "ous", "ive", "able", "ible", "less", "ish"};

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() > suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool is_number(std::string_view tok) {
  return !tok.empty() && std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

std::string label_for(Symptom s) {
  return s == Symptom::Sleeplessness ? std::string("insomnia") : std::string(to_string(s));
}

std::vector<Symptom> mentioned_symptoms(const std::vector<PhraseHit>& hits) {
  std::vector<Symptom> out;
  for (const auto& h : hits) {
    if (h.cls != PhraseClass::Symptom || h.negated) continue;
    if (std::find(out.begin(), out.end(), h.symptom()) == out.end()) out.push_back(h.symptom());
  }
  return out;
}

}  // namespace

std::string_view to_string(Provider p) { return p == Provider::Pattern ? "pattern" : "language_model"; }

IntentResult classify_pattern(std::string_view input, const Lexicon& lexicon) {
  auto seq = tokenize(input);
  auto hits = lexicon.scan(seq);
  IntentResult r;
  r.provider = Provider::Pattern;

  std::vector<bool> covered(seq.size(), false);
  std::map<AnecdoteKind, std::pair<int, std::size_t>> anecdote_votes;  // kind -> (count, first token)
  for (const auto& h : hits) {
    for (std::size_t k = h.first; k < h.first + h.count; ++k) covered[k] = true;
    if (h.cls == PhraseClass::Control) r.controls.push_back(h.control());
    if (h.cls == PhraseClass::Advice) r.seeks_advice = true;
    if (h.cls == PhraseClass::Anecdote) {
      auto [it, fresh] = anecdote_votes.try_emplace(h.anecdote(), 0, h.first);
      it->second.first += 1;
    }
  }

  std::size_t content = 0;
  std::size_t content_covered = 0;
  for (std::size_t k = 0; k < seq.size(); ++k) {
    if (text::is_stopword(seq.lower[k])) continue;
    ++content;
    if (covered[k]) ++content_covered;
  }
  if (content == 0) {
    content = seq.size();
    content_covered = static_cast<std::size_t>(std::count(covered.begin(), covered.end(), true));
  }
  double coverage = content == 0 ? 0.0 : static_cast<double>(content_covered) / static_cast<double>(content);
  double confidence = std::clamp(coverage, kMinPatternConfidence, kMaxPatternConfidence);

  auto symptoms = mentioned_symptoms(hits);
  if (symptoms.size() >= 2) {
    r.intent = Intent::multiple(symptoms);
    r.sub_symptoms = symptoms;
    r.confidence = confidence;
    return r;
  }
  if (symptoms.size() == 1) {
    r.intent = Intent::symptom(symptoms.front());
    r.confidence = confidence;
    return r;
  }
  // A control phrase lost inside a longer answer ("yes, I took it at eight this morning") is not a command.
  for (auto kind : kControlPriority) {
    if (confidence < kRepairThreshold) break;
    if (std::find(r.controls.begin(), r.controls.end(), kind) != r.controls.end()) {
      r.intent = Intent::control(kind);
      r.confidence = confidence;
      return r;
    }
  }
  if (!anecdote_votes.empty()) {
    auto best = std::max_element(anecdote_votes.begin(), anecdote_votes.end(), [](const auto& a, const auto& b) {
      if (a.second.first != b.second.first) return a.second.first < b.second.first;
      return a.second.second > b.second.second;  // earlier mention wins ties
    });
    r.intent = Intent::anecdote(best->first);
    r.confidence = confidence;
    return r;
  }
  // Nothing recognised: a confident "none".
  r.intent = Intent::none();
  r.confidence = kMaxPatternConfidence;
  return r;
}

bool needs_repair(const IntentResult& r) {
  return r.intent.is(Intent::Kind::Asr) || (r.provider == Provider::Pattern && r.confidence < kRepairThreshold);
}

bool detect_asr(std::string_view input, const Lexicon& lexicon, const std::vector<std::string>& medication_names) {
  auto seq = tokenize(input);
  if (seq.empty()) return true;
  auto hits = lexicon.scan(seq);

  if (seq.size() < 2 && hits.empty() && !lexicon.known_word(seq.lower[0]) && !is_number(seq.lower[0])) return true;

  // Nothing but function words: a fragment whose content was lost.
  if (hits.empty() && std::all_of(seq.lower.begin(), seq.lower.end(), [](const std::string& w) { return text::is_stopword(w); })) {
    return true;
  }

  const auto& last = seq.lower.back();
  if (seq.size() >= 2 && kDanglingEndings.count(last)) return true;

  // "I would like to record successful": a request verb whose object is a bare modifier.
  bool has_symptom = std::any_of(hits.begin(), hits.end(), [](const PhraseHit& h) { return h.cls == PhraseClass::Symptom; });
  if (!has_symptom && seq.size() >= 3) {
    bool request = std::any_of(seq.lower.begin(), seq.lower.end() - 1,
                               [](const std::string& w) { return kRequestVerbs.count(w) > 0; });
    bool modifier_end = std::any_of(kAdjectiveSuffixes.begin(), kAdjectiveSuffixes.end(),
                                    [&](std::string_view suf) { return ends_with(last, suf); });
    if (request && modifier_end) return true;
  }

  // Medication names and clinical terms split into sound-alike pieces ("carpet leave a dopa").
  std::set<std::string> med_tokens;
  auto add_med = [&](std::string_view name) {
    for (const auto& t : tokenize(name).lower) {
      if (t.size() >= 5) med_tokens.insert(t);
    }
  };
  for (const auto& m : medication_names) add_med(m);
  for (const auto& m : lexicon.medication_vocabulary()) add_med(m);
  // Long clinical terms get mangled the same way ("disc in asia").
  for (const auto& [_, phrases] : lexicon.symptom_phrases()) {
    for (const auto& p : phrases) {
      if (p.find(' ') == std::string::npos && p.size() >= 8) med_tokens.insert(text::to_lower(p));
    }
  }
  if (!med_tokens.empty()) {
    for (std::size_t n = 2; n <= 4; ++n) {
      for (std::size_t i = 0; i + n <= seq.size(); ++i) {
        std::string joined;
        bool exact_med = false;
        bool has_oov = false;
        for (std::size_t k = i; k < i + n; ++k) {
          joined += seq.lower[k];
          if (med_tokens.count(seq.lower[k])) exact_med = true;
          if (!lexicon.known_word(seq.lower[k]) && !is_number(seq.lower[k])) has_oov = true;
        }
        if (exact_med || !has_oov) continue;
        for (const auto& med : med_tokens) {
          // Sound-alike renderings keep the onset and most of the length.
          if (joined.front() != med.front() || joined.size() * 10 < med.size() * 6) continue;
          auto d = text::edit_distance(joined, med);
          if (d >= 1 && d <= 3) return true;
        }
      }
    }
  }
  return false;
}

std::string pattern_label(std::string_view input, const Lexicon& lexicon,
                          const std::vector<std::string>& medication_names) {
  auto r = classify_pattern(input, lexicon);
  if (r.intent.is(Intent::Kind::Symptom)) return label_for(r.intent.symptoms().front());
  if (r.intent.is(Intent::Kind::Multiple)) return "multiple";
  if (detect_asr(input, lexicon, medication_names)) return "asr";
  return "none";
}

std::optional<Intent> parse_label(std::string_view reply) {
  std::string s = text::to_lower(text::trim(reply));
  auto strip = [](char c) {
    return c == '\'' || c == '"' || c == '`' || c == '.' || c == ',' || c == ';' || c == ':' || c == '!' ||
           std::isspace(static_cast<unsigned char>(c));
  };
  while (!s.empty() && strip(s.front())) s.erase(s.begin());
  while (!s.empty() && strip(s.back())) s.pop_back();
  if (s == "multiple") return std::nullopt;  // resolved by the caller, needs the symptom list
  if (s == "asr") return Intent::asr();
  if (s == "none") return Intent::none();
  if (s == "insomnia") return Intent::symptom(Symptom::Sleeplessness);
  if (auto sym = parse_symptom(s)) return Intent::symptom(*sym);
  return std::nullopt;
}

namespace {

bool is_multiple_label(std::string_view reply) {
  auto words = text::words(reply);
  return words.size() == 1 && words.front() == "multiple";
}

}  // namespace

IntentResult classify_llm(std::string_view input, llmgw::Gateway& gateway, const IntentPrompt& prompt,
                          const Lexicon& lexicon, const LlmOptions& options) {
  llmgw::CompletionRequest req;
  req.prompt = prompt.render(llmgw::redact(input, options.protected_identifiers));
  req.temperature = 0.0;
  req.max_tokens = options.max_tokens;
  req.deadline_ms = options.deadline_ms;
  req.purpose = "intent";
  req.protected_identifiers = options.protected_identifiers;

  std::string reply;
  try {
    reply = gateway.complete(req);
  } catch (const Error& e) {
    throw Error(Errc::ProviderUnavailable, e.what());
  }

  auto pattern = classify_pattern(input, lexicon);
  IntentResult r;
  r.provider = Provider::LanguageModel;
  r.confidence = 1.0;
  r.controls = pattern.controls;
  r.seeks_advice = pattern.seeks_advice;

  if (is_multiple_label(reply)) {
    // The model only says "multiple"; the individual symptoms come from the lexicon scan.
    auto symptoms = mentioned_symptoms(lexicon.scan(tokenize(input)));
    if (symptoms.size() >= 2) {
      r.intent = Intent::multiple(symptoms);
      r.sub_symptoms = symptoms;
    } else if (symptoms.size() == 1) {
      r.intent = Intent::symptom(symptoms.front());
    } else {
      r.intent = Intent::none();
    }
    return r;
  }
  auto parsed = parse_label(reply);
  if (!parsed) throw Error(Errc::UnparseableLabel, "model replied '" + reply + "'");
  r.intent = *parsed;
  return r;
}

std::vector<Clause> split_bulk(std::string_view input, const Lexicon& lexicon) {
  auto seq = tokenize(input);
  if (seq.empty()) return {};
  auto hits = lexicon.scan(seq);

  // Clause boundaries: sentence punctuation or commas between tokens, or a
  // coordinating conjunction (which belongs to neither clause).
  struct Segment {
    std::size_t first, last;  // inclusive token range
  };
  std::vector<Segment> segments;
  auto is_conj = [&](std::size_t k) { return seq.lower[k] == "and" || seq.lower[k] == "but"; };
  auto punct_between = [&](std::size_t k) {
    auto gap = input.substr(seq.end[k - 1], seq.begin[k] - seq.end[k - 1]);
    return gap.find_first_of(".!?;,") != std::string_view::npos || gap.find("…") != std::string_view::npos;
  };
  std::optional<std::size_t> open;
  for (std::size_t k = 0; k < seq.size(); ++k) {
    if (is_conj(k)) {
      if (open) segments.push_back({*open, k - 1});
      open.reset();
      continue;
    }
    if (open && punct_between(k)) {
      segments.push_back({*open, k - 1});
      open.reset();
    }
    if (!open) open = k;
  }
  if (open) segments.push_back({*open, seq.size() - 1});

  struct Group {
    Symptom symptom;
    std::size_t first, last;
  };
  std::vector<Group> groups;
  std::optional<std::size_t> leading;  // start of trigger-less text before the first symptom
  for (const auto& seg : segments) {
    std::optional<Symptom> found;
    for (const auto& h : hits) {
      if (h.cls == PhraseClass::Symptom && !h.negated && h.first >= seg.first && h.first <= seg.last) {
        bool seen = std::any_of(groups.begin(), groups.end(), [&](const Group& g) { return g.symptom == h.symptom(); });
        if (!seen) {
          found = h.symptom();
          break;
        }
      }
    }
    if (found) {
      groups.push_back({*found, leading.value_or(seg.first), seg.last});
      leading.reset();
    } else if (!groups.empty()) {
      groups.back().last = seg.last;
    } else if (!leading) {
      leading = seg.first;
    }
  }

  auto span_text = [&](std::size_t first, std::size_t last) {
    return std::string(input.substr(seq.begin[first], seq.end[last] - seq.begin[first]));
  };
  if (groups.empty()) return {};
  if (groups.size() == 1) return {{groups.front().symptom, text::trim(input)}};
  std::vector<Clause> out;
  for (const auto& g : groups) out.push_back({g.symptom, span_text(g.first, g.last)});
  return out;
}

bool seeks_advice(std::string_view input, const Lexicon& lexicon) {
  auto hits = lexicon.scan(tokenize(input));
  return std::any_of(hits.begin(), hits.end(), [](const PhraseHit& h) { return h.cls == PhraseClass::Advice; });
}

IntentClassifier::IntentClassifier(std::shared_ptr<const Lexicon> lexicon, std::shared_ptr<const IntentPrompt> prompt,
                                   LlmOptions options)
    : lexicon_(std::move(lexicon)), prompt_(std::move(prompt)), options_(std::move(options)) {}

IntentResult IntentClassifier::classify(std::string_view input, llmgw::Gateway* gateway,
                                        const std::vector<std::string>& medication_names,
                                        const std::vector<std::string>& protected_identifiers) const {
  auto pattern = classify_pattern(input, *lexicon_);
  // Conversational controls are not part of the model's label set.
  if (pattern.intent.is(Intent::Kind::Control)) return pattern;

  if (gateway != nullptr && prompt_ != nullptr) {
    auto options = options_;
    options.protected_identifiers.insert(options.protected_identifiers.end(), protected_identifiers.begin(),
                                         protected_identifiers.end());
    try {
      auto r = classify_llm(input, *gateway, *prompt_, *lexicon_, options);
      if (r.intent.is(Intent::Kind::None) && pattern.intent.is(Intent::Kind::Anecdote)) r.intent = pattern.intent;
      return r;
    } catch (const Error& e) {
      spdlog::warn("intent model unavailable, using pattern classifier: {}", e.what());
    }
  }
  if ((pattern.intent.is(Intent::Kind::None) || pattern.intent.is(Intent::Kind::Anecdote)) &&
      detect_asr(input, *lexicon_, medication_names)) {
    pattern.intent = Intent::asr();
  }
  return pattern;
}

}  // namespace pdj::nlu

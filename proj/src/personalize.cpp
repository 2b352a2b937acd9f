#include "pdjournal/personalize.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <spdlog/spdlog.h>

#include "pdjournal/errors.hpp"
#include "pdjournal/llmgw.hpp"
#include "pdjournal/text.hpp"

namespace pdj::personalize {

PersonalizeConfig PersonalizeConfig::from_json(const json& doc) {
  PersonalizeConfig c;
  try {
    c.similarity_threshold = doc.value("similarity_threshold", c.similarity_threshold);
    c.latency_ms = doc.value("latency_ms", c.latency_ms);
    c.token_budget = doc.value("token_budget", c.token_budget);
    c.k_history = doc.value("k_history", c.k_history);
    c.temperature = doc.value("temperature", c.temperature);
    c.max_tokens = doc.value("max_tokens", c.max_tokens);
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, std::string("personalize config: ") + e.what());
  }
  if (c.similarity_threshold < 0.0 || c.similarity_threshold > 1.0) {
    throw Error(Errc::ConfigError, "similarity_threshold must be within [0, 1]");
  }
  if (c.latency_ms <= 0 || c.token_budget == 0 || c.k_history == 0 || c.max_tokens <= 0) {
    throw Error(Errc::ConfigError, "latency_ms, token_budget, k_history and max_tokens must be positive");
  }
  return c;
}

PersonalizeConfig PersonalizeConfig::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

json PersonalizeConfig::to_json() const {
  return {{"similarity_threshold", similarity_threshold},
          {"latency_ms", latency_ms},
          {"token_budget", token_budget},
          {"k_history", k_history},
          {"temperature", temperature},
          {"max_tokens", max_tokens}};
}

std::size_t estimate_tokens(std::string_view s) {
  // Integer form of ceil(words * 1.3), free of floating-point drift.
  auto words = text::whitespace_word_count(s);
  return (words * 13 + 9) / 10;
}

double similarity(std::string_view a, std::string_view b) {
  auto ta = text::tokenize(a).lower;
  auto tb = text::tokenize(b).lower;
  if (ta.empty() && tb.empty()) return 1.0;
  if (ta.empty() || tb.empty()) return 0.0;
  std::map<std::string, double> fa, fb;
  for (const auto& t : ta) fa[t] += 1.0;
  for (const auto& t : tb) fb[t] += 1.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [t, v] : fa) {
    na += v * v;
    if (auto it = fb.find(t); it != fb.end()) dot += v * it->second;
  }
  for (const auto& [t, v] : fb) nb += v * v;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 1.0);
}

std::string render_profile(const PatientProfile& profile) {
  std::string out = "Name: " + std::string(llmgw::kRedactedName) + ".";
  if (!profile.medications.empty()) {
    out += " Medications:";
    for (std::size_t i = 0; i < profile.medications.size(); ++i) {
      const auto& m = profile.medications[i];
      out += (i ? "; " : " ") + m.name;
      if (!m.schedule_note.empty()) out += " (" + m.schedule_note + ")";
    }
    out += ".";
  }
  if (!profile.daily_activities.empty()) out += " Daily activities: " + text::join(profile.daily_activities, ", ") + ".";
  if (!profile.challenges.empty()) out += " Challenges: " + text::join(profile.challenges, ", ") + ".";
  return llmgw::redact(out, {profile.display_name});
}

namespace {

std::string speaker_label(Speaker s) { return s == Speaker::Patient ? "User" : "Chatbot"; }

}  // namespace

std::string render_turns(const std::vector<JournalEntry>& turns, const std::vector<std::string>& protected_ids) {
  if (turns.empty()) return "(none)";
  std::string out;
  for (const auto& t : turns) {
    if (!out.empty()) out += '\n';
    out += speaker_label(t.speaker) + ": " + t.text;
  }
  return llmgw::redact(out, protected_ids);
}

std::string render_history(const std::vector<journal::RetrievalHit>& hits,
                           const std::vector<std::string>& protected_ids) {
  if (hits.empty()) return "(none)";
  std::string out;
  for (const auto& h : hits) {
    if (!out.empty()) out += '\n';
    out += speaker_label(h.entry.speaker) + ": " + h.entry.text;
  }
  return llmgw::redact(out, protected_ids);
}

PromptBundle assemble(const prompts::PersonalizationPrompt& prompt, const std::vector<JournalEntry>& context,
                      const PatientProfile& profile, const std::vector<journal::RetrievalHit>& hits,
                      std::string_view probe, std::size_t budget) {
  if (text::trim(probe).empty()) throw Error(Errc::InvalidArgument, "probe must not be empty");
  const std::vector<std::string> ids = {profile.display_name};
  PromptBundle bundle;
  bundle.conversation_context = context;
  bundle.history = hits;
  bundle.probe = std::string(probe);
  bundle.profile_text = render_profile(profile);
  const auto redacted_probe = llmgw::redact(probe, ids);

  // Word counts per rendered line let the drop order be planned without re-rendering.
  auto line_words = [&](Speaker who, const std::string& t) {
    return text::whitespace_word_count(llmgw::redact(speaker_label(who) + ": " + t, ids));
  };
  std::vector<std::size_t> context_words, history_words;
  std::size_t words = prompt.fixed_word_count() + text::whitespace_word_count(bundle.profile_text) +
                      text::whitespace_word_count(redacted_probe);
  for (const auto& t : context) words += context_words.emplace_back(line_words(t.speaker, t.text));
  for (const auto& h : hits) words += history_words.emplace_back(line_words(h.entry.speaker, h.entry.text));
  auto fits = [&] {
    auto w = words + (bundle.history.empty() ? 1 : 0) + (bundle.conversation_context.empty() ? 1 : 0);  // "(none)"
    return (w * 13 + 9) / 10 <= budget;
  };
  std::size_t ctx_front = 0;
  while (!fits() && !bundle.history.empty()) {
    words -= history_words[bundle.history.size() - 1];
    bundle.history.pop_back();
    ++bundle.dropped_history;
  }
  while (!fits() && ctx_front < context_words.size()) words -= context_words[ctx_front++];
  bundle.conversation_context.erase(bundle.conversation_context.begin(),
                                    bundle.conversation_context.begin() + static_cast<std::ptrdiff_t>(ctx_front));
  bundle.dropped_context = ctx_front;

  for (;;) {
    bundle.rendered = prompt.render(render_turns(bundle.conversation_context, ids), bundle.profile_text,
                                    render_history(bundle.history, ids), redacted_probe);
    bundle.token_count = estimate_tokens(bundle.rendered);
    if (bundle.token_count <= budget) return bundle;
    if (!bundle.history.empty()) {
      bundle.history.pop_back();
      ++bundle.dropped_history;
    } else if (!bundle.conversation_context.empty()) {
      bundle.conversation_context.erase(bundle.conversation_context.begin());
      ++bundle.dropped_context;
    } else {
      throw Error(Errc::BudgetExceeded, "prompt needs " + std::to_string(bundle.token_count) +
                                            " tokens with only the probe and profile; budget is " +
                                            std::to_string(budget));
    }
  }
}

std::string_view to_string(Fallback f) {
  switch (f) {
    case Fallback::None: return "none";
    case Fallback::LowSimilarity: return "low_similarity";
    case Fallback::Timeout: return "timeout";
    case Fallback::ProviderError: return "provider_error";
    case Fallback::BudgetExceeded: return "budget_exceeded";
  }
  return "none";
}

std::string Provenance::tag() const {
  if (personalized()) return "personalized";
  return "fallback(" + std::string(to_string(fallback)) + ")";
}

std::string restore_name(std::string_view completion, std::string_view display_name) {
  std::string out(completion);
  const std::string placeholder(llmgw::kRedactedName);
  if (!display_name.empty()) {
    for (auto pos = out.find(placeholder); pos != std::string::npos; pos = out.find(placeholder, pos + display_name.size())) {
      out.replace(pos, placeholder.size(), display_name);
    }
    return out;
  }
  // No name on file: drop the placeholder and the punctuation that addressed it.
  for (auto pos = out.find(placeholder); pos != std::string::npos; pos = out.find(placeholder)) {
    auto end = pos + placeholder.size();
    while (end < out.size() && (out[end] == ',' || out[end] == ' ')) ++end;
    auto begin = pos;
    while (begin > 0 && (out[begin - 1] == ',' || out[begin - 1] == ' ')) --begin;
    bool sentence_start = begin == 0;
    const bool glue = begin == 0 || end == out.size() || std::ispunct(static_cast<unsigned char>(out[end]));
    out.replace(begin, end - begin, glue ? "" : " ");
    if (sentence_start && !out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  }
  return text::trim(out);
}

PersonalizeResult personalize(const prompts::PersonalizationPrompt& prompt, std::string_view probe,
                              const std::vector<JournalEntry>& context, const PatientProfile& profile,
                              const std::vector<journal::RetrievalHit>& hits, llmgw::Gateway& gateway,
                              const PersonalizeConfig& cfg) {
  PersonalizeResult result;
  result.text = std::string(probe);
  auto fallback = [&](Fallback why) {
    result.text = std::string(probe);
    result.provenance.fallback = why;
    return result;
  };

  PromptBundle bundle;
  try {
    bundle = assemble(prompt, context, profile, hits, probe, cfg.token_budget);
  } catch (const Error& e) {
    if (e.code() != Errc::BudgetExceeded) throw;
    return fallback(Fallback::BudgetExceeded);
  }
  result.prompt_tokens = bundle.token_count;

  llmgw::CompletionRequest req;
  req.prompt = bundle.rendered;
  req.temperature = cfg.temperature;
  req.max_tokens = cfg.max_tokens;
  req.deadline_ms = cfg.latency_ms;
  req.purpose = "personalize";
  if (!profile.display_name.empty()) req.protected_identifiers = {profile.display_name};

  std::string completion;
  try {
    completion = gateway.complete(req);
  } catch (const Error& e) {
    spdlog::info("personalization fell back: {}", e.what());
    return fallback(e.code() == Errc::Timeout ? Fallback::Timeout : Fallback::ProviderError);
  }

  auto candidate = restore_name(text::trim(completion), profile.display_name);
  result.similarity = similarity(candidate, probe);
  if (candidate.empty() || result.similarity < cfg.similarity_threshold) {
    auto r = fallback(Fallback::LowSimilarity);
    r.similarity = result.similarity;
    return r;
  }
  result.text = std::move(candidate);
  result.provenance.fallback = Fallback::None;
  return result;
}

}  // namespace pdj::personalize

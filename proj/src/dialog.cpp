#include "pdjournal/dialog.hpp"

#include <algorithm>
#include <chrono>
#include <set>

#include <spdlog/spdlog.h>

#include "pdjournal/errors.hpp"
#include "pdjournal/text.hpp"

namespace pdj::dialog {

namespace {

const std::set<std::string, std::less<>> kNegativeWords = {
    "worse",   "bad",      "terrible", "awful",    "pain",       "painful", "hurt",   "hurts",
    "sad",     "depressed", "anxious", "worried",  "scared",     "tired",   "exhausted", "struggling",
    "struggle", "difficult", "hard",   "frustrated", "upset",    "miserable", "horrible", "lonely",
    "poor",    "sick",     "unwell",   "nightmare", "nightmares", "worst",  "fell",   "scary"};

const std::set<std::string, std::less<>> kPositiveWords = {
    "good",     "great",   "glad",   "better", "happy",   "wonderful", "excellent", "nice",
    "improved", "relaxed", "enjoyed", "awesome", "fantastic", "best",   "lovely",  "fine"};

const std::set<std::string, std::less<>> kNegators = {"not", "no", "never", "don't", "didn't", "isn't", "wasn't",
                                                      "aren't", "haven't", "hasn't", "can't", "couldn't", "won't",
                                                      "wouldn't", "doesn't", "nothing"};

std::string required(const json& doc, const char* key) {
  if (!doc.contains(key) || !doc[key].is_string()) {
    throw Error(Errc::ConfigError, std::string("dialog templates: missing string '") + key + "'");
  }
  return doc[key].get<std::string>();
}

std::string join_labels(const std::vector<std::string>& labels) {
  if (labels.empty()) return {};
  if (labels.size() == 1) return labels.front();
  std::string out;
  for (std::size_t i = 0; i + 1 < labels.size(); ++i) out += (i ? ", " : "") + labels[i];
  return out + " and " + labels.back();
}

std::int64_t wall_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

std::string_view to_string(Affect a) {
  switch (a) {
    case Affect::Positive: return "positive";
    case Affect::Negative: return "negative";
    case Affect::Neutral: return "neutral";
  }
  return "neutral";
}

Affect detect_affect(std::string_view utterance) {
  auto toks = text::tokenize(utterance).lower;
  int score = 0;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    bool negated = false;
    for (std::size_t j = i; j-- > 0 && i - j <= 2;) {
      if (kNegators.count(toks[j])) negated = true;
    }
    if (kPositiveWords.count(toks[i])) score += negated ? -1 : 1;
    else if (kNegativeWords.count(toks[i]) && !negated) score -= 1;
  }
  if (score > 0) return Affect::Positive;
  if (score < 0) return Affect::Negative;
  return Affect::Neutral;
}

Templates Templates::from_json(const json& doc) {
  if (!doc.is_object() || doc.value("v", 0) != 1) {
    throw Error(Errc::ConfigError, "dialog templates must be an object with \"v\": 1");
  }
  Templates t;
  t.greeting = required(doc, "greeting");
  t.greeting_no_name = required(doc, "greeting_no_name");
  t.open_prompt = required(doc, "open_prompt");
  t.anything_else = required(doc, "anything_else");
  t.recorded = required(doc, "recorded");
  t.farewell = required(doc, "farewell");
  t.restart = required(doc, "restart");
  t.acknowledgment = required(doc, "acknowledgment");
  t.symptom_acknowledgment = required(doc, "symptom_acknowledgment");
  t.empathy_negative = required(doc, "empathy_negative");
  t.empathy_positive = required(doc, "empathy_positive");
  t.empathy_neutral = required(doc, "empathy_neutral");
  t.repair = required(doc, "repair");
  t.repair_skip_offer = required(doc, "repair_skip_offer");
  t.refusal = required(doc, "refusal");
  t.topic_switch_confirm = required(doc, "topic_switch_confirm");
  t.clarify_fallback = required(doc, "clarify_fallback");
  t.clarify_open = required(doc, "clarify_open");
  t.skip_acknowledgment = required(doc, "skip_acknowledgment");
  for (const auto& p : doc.value("advice_deny_list", json::array())) t.advice_deny_list.push_back(p.get<std::string>());
  return t;
}

Templates Templates::load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

std::optional<std::string> advice_violation(std::string_view reply, const std::vector<std::string>& deny_list) {
  auto hay = " " + text::join(text::tokenize(reply).lower, " ") + " ";
  for (const auto& phrase : deny_list) {
    auto needle = " " + text::join(text::tokenize(phrase).lower, " ") + " ";
    if (needle.size() > 2 && hay.find(needle) != std::string::npos) return phrase;
  }
  return std::nullopt;
}

/// Mutable working copy of one turn: the evolving state plus everything said.
class DialogEngine::Turn {
public:
  Turn(const DialogEngine& engine, const SessionState& state, const TurnContext& ctx)
      : e_(engine), ctx_(ctx), tpl_(*engine.templates_) {
    action_.next_state = state;
    if (ctx.gateway) {
      std::shared_ptr<llmgw::Gateway> inner(ctx.gateway, [](llmgw::Gateway*) {});
      observed_ = std::make_shared<llmgw::ObservedGateway>(std::move(inner), ctx.observer,
                                                           [this] { return e_.now_ms(); });
    }
  }

  void run(std::string_view utterance);
  void terminate() {
    say(tpl_.farewell);
    st().rule_stack.clear();
    st().pending_switch.clear();
    st().last_question.clear();
    st().phase = Phase::Ended;
    action_.session_over = true;
  }

  DialogAction finish() {
    if (observed_) action_.busy = observed_->spans();
    return std::move(action_);
  }

private:
  SessionState& st() { return action_.next_state; }
  ActiveRule* top() { return st().rule_stack.empty() ? nullptr : &st().rule_stack.back(); }
  llmgw::Gateway* gateway() { return observed_.get(); }

  std::vector<std::string> protected_ids() const {
    if (ctx_.profile.display_name.empty()) return {};
    return {ctx_.profile.display_name};
  }

  JournalEntry entry(Speaker who, std::string text) {
    JournalEntry e;
    e.patient_id = st().patient_id;
    e.session_id = st().session_id;
    e.timestamp_ms = e_.now_ms();
    e.speaker = who;
    e.text = std::move(text);
    return e;
  }

  void record_user(std::string_view utterance, const Intent& intent, std::optional<ProbingTopic> topic) {
    auto e = entry(Speaker::Patient, std::string(utterance));
    e.intent_tag = intent;
    e.topic_tag = topic;
    st().transcript.push_back(e);
    action_.writes.push_back(std::move(e));
  }

  void say(const std::string& reply, std::optional<ProbingTopic> topic = std::nullopt,
           std::optional<personalize::Provenance> provenance = std::nullopt) {
    auto e = entry(Speaker::Agent, reply);
    e.topic_tag = topic;
    st().transcript.push_back(e);
    action_.writes.push_back(std::move(e));
    action_.replies.push_back(reply);
    action_.provenance.push_back(provenance);
  }

  // A question the patient is expected to answer, personalized when possible.
  std::string ask(const std::string& canonical, std::optional<ProbingTopic> topic, std::optional<Symptom> symptom) {
    std::string delivered = canonical;
    std::optional<personalize::Provenance> provenance;
    if (e_.options_.personalize && gateway() && e_.personalization_prompt_) {
      std::vector<JournalEntry> context(st().transcript.begin(), st().transcript.end());
      std::vector<journal::RetrievalHit> hits;
      if (ctx_.store) {
        std::string said;
        for (const auto& t : st().transcript) {
          if (t.speaker == Speaker::Patient) said += t.text + " ";
        }
        try {
          hits = ctx_.store->query_history(st().patient_id, canonical, said, e_.personalize_config_.k_history,
                                           st().session_id, symptom);
        } catch (const Error& err) {
          if (err.code() != Errc::UnknownPatient) throw;
        }
      }
      auto res = personalize::personalize(*e_.personalization_prompt_, canonical, context, ctx_.profile, hits,
                                          *gateway(), e_.personalize_config_);
      delivered = res.text;
      provenance = res.provenance;
    }
    say(delivered, topic, provenance);
    st().last_question = delivered;
    return delivered;
  }

  void ask_probe() {
    auto* rule = top();
    auto topic = rule->remaining_topics.front();
    auto sym = rule->symptom;
    auto asked = ask(e_.canonical_probe(sym, topic, ctx_.profile), topic, sym);
    top()->last_asked = asked;
    st().phase = Phase::InFollowups;
  }

  void ask_anything_else() {
    ask(tpl_.anything_else, std::nullopt, std::nullopt);
    st().phase = Phase::ClosingConfirm;
  }

  void ask_open() {
    ask(tpl_.open_prompt, std::nullopt, std::nullopt);
    st().phase = Phase::OpenPrompt;
  }

  // Re-asks the pending question verbatim.
  void reask() {
    if (st().last_question.empty()) st().last_question = tpl_.open_prompt;
    say(st().last_question, pending_topic());
  }

  std::optional<ProbingTopic> pending_topic() {
    if (st().phase != Phase::InFollowups || !top() || top()->remaining_topics.empty()) return std::nullopt;
    return top()->remaining_topics.front();
  }

  void empathize(Affect a, bool neutral_too) {
    if (a == Affect::Negative) say(tpl_.empathy_negative);
    else if (a == Affect::Positive) say(tpl_.empathy_positive);
    else if (neutral_too) say(tpl_.empathy_neutral);
  }

  std::string label(Symptom s) const {
    const auto& labels = e_.followups_->labels;
    auto it = labels.find(s);
    return it == labels.end() ? std::string(to_string(s)) : it->second;
  }

  // Pops finished rules and asks whatever comes next.
  void continue_agenda(bool acknowledge_completion) {
    bool completed = false;
    while (top() && top()->remaining_topics.empty()) {
      st().rule_stack.pop_back();
      completed = true;
    }
    if (completed && acknowledge_completion) say(tpl_.recorded);
    if (top()) {
      ask_probe();
    } else {
      ask_anything_else();
    }
  }

  void answer(std::string_view utterance) {
    auto* rule = top();
    auto topic = rule->remaining_topics.front();
    rule->answered[topic] = std::string(utterance);
    rule->remaining_topics.pop_front();
    bool finishing = rule->remaining_topics.empty();
    empathize(detect_affect(utterance), !finishing);
    continue_agenda(true);
  }

  void skip_topic() {
    say(tpl_.skip_acknowledgment);
    top()->remaining_topics.pop_front();
    continue_agenda(true);
  }

  // Pushes rules so the first-mentioned symptom is handled first, then asks its first question.
  void activate(const std::vector<Symptom>& symptoms, const std::map<Symptom, std::string>& reports) {
    for (auto it = symptoms.rbegin(); it != symptoms.rend(); ++it) {
      if (st().has_rule_for(*it)) continue;
      auto topics = e_.followups_->topics.find(*it);
      if (topics == e_.followups_->topics.end() || topics->second.empty()) continue;
      ActiveRule rule;
      rule.symptom = *it;
      rule.remaining_topics.assign(topics->second.begin(), topics->second.end());
      auto rep = reports.find(*it);
      if (rep != reports.end()) rule.report = rep->second;
      st().rule_stack.push_back(std::move(rule));
    }
    st().pending_switch.clear();
    if (top() && !top()->remaining_topics.empty()) {
      ask_probe();
    } else {
      ask_anything_else();
    }
  }

  void repair() {
    st().consecutive_repairs += 1;
    repaired_ = true;
    say(tpl_.repair);
    if (st().consecutive_repairs >= 2 && pending_topic()) say(tpl_.repair_skip_offer);
    reask();
  }

  void clarify(std::string_view utterance) {
    std::string explanation;
    if (auto topic = pending_topic()) {
      const auto& descriptions = e_.followups_->topic_descriptions;
      auto d = descriptions.find(*topic);
      std::string description = d == descriptions.end() ? std::string(to_string(*topic)) : d->second;
      if (gateway() && e_.clarification_prompt_) {
        auto ids = protected_ids();
        llmgw::CompletionRequest req;
        req.prompt = e_.clarification_prompt_->render(llmgw::redact(st().last_question, ids),
                                                      llmgw::redact(utterance, ids), description);
        req.temperature = 0.0;
        req.max_tokens = 64;
        req.deadline_ms = e_.options_.clarify_deadline_ms;
        req.purpose = "clarify";
        req.protected_identifiers = ids;
        try {
          explanation = personalize::restore_name(text::trim(gateway()->complete(req)), ctx_.profile.display_name);
        } catch (const Error& err) {
          spdlog::info("clarification fell back: {}", err.what());
        }
        if (auto bad = advice_violation(explanation, tpl_.advice_deny_list)) {
          spdlog::warn("clarification discarded for advice phrasing '{}'", *bad);
          explanation.clear();
        }
      }
      if (explanation.empty()) explanation = render_template(tpl_.clarify_fallback, {{"topic", description}});
    } else {
      explanation = tpl_.clarify_open;
    }
    say(explanation);
    reask();
  }

  void resume_after_declined_switch() {
    st().pending_switch.clear();
    if (top() && !top()->remaining_topics.empty()) {
      st().phase = Phase::InFollowups;
      say(tpl_.skip_acknowledgment);
      if (top()->last_asked.empty()) {
        ask_probe();
      } else {
        st().last_question = top()->last_asked;
        reask();
      }
    } else {
      continue_agenda(false);
    }
  }

  void on_control(ControlKind kind, std::string_view utterance);
  void on_symptoms(const nlu::IntentResult& r, std::string_view utterance);
  void on_other(const nlu::IntentResult& r, std::string_view utterance);

  const DialogEngine& e_;
  const TurnContext& ctx_;
  const Templates& tpl_;
  std::shared_ptr<llmgw::ObservedGateway> observed_;
  DialogAction action_;
  bool repaired_ = false;
};

void DialogEngine::Turn::run(std::string_view utterance) {
  std::vector<std::string> meds;
  for (const auto& m : ctx_.profile.medications) meds.push_back(m.name);
  auto r = e_.classifier_->classify(utterance, gateway(), meds, protected_ids());
  action_.intent = r;
  record_user(utterance, r.intent, pending_topic());

  if (r.seeks_advice) {
    say(tpl_.refusal);
    reask();
  } else if (nlu::needs_repair(r)) {
    repair();
  } else if (r.intent.is(Intent::Kind::Control)) {
    on_control(r.intent.control_kind(), utterance);
  } else if (r.intent.is(Intent::Kind::Symptom) || r.intent.is(Intent::Kind::Multiple)) {
    on_symptoms(r, utterance);
  } else {
    on_other(r, utterance);
  }
  if (!repaired_) st().consecutive_repairs = 0;
}

void DialogEngine::Turn::on_control(ControlKind kind, std::string_view utterance) {
  const auto phase = st().phase;
  switch (kind) {
    case ControlKind::Exit:
      if (phase == Phase::ClosingConfirm) {
        terminate();
      } else {
        ask_anything_else();
      }
      return;
    case ControlKind::Restart:
      say(tpl_.restart);
      st().rule_stack.clear();
      st().pending_switch.clear();
      st().phase = Phase::Ended;
      action_.session_over = true;
      action_.restart_requested = true;
      return;
    case ControlKind::Skip:
      if (phase == Phase::AwaitingTopicSwitchConfirm) {
        resume_after_declined_switch();
      } else if (pending_topic()) {
        skip_topic();
      } else {
        say(tpl_.skip_acknowledgment);
        ask_anything_else();
      }
      return;
    case ControlKind::Clarify:
    case ControlKind::Confused:
      clarify(utterance);
      return;
    case ControlKind::Affirm:
      if (phase == Phase::AwaitingTopicSwitchConfirm) {
        activate(st().pending_switch, {});
      } else if (pending_topic()) {
        answer(utterance);
      } else if (phase == Phase::ClosingConfirm && top() && !top()->remaining_topics.empty()) {
        st().phase = Phase::InFollowups;
        st().last_question = top()->last_asked;
        reask();
      } else {
        ask_open();
      }
      return;
    case ControlKind::Deny:
      if (phase == Phase::AwaitingTopicSwitchConfirm) {
        resume_after_declined_switch();
      } else if (pending_topic()) {
        answer(utterance);
      } else if (phase == Phase::ClosingConfirm) {
        terminate();
      } else {
        ask_anything_else();
      }
      return;
  }
}

void DialogEngine::Turn::on_symptoms(const nlu::IntentResult& r, std::string_view utterance) {
  const auto& mentioned = r.intent.symptoms();
  std::map<Symptom, std::string> reports;
  for (const auto& clause : nlu::split_bulk(utterance, e_.classifier_->lexicon())) reports.emplace(clause.symptom, clause.text);
  for (auto s : mentioned) reports.emplace(s, std::string(utterance));

  std::vector<Symptom> fresh;
  for (auto s : mentioned) {
    if (!st().has_rule_for(s)) fresh.push_back(s);
  }
  const bool wants_skip =
      std::find(r.controls.begin(), r.controls.end(), ControlKind::Skip) != r.controls.end();

  if (st().phase == Phase::AwaitingTopicSwitchConfirm) {
    // "yes, my pain": the confirmation plus any newly named symptom.
    auto nest = st().pending_switch;
    for (auto s : fresh) {
      if (std::find(nest.begin(), nest.end(), s) == nest.end()) nest.push_back(s);
    }
    activate(nest, reports);
    return;
  }

  if (pending_topic()) {
    if (fresh.empty()) {
      if (wants_skip) {
        skip_topic();
      } else {
        answer(utterance);
      }
      return;
    }
    // A different symptom mid-agenda: confirm before switching.
    if (wants_skip) top()->remaining_topics.pop_front();
    st().pending_switch = fresh;
    st().phase = Phase::AwaitingTopicSwitchConfirm;
    std::vector<std::string> labels;
    for (auto s : fresh) labels.push_back(label(s));
    empathize(detect_affect(utterance), false);
    auto question = render_template(tpl_.topic_switch_confirm, {{"symptom", join_labels(labels)}});
    say(question);
    st().last_question = question;
    return;
  }

  auto affect = detect_affect(utterance);
  if (affect == Affect::Neutral) {
    say(tpl_.symptom_acknowledgment);
  } else {
    empathize(affect, false);
  }
  if (fresh.empty()) {
    // Every mentioned symptom already has an open agenda; resume it.
    continue_agenda(false);
    return;
  }
  activate(fresh, reports);
}

void DialogEngine::Turn::on_other(const nlu::IntentResult& r, std::string_view utterance) {
  if (pending_topic()) {
    answer(utterance);
    return;
  }
  if (st().phase == Phase::AwaitingTopicSwitchConfirm) {
    repair();
    return;
  }
  if (r.intent.is(Intent::Kind::Anecdote)) {
    switch (r.intent.anecdote_kind()) {
      case AnecdoteKind::Positive: say(tpl_.empathy_positive); break;
      case AnecdoteKind::Negative: say(tpl_.empathy_negative); break;
      default: say(tpl_.acknowledgment); break;
    }
  } else {
    auto affect = detect_affect(utterance);
    if (affect == Affect::Neutral) {
      say(tpl_.acknowledgment);
    } else {
      empathize(affect, false);
    }
  }
  ask_anything_else();
}

DialogEngine::DialogEngine(std::shared_ptr<const nlu::IntentClassifier> classifier,
                           std::shared_ptr<const FollowUpConfig> followups, std::shared_ptr<const Templates> templates,
                           std::shared_ptr<const prompts::PersonalizationPrompt> personalization_prompt,
                           std::shared_ptr<const prompts::ClarificationPrompt> clarification_prompt,
                           personalize::PersonalizeConfig personalize_config, EngineOptions options)
    : classifier_(std::move(classifier)),
      followups_(std::move(followups)),
      templates_(std::move(templates)),
      personalization_prompt_(std::move(personalization_prompt)),
      clarification_prompt_(std::move(clarification_prompt)),
      personalize_config_(personalize_config),
      options_(std::move(options)) {
  if (!classifier_ || !followups_ || !templates_) throw Error(Errc::InvalidArgument, "dialog engine needs its configs");
  auto problems = validate_config(*followups_);
  if (!problems.empty()) throw Error(Errc::ConfigError, "follow-up config: " + problems.front());
}

std::int64_t DialogEngine::now_ms() const { return options_.clock_ms ? options_.clock_ms() : wall_ms(); }

std::string DialogEngine::canonical_probe(Symptom s, ProbingTopic t, const PatientProfile& profile) const {
  auto it = followups_->templates.find({s, t});
  if (it == followups_->templates.end() || it->second.empty()) {
    throw Error(Errc::ConfigError, "no template for " + std::string(to_string(s)) + "/" + std::string(to_string(t)));
  }
  TemplateVars vars;
  vars["name"] = profile.display_name;
  auto label = followups_->labels.find(s);
  vars["symptom"] = label == followups_->labels.end() ? std::string(to_string(s)) : label->second;
  vars["medication"] = profile.medications.empty() ? std::string("Parkinson's medication") : profile.medications.front().name;
  return render_template(it->second.front(), vars);
}

DialogAction DialogEngine::begin_session(const PatientProfile& profile, std::string session_id) const {
  DialogAction action;
  auto& st = action.next_state;
  st.session_id = std::move(session_id);
  st.patient_id = profile.patient_id;
  st.phase = Phase::OpenPrompt;
  st.last_question = templates_->open_prompt;

  std::string greeting = profile.display_name.empty()
                             ? templates_->greeting_no_name
                             : render_template(templates_->greeting, {{"name", profile.display_name}});
  JournalEntry e;
  e.patient_id = st.patient_id;
  e.session_id = st.session_id;
  e.timestamp_ms = now_ms();
  e.speaker = Speaker::Agent;
  e.text = greeting;
  st.transcript.push_back(e);
  action.writes.push_back(std::move(e));
  action.replies.push_back(std::move(greeting));
  action.provenance.emplace_back();
  return action;
}

DialogAction DialogEngine::handle(const SessionState& state, std::string_view utterance, const TurnContext& ctx) const {
  if (state.phase == Phase::Ended) throw Error(Errc::SessionClosed, "session " + state.session_id + " has ended");
  Turn turn(*this, state, ctx);
  turn.run(utterance);
  return turn.finish();
}

DialogAction DialogEngine::terminate(const SessionState& state, const TurnContext& ctx) const {
  Turn turn(*this, state, ctx);
  turn.terminate();
  return turn.finish();
}

}  // namespace pdj::dialog

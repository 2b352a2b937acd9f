// Release gate: one PASS/FAIL line per acceptance criterion, nonzero exit on any failure.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <spdlog/spdlog.h>

#include "bm25_oracle.hpp"
#include "pdjournal/errors.hpp"
#include "pdjournal/evalharness.hpp"
#include "test_support.hpp"

using namespace pdj;
using Clock = std::chrono::steady_clock;

namespace {

// Collects failed expectations for one criterion.
class Check {
public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++count_;
  }
  bool ok() const { return count_ == 0; }
  std::string summary() const {
    std::string s;
    for (const auto& f : failures_) s += (s.empty() ? "" : "; ") + f;
    if (count_ > failures_.size()) s += "; +" + std::to_string(count_ - failures_.size()) + " more";
    return s;
  }

private:
  std::vector<std::string> failures_;
  std::size_t count_ = 0;
};

// Forwards to an inner gateway and keeps every personalization exchange.
class Tap : public llmgw::Gateway {
public:
  explicit Tap(std::shared_ptr<llmgw::Gateway> inner) : inner_(std::move(inner)) {}
  std::string name() const override { return "tap"; }

  struct Exchange {
    std::string prompt;
    std::string completion;
  };
  std::vector<Exchange> personalizations;
  std::size_t max_prompt_tokens = 0;
  std::size_t prompts_seen = 0;

protected:
  std::string do_complete(const llmgw::CompletionRequest& req) override {
    {
      std::lock_guard lock(mu_);
      ++prompts_seen;
      max_prompt_tokens = std::max(max_prompt_tokens, personalize::estimate_tokens(req.prompt));
    }
    auto out = inner_->complete(req);
    if (req.purpose == "personalize") {
      std::lock_guard lock(mu_);
      personalizations.push_back({req.prompt, out});
    }
    return out;
  }

private:
  std::shared_ptr<llmgw::Gateway> inner_;
  std::mutex mu_;
};

eval::ConfusionTable confusions() { return eval::ConfusionTable::load(support::data_dir() / "asr_confusions.json"); }

eval::SimLog simulate(const eval::PatientScript& script, llmgw::Gateway& gw,
                      std::shared_ptr<dialog::DialogEngine> engine = nullptr) {
  support::TempDir dir;
  journal::JournalStore store(dir.path(), {.sync = false});
  if (!engine) engine = service::make_engine(support::assets(), support::deterministic_options());
  auto table = confusions();
  return eval::simulate(script, {engine.get(), &gw, &store, &table});
}

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

// ---------------------------------------------------------------------------

Check intent_suite() {
  Check c;
  auto start = Clock::now();
  auto corpus = eval::load_intent_corpus(support::data_dir() / "corpus" / "intents.json");
  c.expect(corpus.size() >= 200, "corpus has " + std::to_string(corpus.size()) + " items, need >= 200");
  std::map<std::string, std::size_t> per_symptom;
  for (const auto& item : corpus) {
    if (item.label.is(Intent::Kind::Symptom)) per_symptom[item.label.tag()]++;
  }
  for (auto s : kAllSymptoms) {
    auto n = per_symptom[Intent::symptom(s).tag()];
    c.expect(n >= 10, std::string(to_string(s)) + " has " + std::to_string(n) + " items");
  }
  nlu::IntentClassifier classifier(support::assets().lexicon, support::assets().intent_prompt);
  auto gw = support::mock();
  auto report = eval::evaluate_intents(corpus, classifier, gw.get());
  c.expect(report.accuracy >= 0.95, "accuracy " + std::to_string(report.accuracy));
  c.expect(report.exemplars > 0 && report.exemplar_errors == 0,
           "exemplar errors " + std::to_string(report.exemplar_errors) + " of " + std::to_string(report.exemplars));
  for (const auto& f : report.failures) c.expect(!f.exemplar, "exemplar '" + f.text + "' -> " + f.predicted);
  auto elapsed = seconds_since(start);
  c.expect(elapsed < 10.0, "runtime " + std::to_string(elapsed) + " s");
  return c;
}

Check bm25_oracle() {
  Check c;
  auto start = Clock::now();
  std::mt19937_64 rng(20240501);
  for (int round = 0; round < 500; ++round) {
    support::TempDir dir;
    journal::JournalStore store(dir.path(), {.sync = false});
    store.put_profile(support::sample_profile());
    const std::size_t n = 1 + rng() % 50;
    std::vector<JournalEntry> batch;
    for (std::size_t i = 0; i < n; ++i) {
      JournalEntry e;
      e.patient_id = "alex";
      e.session_id = "s" + std::to_string(rng() % 4);
      e.speaker = rng() % 2 ? Speaker::Patient : Speaker::Agent;
      e.text = support::random_text(rng, 0, 20);
      batch.push_back(std::move(e));
    }
    store.append_batch(batch);
    const std::string current = "s" + std::to_string(rng() % 5);
    std::vector<JournalEntry> corpus;
    for (const auto& e : store.entries("alex")) {
      if (e.session_id != current) corpus.push_back(e);
    }
    auto probe = support::random_text(rng, 1, 8);
    auto context = support::random_text(rng, 0, 8);
    const std::size_t k = 1 + rng() % 10;
    auto got = store.query_history("alex", probe, context, k, current);
    auto want = support::bm25_oracle(corpus, probe + " " + context, k);
    const auto tag = "corpus " + std::to_string(round);
    if (got.size() != want.size()) {
      c.expect(false, tag + ": " + std::to_string(got.size()) + " hits vs oracle " + std::to_string(want.size()));
      continue;
    }
    for (std::size_t i = 0; i < got.size(); ++i) {
      c.expect(got[i].entry.entry_id == want[i].entry_id, tag + ": rank " + std::to_string(i + 1) + " differs");
      c.expect(std::abs(got[i].score - want[i].score) <= 1e-9, tag + ": score differs at rank " + std::to_string(i + 1));
    }
  }
  auto elapsed = seconds_since(start);
  c.expect(elapsed < 30.0, "runtime " + std::to_string(elapsed) + " s");
  return c;
}

Check personalization_gate() {
  Check c;
  auto script = eval::load_scripts(support::data_dir() / "scripts" / "personalization_20turn.json").at(0);
  const auto& prompt = *support::assets().personalization_prompt;

  {
    Tap tap(support::mock());
    auto log = simulate(script, tap);
    c.expect(log.turns.size() == 20, "script played " + std::to_string(log.turns.size()) + " turns");
    for (std::size_t i = 0; i < log.turns.size(); ++i) {
      const auto& t = log.turns[i];
      std::size_t personalized = 0;
      for (const auto& p : t.provenance) {
        if (p.empty()) continue;
        c.expect(p == "personalized", "turn " + std::to_string(i + 1) + " provenance " + p);
        personalized += p == "personalized";
      }
      if (!t.session_over) c.expect(personalized > 0, "turn " + std::to_string(i + 1) + " has no personalized reply");
    }
    c.expect(!tap.personalizations.empty(), "no personalization calls");
    for (const auto& x : tap.personalizations) {
      auto probe = prompt.extract_probe(x.prompt);
      c.expect(probe.has_value(), "unparseable personalization prompt");
      if (!probe) continue;
      auto candidate = personalize::restore_name(x.completion, script.profile.display_name);
      auto sim = personalize::similarity(candidate, *probe);
      c.expect(sim >= 0.70, "similarity " + std::to_string(sim) + " for '" + candidate + "'");
    }
  }

  auto all_tagged = [&](const eval::SimLog& log, const std::string& want, const std::string& label) {
    std::size_t tagged = 0;
    for (const auto& t : log.turns) {
      for (const auto& p : t.provenance) {
        if (p.empty()) continue;
        ++tagged;
        c.expect(p == want, label + ": provenance " + p);
      }
    }
    c.expect(tagged > 0, label + ": no tagged replies");
  };

  {
    auto gw = support::mock({.mode = llmgw::MockProvider::Mode::Unrelated});
    all_tagged(simulate(script, *gw), "fallback(low_similarity)", "unrelated mock");
  }
  {
    auto assets = support::assets();
    assets.personalize_config.latency_ms = 100;
    auto engine = service::make_engine(assets, support::deterministic_options());
    auto gw = support::mock({.delay_ms = 400, .delay_personalization_only = true});
    all_tagged(simulate(script, *gw, engine), "fallback(timeout)", "delayed mock");
  }

  const std::vector<std::pair<std::size_t, std::size_t>> pairs = {{66, 82}, {110, 155}, {28, 34}, {67, 71}, {12, 15},
                                                                  {64, 74}, {5, 7},     {40, 55}, {82, 92}};
  const std::vector<double> expected = {0.80, 0.71, 0.82, 0.94, 0.80, 0.86, 0.71, 0.73, 0.89};
  std::vector<double> rates;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    rates.push_back(eval::personalization_rate(pairs[i].first, pairs[i].second));
    c.expect(rates.back() == expected[i], std::to_string(pairs[i].first) + "/" + std::to_string(pairs[i].second) +
                                              " -> " + std::to_string(rates.back()));
  }
  auto agg = eval::aggregate(rates);
  c.expect(agg.mean == 0.81, "mean " + std::to_string(agg.mean));
  return c;
}

Check dialogue_state_machine() {
  Check c;
  const auto& tpl = *support::assets().templates;

  {
    auto script = eval::load_scripts(support::data_dir() / "scripts" / "returning_tremor.json").at(0);
    auto gw = support::mock();
    auto transcript = eval::render_transcript(simulate(script, *gw));
    std::ifstream f(std::filesystem::path(PDJ_TEST_GOLDEN_DIR) / "returning_tremor.txt", std::ios::binary);
    std::string expected((std::istreambuf_iterator<char>(f)), {});
    auto r = eval::compare_text(transcript, expected);
    c.expect(r.pass, "golden differs at line " + std::to_string(r.line) + ": '" + r.actual + "'");
    c.expect(transcript.find("you mentioned tremor before") != std::string::npos, "no history-referencing probe");
  }

  auto engine = service::make_engine(support::assets(), support::deterministic_options());
  dialog::TurnContext ctx;
  ctx.profile = support::sample_profile();
  auto fresh = [&] { return engine->begin_session(ctx.profile, "s").next_state; };

  {
    auto st = fresh();
    auto step = [&](std::string_view u) {
      auto a = engine->handle(st, u, ctx);
      st = a.next_state;
      return a.replies;
    };
    step("My hands are shaking");
    step("At noon");
    auto confirm = step("I have been feeling anxious");
    c.expect(!confirm.empty() && confirm.back() == "Can I ask you a few questions about your mood?", "no mood switch offer");
    step("Yes");
    c.expect(st.rule_stack.size() == 2 && st.rule_stack.back().symptom == Symptom::Mood, "mood not nested on tremor");
    step("Nothing in particular");
    step("I stayed home");
    auto resume = step("No other symptoms");
    c.expect(st.rule_stack.size() == 1 && st.rule_stack.back().symptom == Symptom::Tremor, "tremor not resumed");
    c.expect(!resume.empty() && resume.back() == engine->canonical_probe(Symptom::Tremor, ProbingTopic::DailyActivity, ctx.profile),
             "resumed probe was '" + (resume.empty() ? std::string() : resume.back()) + "'");
  }

  {
    const std::vector<std::string> advice = {
        "Do you know any homemade remedies for insomnia?", "What should I take for my tremors?",
        "Should I take more levodopa?", "Should I increase my dose?", "Can you recommend something for sleep?",
        "Any advice for my stiffness?", "What can I take for dizziness?", "How do I treat my back pain?",
        "Is there a cure for Parkinson's?", "What is a good treatment for fatigue?", "Is it safe to skip my pills?",
        "What dose of carbidopa-levodopa is right for me?", "How much should I take at night?",
        "What medicine should I use for my mood?", "How do I get rid of these cramps?",
        "What helps with dizziness in the morning?", "Should I stop taking my ropinirole?",
        "Give me advice on falling less", "Should I double my evening pill?", "Is melatonin a remedy for sleeplessness?"};
    auto gw = support::mock();
    dialog::TurnContext with_model = ctx;
    with_model.gateway = gw.get();
    for (const auto& u : advice) {
      auto a = engine->handle(fresh(), u, with_model);
      c.expect(a.intent && a.intent->seeks_advice, "not flagged as advice: " + u);
      c.expect(!a.replies.empty() && a.replies.front() == tpl.refusal, "no refusal for: " + u);
      for (const auto& r : a.replies) {
        auto bad = dialog::advice_violation(r, tpl.advice_deny_list);
        c.expect(!bad, "reply '" + r + "' contains '" + bad.value_or("") + "'");
      }
    }
  }

  {
    // Repair fires exactly when the pattern result is too weak (or the text is ASR damage).
    std::vector<std::string> utterances;
    for (const auto& item : eval::load_intent_corpus(support::data_dir() / "corpus" / "intents.json")) {
      utterances.push_back(item.text);
    }
    for (const char* u : {"shaking yesterday garden party", "the tremor came when we were out at the lake with the grandkids",
                          "walked the dog then stiff", "my", "I took my carpet leave a dopa"}) {
      utterances.emplace_back(u);
    }
    std::size_t repairs = 0;
    for (const auto& u : utterances) {
      auto a = engine->handle(fresh(), u, ctx);
      const auto& r = *a.intent;
      if (r.seeks_advice) continue;
      const bool weak = r.provider == nlu::Provider::Pattern && r.confidence < nlu::kRepairThreshold;
      const bool expect_repair = r.intent.is(Intent::Kind::Asr) || weak;
      const bool repaired = !a.replies.empty() && a.replies.front() == tpl.repair;
      repairs += repaired;
      c.expect(repaired == expect_repair, "'" + u + "' confidence " + std::to_string(r.confidence) +
                                              (repaired ? " repaired" : " not repaired"));
    }
    c.expect(repairs > 0, "no repairs exercised");
  }
  return c;
}

Check durability() {
  Check c;
  support::TempDir dir;
  {
    journal::JournalStore store(dir.path());
    store.put_profile(support::sample_profile());
  }
  std::uint64_t last_seen = 0;
  for (int cycle = 0; cycle < 3; ++cycle) {
    int fds[2];
    if (pipe(fds) != 0) {
      c.expect(false, "pipe failed");
      return c;
    }
    pid_t child = fork();
    if (child == 0) {
      close(fds[0]);
      journal::JournalStore store(dir.path());
      for (int i = 0;; ++i) {
        JournalEntry e;
        e.patient_id = "alex";
        e.session_id = "c" + std::to_string(cycle);
        e.speaker = Speaker::Patient;
        e.text = "entry " + std::to_string(i);
        std::vector<JournalEntry> batch(1 + i % 3, e);
        auto ids = store.append_batch(batch);
        auto id = ids.back();
        if (write(fds[1], &id, sizeof id) != sizeof id) _exit(1);
      }
    }
    close(fds[1]);
    std::vector<std::uint64_t> acked;
    std::uint64_t id;
    while (acked.size() < 25 && read(fds[0], &id, sizeof id) == sizeof id) acked.push_back(id);
    kill(child, SIGKILL);
    waitpid(child, nullptr, 0);
    while (read(fds[0], &id, sizeof id) == sizeof id) acked.push_back(id);
    close(fds[0]);

    journal::JournalStore store(dir.path());
    auto entries = store.entries("alex");
    std::set<std::uint64_t> present;
    for (const auto& e : entries) present.insert(e.entry_id);
    for (auto a : acked) c.expect(present.count(a) == 1, "acknowledged entry " + std::to_string(a) + " lost");
    for (std::size_t i = 1; i < entries.size(); ++i) {
      c.expect(entries[i - 1].entry_id < entries[i].entry_id, "ids not increasing at " + std::to_string(i));
    }
    c.expect(entries.empty() || entries.front().entry_id > 0, "zero entry id");
    c.expect(present.empty() || *present.begin() > 0, "bad first id");
    c.expect(!acked.empty() && *present.rbegin() >= acked.back(), "tail shorter than acknowledged");
    c.expect(last_seen == 0 || present.count(last_seen) == 1, "post-restart append " + std::to_string(last_seen) + " lost");
    auto next = store.append({.patient_id = "alex", .session_id = "after", .speaker = Speaker::Patient, .text = "after restart"});
    c.expect(next > *present.rbegin(), "id did not advance after restart");
    last_seen = next;
  }
  return c;
}

Check token_budget() {
  Check c;
  const auto& prompt = *support::assets().personalization_prompt;
  auto tap = std::make_shared<Tap>(support::mock());
  personalize::PersonalizeConfig cfg = support::assets().personalize_config;
  std::mt19937_64 rng(77);
  for (int i = 0; i < 1000; ++i) {
    std::vector<JournalEntry> context;
    for (std::size_t n = rng() % 200; n > 0; --n) {
      JournalEntry e;
      e.speaker = rng() % 2 ? Speaker::Patient : Speaker::Agent;
      e.text = support::random_text(rng, 1, 60);
      context.push_back(std::move(e));
    }
    std::vector<journal::RetrievalHit> hits;
    for (std::size_t n = rng() % 400; n > 0; --n) {
      JournalEntry e;
      e.entry_id = n;
      e.speaker = Speaker::Patient;
      e.text = support::random_text(rng, 5, 120);
      hits.push_back({e, static_cast<double>(n), 0});
    }
    auto profile = support::sample_profile();
    const std::string probe = "How long did your tremors last?";
    try {
      auto bundle = personalize::assemble(prompt, context, profile, hits, probe, cfg.token_budget);
      c.expect(bundle.token_count <= cfg.token_budget, "bundle " + std::to_string(i) + " has " +
                                                           std::to_string(bundle.token_count) + " tokens");
      c.expect(bundle.token_count == personalize::estimate_tokens(bundle.rendered), "stale token count");
    } catch (const Error& e) {
      c.expect(e.code() == Errc::BudgetExceeded, std::string("unexpected error: ") + e.what());
    }
    personalize::personalize(prompt, probe, context, profile, hits, *tap, cfg);
  }
  c.expect(tap->prompts_seen > 0, "no prompts reached the gateway");
  c.expect(tap->max_prompt_tokens <= cfg.token_budget,
           "largest prompt sent was " + std::to_string(tap->max_prompt_tokens) + " tokens");
  return c;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<std::pair<std::string, std::function<Check()>>> criteria = {
      {"intent suite", intent_suite},
      {"bm25 oracle", bm25_oracle},
      {"personalization gate", personalization_gate},
      {"dialogue state machine", dialogue_state_machine},
      {"durability", durability},
      {"token budget", token_budget},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    auto start = Clock::now();
    Check result;
    try {
      result = run();
    } catch (const std::exception& e) {
      result.expect(false, std::string("threw: ") + e.what());
    }
    std::ostringstream line;
    line.setf(std::ios::fixed);
    line.precision(2);
    line << (result.ok() ? "PASS " : "FAIL ") << name << " (" << seconds_since(start) << " s)";
    if (!result.ok()) {
      line << ": " << result.summary();
      ++failed;
    }
    std::cout << line.str() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}

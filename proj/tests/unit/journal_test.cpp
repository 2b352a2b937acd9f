#include <gtest/gtest.h>

#include <fstream>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include "bm25_oracle.hpp"
#include "pdjournal/errors.hpp"
#include "test_support.hpp"

using namespace pdj;
using journal::JournalStore;

namespace {

JournalEntry make_entry(const std::string& patient, const std::string& session, std::string text,
                        Speaker who = Speaker::Patient, std::int64_t ts = 1000) {
  JournalEntry e;
  e.patient_id = patient;
  e.session_id = session;
  e.timestamp_ms = ts;
  e.speaker = who;
  e.text = std::move(text);
  return e;
}

JournalStore::Options fast() { return {.sync = false}; }

}  // namespace

TEST(Bm25, HandComputedSingleTerm) {
  // Two documents, query "tremor" appears once in a two-word doc.
  std::vector<JournalEntry> corpus = {make_entry("p", "s", "tremor today"), make_entry("p", "s", "garden walk long")};
  corpus[0].entry_id = 1;
  corpus[1].entry_id = 2;
  auto hits = journal::rank_entries(corpus, "tremor", 5);
  ASSERT_EQ(hits.size(), 1u);
  const double idf = std::log((2 - 1 + 0.5) / (1 + 0.5) + 1.0);  // ln 2
  const double avgdl = 2.5;
  const double expected = idf * 1 * 2.2 / (1 + 1.2 * (1 - 0.75 + 0.75 * 2 / avgdl));
  EXPECT_NEAR(hits[0].score, expected, 1e-12);
  EXPECT_EQ(hits[0].rank, 1);
}

TEST(Bm25, RepeatedQueryTermsCountOnce) {
  std::vector<JournalEntry> corpus = {make_entry("p", "s", "tremor hands"), make_entry("p", "s", "sleep night")};
  corpus[0].entry_id = 1;
  corpus[1].entry_id = 2;
  auto once = journal::rank_entries(corpus, "tremor", 5);
  auto thrice = journal::rank_entries(corpus, "tremor tremor TREMOR", 5);
  ASSERT_EQ(once.size(), 1u);
  ASSERT_EQ(thrice.size(), 1u);
  EXPECT_DOUBLE_EQ(once[0].score, thrice[0].score);
}

TEST(Bm25, TiesBreakTowardNewerEntries) {
  std::vector<JournalEntry> corpus;
  for (std::uint64_t id = 1; id <= 4; ++id) {
    corpus.push_back(make_entry("p", "s", "tremor again"));
    corpus.back().entry_id = id;
  }
  auto hits = journal::rank_entries(corpus, "tremor", 3);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].entry.entry_id, 4u);
  EXPECT_EQ(hits[1].entry.entry_id, 3u);
  EXPECT_EQ(hits[2].entry.entry_id, 2u);
}

TEST(Bm25, ScoresAreNonNegativeEvenForCommonTerms) {
  std::vector<JournalEntry> corpus;
  for (std::uint64_t id = 1; id <= 10; ++id) {
    corpus.push_back(make_entry("p", "s", "tremor " + std::to_string(id)));
    corpus.back().entry_id = id;
  }
  for (const auto& h : journal::rank_entries(corpus, "tremor", 10)) EXPECT_GT(h.score, 0.0);
}

TEST(Bm25, MatchesBruteForceOracleOnRandomCorpora) {
  std::mt19937_64 rng(42);
  for (int round = 0; round < 100; ++round) {
    std::vector<JournalEntry> corpus;
    std::size_t n = 1 + rng() % 50;
    for (std::size_t i = 0; i < n; ++i) {
      corpus.push_back(make_entry("p", "s", support::random_text(rng, 0, 15)));
      corpus.back().entry_id = i + 1;
    }
    auto query = support::random_text(rng, 1, 8);
    std::size_t k = 1 + rng() % 10;
    auto got = journal::rank_entries(corpus, query, k);
    auto want = support::bm25_oracle(corpus, query, k);
    ASSERT_EQ(got.size(), want.size()) << query;
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].entry.entry_id, want[i].entry_id);
      EXPECT_NEAR(got[i].score, want[i].score, 1e-9);
      EXPECT_EQ(got[i].rank, static_cast<int>(i + 1));
    }
  }
}

TEST(Store, ProfilesAreVersioned) {
  support::TempDir dir;
  JournalStore store(dir.path(), fast());
  auto p = store.put_profile(support::sample_profile());
  EXPECT_EQ(p.version, 1);
  auto changed = support::sample_profile();
  changed.medications.push_back({"rasagiline", "noon"});
  auto p2 = store.put_profile(changed);
  EXPECT_EQ(p2.version, 2);
  auto history = store.profile_history("alex");
  ASSERT_EQ(history.size(), 2u);
  EXPECT_EQ(history[0].version, 1);
  EXPECT_EQ(history[0].medications.size(), 1u);
  EXPECT_EQ(history[1], p2);

  JournalStore reopened(dir.path(), fast());
  EXPECT_EQ(reopened.profile("alex"), p2);
}

TEST(Store, RejectsBadIdsAndUnknownPatients) {
  support::TempDir dir;
  JournalStore store(dir.path(), fast());
  for (const char* bad : {"", "../etc", "a b", "x/y"}) {
    auto p = support::sample_profile(bad);
    EXPECT_THROW(store.put_profile(p), Error) << bad;
  }
  try {
    store.append(make_entry("ghost", "s", "hello"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::UnknownPatient);
  }
  EXPECT_THROW(store.profile("ghost"), Error);
}

TEST(Store, AppendAssignsMonotonicIdsAndSurvivesReopen) {
  support::TempDir dir;
  std::vector<std::uint64_t> ids;
  {
    JournalStore store(dir.path());
    store.put_profile(support::sample_profile());
    ids.push_back(store.append(make_entry("alex", "s1", "my hands shake", Speaker::Patient, 10)));
    auto batch = store.append_batch({make_entry("alex", "s1", "When?", Speaker::Agent, 20),
                                     make_entry("alex", "s1", "this morning", Speaker::Patient, 30)});
    ids.insert(ids.end(), batch.begin(), batch.end());
  }
  EXPECT_EQ(ids, (std::vector<std::uint64_t>{1, 2, 3}));
  JournalStore store(dir.path());
  auto entries = store.entries("alex");
  ASSERT_EQ(entries.size(), 3u);
  EXPECT_EQ(entries[2].text, "this morning");
  EXPECT_EQ(store.entries_since("alex", 20).size(), 2u);
  EXPECT_EQ(store.append(make_entry("alex", "s2", "again")), 4u);
}

TEST(Store, UnacknowledgedTailIsDiscarded) {
  support::TempDir dir;
  {
    JournalStore store(dir.path());
    store.put_profile(support::sample_profile());
    store.append(make_entry("alex", "s1", "first"));
  }
  {
    // A crash between write and commit leaves bytes past the marker.
    std::ofstream f(dir.path() / "journal" / "alex.jsonl", std::ios::app | std::ios::binary);
    f << R"({"entry_id":2,"patient_id":"alex","session_id":"s1","timestamp":5,"speaker":"patient","text":"torn)";
  }
  JournalStore store(dir.path());
  auto entries = store.entries("alex");
  ASSERT_EQ(entries.size(), 1u);
  EXPECT_EQ(store.append(make_entry("alex", "s1", "second")), 2u);
  JournalStore again(dir.path());
  ASSERT_EQ(again.entries("alex").size(), 2u);
  EXPECT_EQ(again.entries("alex")[1].text, "second");
}

TEST(Store, QueryHistoryExcludesCurrentSession) {
  support::TempDir dir;
  JournalStore store(dir.path(), fast());
  store.put_profile(support::sample_profile());
  store.append(make_entry("alex", "old", "my tremor was bad"));
  store.append(make_entry("alex", "now", "tremor again today"));
  auto hits = store.query_history("alex", "How long did your tremor last?", "", 5, "now");
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].entry.session_id, "old");
  EXPECT_THROW(store.query_history("alex", "q", "", 0, "now"), Error);
}

TEST(Store, QueryHistoryMatchesOracle) {
  support::TempDir dir;
  JournalStore store(dir.path(), fast());
  store.put_profile(support::sample_profile());
  std::mt19937_64 rng(7);
  std::vector<JournalEntry> batch;
  for (int i = 0; i < 40; ++i) batch.push_back(make_entry("alex", "s" + std::to_string(i % 4), support::random_text(rng, 1, 12)));
  store.append_batch(batch);
  std::vector<JournalEntry> corpus;
  for (const auto& e : store.entries("alex")) {
    if (e.session_id != "s3") corpus.push_back(e);
  }
  auto probe = support::random_text(rng, 2, 6);
  auto context = support::random_text(rng, 2, 6);
  auto got = store.query_history("alex", probe, context, 5, "s3");
  auto want = support::bm25_oracle(corpus, probe + " " + context, 5);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].entry.entry_id, want[i].entry_id);
}

TEST(Store, SymptomPrefilterKeepsTaggedEntries) {
  support::TempDir dir;
  JournalStore store(dir.path(), {.sync = false, .symptom_prefilter = true});
  store.put_profile(support::sample_profile());
  auto tagged = make_entry("alex", "old", "shaking hands in the morning");
  tagged.intent_tag = Intent::symptom(Symptom::Tremor);
  store.append(tagged);
  store.append(make_entry("alex", "old", "morning walk in the garden"));
  auto hits = store.query_history("alex", "morning", "", 5, "now", Symptom::Tremor);
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(hits[0].entry.text, "shaking hands in the morning");
}

TEST(Store, CrashRestartKeepsAcknowledgedAppends) {
  support::TempDir dir;
  {
    JournalStore store(dir.path());
    store.put_profile(support::sample_profile());
  }
  int fds[2];
  ASSERT_EQ(pipe(fds), 0);
  pid_t child = fork();
  ASSERT_GE(child, 0);
  if (child == 0) {
    close(fds[0]);
    JournalStore store(dir.path());
    for (int i = 0;; ++i) {
      auto id = store.append(make_entry("alex", "s", "entry " + std::to_string(i)));
      if (write(fds[1], &id, sizeof id) != sizeof id) _exit(1);
    }
  }
  close(fds[1]);
  std::vector<std::uint64_t> acked;
  std::uint64_t id;
  while (acked.size() < 40 && read(fds[0], &id, sizeof id) == sizeof id) acked.push_back(id);
  kill(child, SIGKILL);
  waitpid(child, nullptr, 0);
  while (read(fds[0], &id, sizeof id) == sizeof id) acked.push_back(id);
  close(fds[0]);

  ASSERT_FALSE(acked.empty());
  JournalStore store(dir.path());
  auto entries = store.entries("alex");
  std::set<std::uint64_t> present;
  for (const auto& e : entries) present.insert(e.entry_id);
  for (auto a : acked) EXPECT_TRUE(present.count(a)) << "lost acknowledged entry " << a;
  for (std::size_t i = 1; i < entries.size(); ++i) EXPECT_LT(entries[i - 1].entry_id, entries[i].entry_id);
  auto next = store.append(make_entry("alex", "s", "after restart"));
  EXPECT_GT(next, *present.rbegin());
}

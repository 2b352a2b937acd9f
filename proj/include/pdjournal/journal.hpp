#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pdjournal/domain.hpp"

namespace pdj::journal {

struct CorpusStats {
  std::size_t doc_count = 0;
  double avg_doc_len = 0.0;
  std::map<std::string, std::size_t, std::less<>> term_doc_freq;
};

inline constexpr double kDefaultK1 = 1.2;
inline constexpr double kDefaultB = 0.75;

// Lowercased word tokens used for both queries and documents.
std::vector<std::string> retrieval_tokens(std::string_view text);

CorpusStats compute_stats(const std::vector<std::vector<std::string>>& docs);

// Okapi BM25 with the non-negative IDF ln((N - df + 0.5) / (df + 0.5) + 1).
// Repeated query terms count once.
double bm25_score(const std::vector<std::string>& query_tokens, const std::vector<std::string>& doc_tokens,
                  const CorpusStats& stats, double k1 = kDefaultK1, double b = kDefaultB);

struct RetrievalHit {
  JournalEntry entry;
  double score = 0.0;
  int rank = 0;  // 1-based
};

// Best-first: descending score, then descending entry_id. Zero scores are dropped.
std::vector<RetrievalHit> rank_entries(const std::vector<JournalEntry>& corpus, std::string_view query_text,
                                       std::size_t k, double k1 = kDefaultK1, double b = kDefaultB);

/// Append-only store of patient profiles and journal entries.
///
/// Layout under the root directory:
///   profiles/<patient_id>.json           current profile
///   profiles/<patient_id>.history.jsonl  superseded profile versions
///   journal/<patient_id>.jsonl           one entry per line
///   journal/<patient_id>.commit          byte length of the acknowledged prefix
///
/// Appends are written, fsync'd, and then acknowledged by advancing the commit
/// marker, so a batch is either fully visible after a crash or not at all.
class JournalStore {
public:
  struct Options {
    bool sync = true;               // fsync data and markers
    bool symptom_prefilter = false;  // restrict retrieval to entries tagged with the current symptom
    double k1 = kDefaultK1;
    double b = kDefaultB;
  };

  explicit JournalStore(std::filesystem::path root);
  JournalStore(std::filesystem::path root, Options options);
  JournalStore(const JournalStore&) = delete;
  JournalStore& operator=(const JournalStore&) = delete;

  const std::filesystem::path& root() const { return root_; }
  const Options& options() const { return options_; }

  // Creates the patient (version 1) or replaces the profile with version + 1.
  // The stored profile is returned. Throws InvalidArgument for unusable ids.
  PatientProfile put_profile(PatientProfile profile);
  // Throws UnknownPatient.
  PatientProfile profile(std::string_view patient_id) const;
  // Every version, oldest first, ending with the current one.
  std::vector<PatientProfile> profile_history(std::string_view patient_id) const;
  bool has_patient(std::string_view patient_id) const;
  std::vector<std::string> patient_ids() const;

  // Durable before return. Throws UnknownPatient or StorageError; on error nothing is acknowledged.
  std::uint64_t append(JournalEntry entry);
  std::vector<std::uint64_t> append_batch(std::vector<JournalEntry> entries);

  std::vector<JournalEntry> entries(std::string_view patient_id) const;
  std::vector<JournalEntry> entries_since(std::string_view patient_id, std::int64_t since_ms) const;
  std::uint64_t last_entry_id(std::string_view patient_id) const;

  // History relevant to the probe and context, excluding entries from `current_session`.
  std::vector<RetrievalHit> query_history(std::string_view patient_id, std::string_view probe_text,
                                          std::string_view context_text, std::size_t k,
                                          std::string_view current_session,
                                          std::optional<Symptom> symptom = std::nullopt) const;

private:
  struct Patient {
    mutable std::mutex mu;
    PatientProfile profile;
    std::vector<JournalEntry> entries;
    std::uint64_t next_id = 1;
    std::uintmax_t committed_bytes = 0;
  };

  std::shared_ptr<Patient> find(std::string_view patient_id) const;
  std::shared_ptr<Patient> require(std::string_view patient_id) const;
  void load();
  void load_patient(const std::filesystem::path& profile_path);
  std::filesystem::path journal_path(std::string_view patient_id) const;
  std::filesystem::path commit_path(std::string_view patient_id) const;
  std::filesystem::path profile_path(std::string_view patient_id) const;
  std::filesystem::path history_path(std::string_view patient_id) const;

  std::filesystem::path root_;
  Options options_;
  mutable std::shared_mutex mu_;
  std::map<std::string, std::shared_ptr<Patient>, std::less<>> patients_;
};

bool valid_patient_id(std::string_view id);

}  // namespace pdj::journal

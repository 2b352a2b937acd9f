#include "pdjournal/journal.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "pdjournal/errors.hpp"
#include "pdjournal/text.hpp"

namespace fs = std::filesystem;

namespace pdj::journal {

namespace {

[[noreturn]] void storage_failure(const std::string& what) {
  throw Error(Errc::StorageError, what + ": " + std::strerror(errno));
}

class Fd {
public:
  Fd(const fs::path& path, int flags, mode_t mode = 0644) : fd_(::open(path.c_str(), flags | O_CLOEXEC, mode)) {
    if (fd_ < 0) storage_failure("open " + path.string());
  }
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  int get() const { return fd_; }

private:
  int fd_;
};

void write_all(int fd, std::string_view data, const fs::path& path) {
  while (!data.empty()) {
    ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      storage_failure("write " + path.string());
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

void sync_fd(int fd, const fs::path& path, bool enabled) {
  if (enabled && ::fsync(fd) != 0) storage_failure("fsync " + path.string());
}

void sync_dir(const fs::path& dir, bool enabled) {
  if (!enabled) return;
  int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (fd < 0) return;
  ::fsync(fd);
  ::close(fd);
}

// Replaces `path` atomically with `data`.
void write_atomic(const fs::path& path, std::string_view data, bool sync) {
  auto tmp = path;
  tmp += ".tmp";
  {
    Fd fd(tmp, O_WRONLY | O_CREAT | O_TRUNC);
    write_all(fd.get(), data, tmp);
    sync_fd(fd.get(), tmp, sync);
  }
  if (::rename(tmp.c_str(), path.c_str()) != 0) storage_failure("rename " + tmp.string());
  sync_dir(path.parent_path(), sync);
}

void append_line(const fs::path& path, const std::string& line, bool sync) {
  Fd fd(path, O_WRONLY | O_CREAT | O_APPEND);
  write_all(fd.get(), line + "\n", path);
  sync_fd(fd.get(), path, sync);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::StorageError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

bool valid_patient_id(std::string_view id) {
  if (id.empty() || id.size() > 64) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
  });
}

std::vector<std::string> retrieval_tokens(std::string_view text) { return text::tokenize(text).lower; }

CorpusStats compute_stats(const std::vector<std::vector<std::string>>& docs) {
  CorpusStats stats;
  stats.doc_count = docs.size();
  std::size_t total = 0;
  for (const auto& doc : docs) {
    total += doc.size();
    std::set<std::string_view> seen(doc.begin(), doc.end());
    for (auto term : seen) stats.term_doc_freq[std::string(term)] += 1;
  }
  stats.avg_doc_len = docs.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(docs.size());
  return stats;
}

double bm25_score(const std::vector<std::string>& query_tokens, const std::vector<std::string>& doc_tokens,
                  const CorpusStats& stats, double k1, double b) {
  if (query_tokens.empty() || doc_tokens.empty()) return 0.0;
  std::set<std::string_view> terms(query_tokens.begin(), query_tokens.end());  // sorted, distinct
  std::map<std::string_view, std::size_t> tf;
  for (const auto& t : doc_tokens) tf[t] += 1;
  const double n = static_cast<double>(stats.doc_count);
  const double len = static_cast<double>(doc_tokens.size());
  const double avg = stats.avg_doc_len > 0.0 ? stats.avg_doc_len : len;
  double score = 0.0;
  for (auto term : terms) {
    auto f = tf.find(term);
    if (f == tf.end()) continue;
    auto d = stats.term_doc_freq.find(term);
    const double df = d == stats.term_doc_freq.end() ? 0.0 : static_cast<double>(d->second);
    const double idf = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
    const double freq = static_cast<double>(f->second);
    score += idf * freq * (k1 + 1.0) / (freq + k1 * (1.0 - b + b * len / avg));
  }
  return score;
}

std::vector<RetrievalHit> rank_entries(const std::vector<JournalEntry>& corpus, std::string_view query_text,
                                       std::size_t k, double k1, double b) {
  if (k == 0) throw Error(Errc::InvalidArgument, "k must be at least 1");
  std::vector<std::vector<std::string>> docs;
  docs.reserve(corpus.size());
  for (const auto& e : corpus) docs.push_back(retrieval_tokens(e.text));
  auto stats = compute_stats(docs);
  auto query = retrieval_tokens(query_text);

  std::vector<RetrievalHit> hits;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    double s = bm25_score(query, docs[i], stats, k1, b);
    if (s > 0.0) hits.push_back({corpus[i], s, 0});
  }
  std::sort(hits.begin(), hits.end(), [](const RetrievalHit& x, const RetrievalHit& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.entry.entry_id > y.entry.entry_id;
  });
  if (hits.size() > k) hits.resize(k);
  for (std::size_t i = 0; i < hits.size(); ++i) hits[i].rank = static_cast<int>(i + 1);
  return hits;
}

JournalStore::JournalStore(fs::path root) : JournalStore(std::move(root), Options{}) {}

JournalStore::JournalStore(fs::path root, Options options) : root_(std::move(root)), options_(options) {
  std::error_code ec;
  fs::create_directories(root_ / "profiles", ec);
  if (ec) throw Error(Errc::StorageError, "cannot create " + (root_ / "profiles").string() + ": " + ec.message());
  fs::create_directories(root_ / "journal", ec);
  if (ec) throw Error(Errc::StorageError, "cannot create " + (root_ / "journal").string() + ": " + ec.message());
  load();
}

fs::path JournalStore::journal_path(std::string_view id) const { return root_ / "journal" / (std::string(id) + ".jsonl"); }
fs::path JournalStore::commit_path(std::string_view id) const { return root_ / "journal" / (std::string(id) + ".commit"); }
fs::path JournalStore::profile_path(std::string_view id) const { return root_ / "profiles" / (std::string(id) + ".json"); }
fs::path JournalStore::history_path(std::string_view id) const {
  return root_ / "profiles" / (std::string(id) + ".history.jsonl");
}

void JournalStore::load() {
  for (const auto& dirent : fs::directory_iterator(root_ / "profiles")) {
    const auto& p = dirent.path();
    if (p.extension() != ".json" || p.stem().extension() == ".history") continue;
    load_patient(p);
  }
}

void JournalStore::load_patient(const fs::path& path) {
  auto patient = std::make_shared<Patient>();
  try {
    patient->profile = profile_from_json(json::parse(slurp(path)));
  } catch (const json::exception& e) {
    throw Error(Errc::StorageError, "corrupt profile " + path.string() + ": " + e.what());
  }
  const auto id = patient->profile.patient_id;
  if (id != path.stem().string()) throw Error(Errc::StorageError, "profile id mismatch in " + path.string());

  auto jpath = journal_path(id);
  if (fs::exists(jpath)) {
    auto size = fs::file_size(jpath);
    std::uintmax_t committed = size;
    if (fs::exists(commit_path(id))) {
      committed = std::stoull(text::trim(slurp(commit_path(id))));
    }
    if (committed < size) {
      // Unacknowledged tail from an interrupted batch.
      spdlog::warn("journal {}: discarding {} unacknowledged bytes", id, size - committed);
      fs::resize_file(jpath, committed);
    }
    auto data = slurp(jpath);
    std::size_t pos = 0;
    std::size_t good = 0;
    while (pos < data.size()) {
      auto nl = data.find('\n', pos);
      if (nl == std::string::npos) break;  // torn final line
      auto line = std::string_view(data).substr(pos, nl - pos);
      pos = nl + 1;
      if (text::trim(line).empty()) {
        good = pos;
        continue;
      }
      try {
        auto e = entry_from_json(json::parse(line));
        patient->next_id = std::max(patient->next_id, e.entry_id + 1);
        patient->entries.push_back(std::move(e));
        good = pos;
      } catch (const std::exception& ex) {
        spdlog::warn("journal {}: skipping unreadable line: {}", id, ex.what());
        good = pos;
      }
    }
    if (good < data.size()) fs::resize_file(jpath, good);
    patient->committed_bytes = good;
  }
  std::unique_lock lock(mu_);
  patients_[id] = std::move(patient);
}

std::shared_ptr<JournalStore::Patient> JournalStore::find(std::string_view id) const {
  std::shared_lock lock(mu_);
  auto it = patients_.find(id);
  return it == patients_.end() ? nullptr : it->second;
}

std::shared_ptr<JournalStore::Patient> JournalStore::require(std::string_view id) const {
  auto p = find(id);
  if (!p) throw Error(Errc::UnknownPatient, "unknown patient '" + std::string(id) + "'");
  return p;
}

PatientProfile JournalStore::put_profile(PatientProfile profile) {
  if (!valid_patient_id(profile.patient_id)) {
    throw Error(Errc::InvalidArgument, "invalid patient id '" + profile.patient_id + "'");
  }
  std::shared_ptr<Patient> patient;
  {
    std::unique_lock lock(mu_);
    auto& slot = patients_[profile.patient_id];
    if (!slot) {
      slot = std::make_shared<Patient>();
      slot->profile.version = 0;
    }
    patient = slot;
  }
  std::lock_guard lock(patient->mu);
  const bool existing = patient->profile.version > 0;
  profile.version = patient->profile.version + 1;
  if (existing) append_line(history_path(profile.patient_id), to_json(patient->profile).dump(), options_.sync);
  write_atomic(profile_path(profile.patient_id), to_json(profile).dump(2), options_.sync);
  patient->profile = profile;
  return profile;
}

PatientProfile JournalStore::profile(std::string_view patient_id) const {
  auto p = require(patient_id);
  std::lock_guard lock(p->mu);
  if (p->profile.version == 0) throw Error(Errc::UnknownPatient, "unknown patient '" + std::string(patient_id) + "'");
  return p->profile;
}

std::vector<PatientProfile> JournalStore::profile_history(std::string_view patient_id) const {
  auto p = require(patient_id);
  std::lock_guard lock(p->mu);
  std::vector<PatientProfile> out;
  auto path = history_path(patient_id);
  if (fs::exists(path)) {
    std::istringstream in(slurp(path));
    for (std::string line; std::getline(in, line);) {
      if (!text::trim(line).empty()) out.push_back(profile_from_json(json::parse(line)));
    }
  }
  out.push_back(p->profile);
  return out;
}

bool JournalStore::has_patient(std::string_view patient_id) const {
  auto p = find(patient_id);
  if (!p) return false;
  std::lock_guard lock(p->mu);
  return p->profile.version > 0;
}

std::vector<std::string> JournalStore::patient_ids() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, _] : patients_) out.push_back(id);
  return out;
}

std::uint64_t JournalStore::append(JournalEntry entry) {
  std::vector<JournalEntry> batch;
  batch.push_back(std::move(entry));
  return append_batch(std::move(batch)).front();
}

std::vector<std::uint64_t> JournalStore::append_batch(std::vector<JournalEntry> entries) {
  if (entries.empty()) return {};
  const auto id = entries.front().patient_id;
  for (const auto& e : entries) {
    if (e.patient_id != id) throw Error(Errc::InvalidArgument, "batch spans several patients");
  }
  auto p = require(id);
  std::lock_guard lock(p->mu);
  if (p->profile.version == 0) throw Error(Errc::UnknownPatient, "unknown patient '" + id + "'");

  std::string payload;
  std::vector<std::uint64_t> ids;
  auto next = p->next_id;
  for (auto& e : entries) {
    e.entry_id = next++;
    ids.push_back(e.entry_id);
    payload += to_json(e).dump();
    payload += '\n';
  }

  auto jpath = journal_path(id);
  {
    Fd fd(jpath, O_WRONLY | O_CREAT);
    // Anything past the commit marker is an unacknowledged leftover; overwrite it.
    if (::ftruncate(fd.get(), static_cast<off_t>(p->committed_bytes)) != 0) storage_failure("truncate " + jpath.string());
    if (::lseek(fd.get(), static_cast<off_t>(p->committed_bytes), SEEK_SET) < 0) storage_failure("seek " + jpath.string());
    write_all(fd.get(), payload, jpath);
    sync_fd(fd.get(), jpath, options_.sync);
  }
  auto committed = p->committed_bytes + payload.size();
  write_atomic(commit_path(id), std::to_string(committed), options_.sync);

  p->committed_bytes = committed;
  p->next_id = next;
  for (auto& e : entries) p->entries.push_back(std::move(e));
  return ids;
}

std::vector<JournalEntry> JournalStore::entries(std::string_view patient_id) const {
  auto p = require(patient_id);
  std::lock_guard lock(p->mu);
  return p->entries;
}

std::vector<JournalEntry> JournalStore::entries_since(std::string_view patient_id, std::int64_t since_ms) const {
  auto p = require(patient_id);
  std::lock_guard lock(p->mu);
  std::vector<JournalEntry> out;
  for (const auto& e : p->entries) {
    if (e.timestamp_ms >= since_ms) out.push_back(e);
  }
  return out;
}

std::uint64_t JournalStore::last_entry_id(std::string_view patient_id) const {
  auto p = require(patient_id);
  std::lock_guard lock(p->mu);
  return p->next_id - 1;
}

std::vector<RetrievalHit> JournalStore::query_history(std::string_view patient_id, std::string_view probe_text,
                                                      std::string_view context_text, std::size_t k,
                                                      std::string_view current_session,
                                                      std::optional<Symptom> symptom) const {
  if (k == 0) throw Error(Errc::InvalidArgument, "k must be at least 1");
  std::vector<JournalEntry> corpus;
  for (auto& e : entries(patient_id)) {
    if (e.session_id == current_session) continue;
    if (options_.symptom_prefilter && symptom) {
      bool tagged = e.intent_tag && std::find(e.intent_tag->symptoms().begin(), e.intent_tag->symptoms().end(),
                                              *symptom) != e.intent_tag->symptoms().end();
      if (!tagged) continue;
    }
    corpus.push_back(std::move(e));
  }
  std::string query(probe_text);
  query += ' ';
  query += context_text;
  return rank_entries(corpus, query, k, options_.k1, options_.b);
}

}  // namespace pdj::journal

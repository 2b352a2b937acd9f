#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pdjournal/journal.hpp"

namespace pdj::support {

struct OracleHit {
  std::uint64_t entry_id;
  double score;
};

// Brute-force Okapi BM25 straight from the textbook definition: every
// statistic is recounted from the raw token lists for each document.
inline std::vector<OracleHit> bm25_oracle(const std::vector<JournalEntry>& corpus, const std::string& query,
                                          std::size_t k, double k1 = 1.2, double b = 0.75) {
  std::vector<std::vector<std::string>> docs;
  for (const auto& e : corpus) docs.push_back(journal::retrieval_tokens(e.text));
  const double n = static_cast<double>(docs.size());
  double total_len = 0;
  for (const auto& d : docs) total_len += static_cast<double>(d.size());
  const double avgdl = docs.empty() ? 0.0 : total_len / n;

  auto q = journal::retrieval_tokens(query);
  std::set<std::string> terms(q.begin(), q.end());

  std::vector<OracleHit> out;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (docs[i].empty()) continue;
    const double dl = static_cast<double>(docs[i].size());
    double score = 0.0;
    for (const auto& term : terms) {
      double f = static_cast<double>(std::count(docs[i].begin(), docs[i].end(), term));
      if (f == 0) continue;
      double df = 0;
      for (const auto& d : docs) df += std::find(d.begin(), d.end(), term) != d.end() ? 1 : 0;
      double idf = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
      score += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * dl / avgdl));
    }
    if (score > 0.0) out.push_back({corpus[i].entry_id, score});
  }
  std::sort(out.begin(), out.end(), [](const OracleHit& x, const OracleHit& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.entry_id > y.entry_id;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

inline std::string random_text(std::mt19937_64& rng, std::size_t min_words, std::size_t max_words) {
  static const std::vector<std::string> vocab = {
      "tremor", "shaking", "hands", "morning", "medication", "levodopa", "walk", "garden", "sleep", "night",
      "dizzy", "stiff", "legs", "pain", "back", "tired", "reading", "cooking", "minutes", "hours",
      "fell", "kitchen", "mood", "anxious", "better", "worse", "today", "yesterday", "long", "took"};
  std::uniform_int_distribution<std::size_t> len(min_words, max_words);
  std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
  std::string s;
  for (std::size_t i = 0, n = len(rng); i < n; ++i) {
    if (i) s += ' ';
    s += vocab[pick(rng)];
  }
  return s;
}

}  // namespace pdj::support

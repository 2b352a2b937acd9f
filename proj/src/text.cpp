#include "pdjournal/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>

namespace pdj::text {

namespace {

struct CodePoint {
  char32_t value;
  std::size_t length;
};

CodePoint decode(std::string_view s, std::size_t i) {
  auto b0 = static_cast<unsigned char>(s[i]);
  auto cont = [&](std::size_t k) -> unsigned {
    if (i + k >= s.size()) return 0x80;
    return static_cast<unsigned char>(s[i + k]);
  };
  if (b0 < 0x80) return {b0, 1};
  if ((b0 & 0xE0) == 0xC0 && i + 1 < s.size()) return {char32_t(((b0 & 0x1F) << 6) | (cont(1) & 0x3F)), 2};
  if ((b0 & 0xF0) == 0xE0 && i + 2 < s.size()) {
    return {char32_t(((b0 & 0x0F) << 12) | ((cont(1) & 0x3F) << 6) | (cont(2) & 0x3F)), 3};
  }
  if ((b0 & 0xF8) == 0xF0 && i + 3 < s.size()) {
    return {char32_t(((b0 & 0x07) << 18) | ((cont(1) & 0x3F) << 12) | ((cont(2) & 0x3F) << 6) | (cont(3) & 0x3F)),
            4};
  }
  return {0xFFFD, 1};  // stray byte: treat as a letter
}

bool is_apostrophe(char32_t c) { return c == U'\'' || c == U'’'; }

bool is_word_char(char32_t c) {
  if (c < 0x80) return std::isalnum(static_cast<int>(c)) != 0;
  if (c >= 0x00A0 && c <= 0x00BF) return false;  // Latin-1 punctuation and symbols
  if (c == 0x00D7 || c == 0x00F7) return false;
  if (c >= 0x2000 && c <= 0x206F) return false;  // general punctuation (dashes, quotes, ellipsis)
  if (c >= 0x3000 && c <= 0x303F) return false;
  return true;
}

constexpr std::array<std::string_view, 58> kStopwords = {
    "a",     "about", "am",   "an",    "and",  "are",   "as",    "at",   "be",    "been",
    "but",   "by",    "did",  "do",    "for",  "from",  "had",   "has",  "i",     "i'm",
    "i've",  "i'd",   "i'll", "in",    "is",   "it",    "it's",  "its",  "just",  "me",
    "my",    "of",    "on",   "or",    "our",  "so",    "some",  "that", "the",   "then",
    "there", "this",  "to",   "too",   "up",   "very",  "was",   "we",   "were",  "what",
    "when",  "with",  "you",  "your",  "have", "really", "quite", "being"};

}  // namespace

TokenSequence tokenize(std::string_view input) {
  TokenSequence seq;
  seq.source_text = std::string(input);
  std::vector<CodePoint> cps;
  std::vector<std::size_t> offsets;
  for (std::size_t i = 0; i < input.size();) {
    auto cp = decode(input, i);
    cps.push_back(cp);
    offsets.push_back(i);
    i += cp.length;
  }
  std::size_t n = cps.size();
  auto word_at = [&](std::size_t k) {
    if (k >= n) return false;
    if (is_word_char(cps[k].value)) return true;
    // Apostrophe joins two word characters.
    return is_apostrophe(cps[k].value) && k > 0 && k + 1 < n && is_word_char(cps[k - 1].value) &&
           is_word_char(cps[k + 1].value);
  };
  std::size_t k = 0;
  while (k < n) {
    if (!word_at(k)) {
      ++k;
      continue;
    }
    std::size_t start = k;
    while (k < n && word_at(k)) ++k;
    std::size_t b = offsets[start];
    std::size_t e = k < n ? offsets[k] : input.size();
    std::string tok(input.substr(b, e - b));
    seq.tokens.push_back(tok);
    seq.lower.push_back(to_lower(tok));
    seq.begin.push_back(b);
    seq.end.push_back(e);
  }
  return seq;
}

std::vector<std::string> words(std::string_view input) { return tokenize(input).lower; }

std::string to_lower(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    // U+2019 (E2 80 99) folds to an ASCII apostrophe so "can’t" matches "can't".
    if (i + 2 < s.size() && static_cast<unsigned char>(s[i]) == 0xE2 && static_cast<unsigned char>(s[i + 1]) == 0x80 &&
        static_cast<unsigned char>(s[i + 2]) == 0x99) {
      out += '\'';
      i += 2;
      continue;
    }
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(s[i])));
  }
  return out;
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string normalize(std::string_view input) { return join(tokenize(input).tokens, " "); }

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

bool is_stopword(std::string_view lower_token) {
  return std::find(kStopwords.begin(), kStopwords.end(), lower_token) != kStopwords.end();
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

std::size_t whitespace_word_count(std::string_view s) {
  std::size_t count = 0;
  bool in_word = false;
  for (char c : s) {
    bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++count;
    in_word = !space;
  }
  return count;
}

}  // namespace pdj::text

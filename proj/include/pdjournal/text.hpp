#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace pdj::text {

/// Word tokens of an utterance with their byte spans in the source text.
struct TokenSequence {
  std::vector<std::string> tokens;  // original case
  std::vector<std::string> lower;   // lowercased copies used for matching
  std::vector<std::size_t> begin;   // byte offset of each token in source_text
  std::vector<std::size_t> end;
  std::string source_text;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }
};

// Splits on whitespace and punctuation. Apostrophes between word characters
// stay inside the word ("can't"); punctuation never becomes a token.
TokenSequence tokenize(std::string_view text);

// Lowercased tokens only.
std::vector<std::string> words(std::string_view text);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

// Punctuation replaced by spaces, whitespace collapsed, trimmed.
std::string normalize(std::string_view text);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Function words ignored when measuring how much of an utterance a trigger covers.
bool is_stopword(std::string_view lower_token);

std::size_t edit_distance(std::string_view a, std::string_view b);

// Whitespace-delimited word count.
std::size_t whitespace_word_count(std::string_view s);

}  // namespace pdj::text

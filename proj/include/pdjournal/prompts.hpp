#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pdj::prompts {

/// A fixed prompt text with `[slot]` markers. Rendering substitutes the slots
/// in order; extraction inverts a rendered prompt back into slot values.
class SlotTemplate {
public:
  SlotTemplate(std::string text, std::vector<std::string> slots);

  std::string render(const std::vector<std::string>& values) const;
  // Slot values recovered from a rendered prompt, nullopt if the fixed text does not match.
  std::optional<std::vector<std::string>> extract(std::string_view rendered) const;

  const std::string& text() const { return text_; }
  // Whitespace-delimited words in the fixed text.
  std::size_t fixed_word_count() const { return fixed_words_; }

private:
  std::string text_;
  std::vector<std::string> slots_;
  std::vector<std::string> segments_;  // slots_.size() + 1 pieces of fixed text
  std::size_t fixed_words_ = 0;
};

std::string read_text_file(const std::filesystem::path& path);

/// Intent-classification prompt with a single `[latest user message]` slot.
class IntentPrompt {
public:
  static constexpr std::string_view kSlot = "[latest user message]";
  static IntentPrompt load(const std::filesystem::path& path);
  explicit IntentPrompt(std::string text);

  std::string render(std::string_view message) const;
  std::optional<std::string> extract(std::string_view prompt) const;
  const std::string& text() const { return tpl_.text(); }

private:
  SlotTemplate tpl_;
};

/// Personalization prompt: conversation context, profile, history, latest message.
class PersonalizationPrompt {
public:
  static PersonalizationPrompt load(const std::filesystem::path& path);
  explicit PersonalizationPrompt(std::string text);

  std::string render(std::string_view context, std::string_view profile, std::string_view history,
                     std::string_view probe) const;
  std::optional<std::string> extract_probe(std::string_view prompt) const;
  std::optional<std::string> extract_history(std::string_view prompt) const;
  std::size_t fixed_word_count() const { return tpl_.fixed_word_count(); }
  const std::string& text() const { return tpl_.text(); }

private:
  SlotTemplate tpl_;
};

/// Clarification sub-call: the pending question, the user's reply, and the topic.
class ClarificationPrompt {
public:
  static ClarificationPrompt load(const std::filesystem::path& path);
  explicit ClarificationPrompt(std::string text);

  std::string render(std::string_view question, std::string_view reply, std::string_view topic) const;
  std::optional<std::string> extract_topic(std::string_view prompt) const;

private:
  SlotTemplate tpl_;
};

}  // namespace pdj::prompts

#include "pdjournal/prompts.hpp"

#include <fstream>
#include <sstream>

#include "pdjournal/errors.hpp"
#include "pdjournal/text.hpp"

namespace pdj::prompts {

SlotTemplate::SlotTemplate(std::string text, std::vector<std::string> slots)
    : text_(std::move(text)), slots_(std::move(slots)) {
  std::size_t pos = 0;
  for (const auto& slot : slots_) {
    auto at = text_.find(slot, pos);
    if (at == std::string::npos) throw Error(Errc::ConfigError, "prompt template lacks slot " + slot);
    segments_.push_back(text_.substr(pos, at - pos));
    pos = at + slot.size();
  }
  segments_.push_back(text_.substr(pos));
  for (const auto& seg : segments_) fixed_words_ += text::whitespace_word_count(seg);
}

std::string SlotTemplate::render(const std::vector<std::string>& values) const {
  std::string out = segments_[0];
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    out += i < values.size() ? values[i] : std::string();
    out += segments_[i + 1];
  }
  return out;
}

std::optional<std::vector<std::string>> SlotTemplate::extract(std::string_view rendered) const {
  const auto& head = segments_.front();
  const auto& tail = segments_.back();
  if (rendered.size() < head.size() + tail.size()) return std::nullopt;
  if (rendered.substr(0, head.size()) != head) return std::nullopt;
  if (rendered.substr(rendered.size() - tail.size()) != tail) return std::nullopt;
  std::vector<std::string> values(slots_.size());
  // Walk backwards so the trailing slots are exact even if earlier values repeat fixed text.
  std::size_t end = rendered.size() - tail.size();
  for (std::size_t i = slots_.size(); i-- > 0;) {
    const auto& seg = segments_[i];
    std::size_t start;
    if (i == 0) {
      start = 0;
    } else {
      if (end < seg.size()) return std::nullopt;
      auto at = rendered.rfind(seg, end - seg.size());
      if (at == std::string_view::npos || at < head.size()) return std::nullopt;
      start = at;
    }
    if (start + seg.size() > end) return std::nullopt;
    values[i] = std::string(rendered.substr(start + seg.size(), end - start - seg.size()));
    end = start;
  }
  return values;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::ConfigError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string s = ss.str();
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

IntentPrompt IntentPrompt::load(const std::filesystem::path& path) { return IntentPrompt(read_text_file(path)); }

IntentPrompt::IntentPrompt(std::string text) : tpl_(std::move(text), {std::string(kSlot)}) {}

std::string IntentPrompt::render(std::string_view message) const { return tpl_.render({std::string(message)}); }

std::optional<std::string> IntentPrompt::extract(std::string_view prompt) const {
  auto v = tpl_.extract(prompt);
  if (!v) return std::nullopt;
  return v->front();
}

PersonalizationPrompt PersonalizationPrompt::load(const std::filesystem::path& path) {
  return PersonalizationPrompt(read_text_file(path));
}

PersonalizationPrompt::PersonalizationPrompt(std::string text)
    : tpl_(std::move(text),
           {"[conversation context]", "[profile]", "[conversation history]", "[latest user message]"}) {}

std::string PersonalizationPrompt::render(std::string_view context, std::string_view profile,
                                          std::string_view history, std::string_view probe) const {
  return tpl_.render({std::string(context), std::string(profile), std::string(history), std::string(probe)});
}

std::optional<std::string> PersonalizationPrompt::extract_probe(std::string_view prompt) const {
  auto v = tpl_.extract(prompt);
  if (!v) return std::nullopt;
  return (*v)[3];
}

std::optional<std::string> PersonalizationPrompt::extract_history(std::string_view prompt) const {
  auto v = tpl_.extract(prompt);
  if (!v) return std::nullopt;
  return (*v)[2];
}

ClarificationPrompt ClarificationPrompt::load(const std::filesystem::path& path) {
  return ClarificationPrompt(read_text_file(path));
}

ClarificationPrompt::ClarificationPrompt(std::string text)
    : tpl_(std::move(text), {"[question]", "[latest user message]", "[topic]"}) {}

std::string ClarificationPrompt::render(std::string_view question, std::string_view reply,
                                        std::string_view topic) const {
  return tpl_.render({std::string(question), std::string(reply), std::string(topic)});
}

std::optional<std::string> ClarificationPrompt::extract_topic(std::string_view prompt) const {
  auto v = tpl_.extract(prompt);
  if (!v) return std::nullopt;
  return (*v)[2];
}

}  // namespace pdj::prompts

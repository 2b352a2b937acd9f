#include <gtest/gtest.h>

#include "pdjournal/errors.hpp"
#include "pdjournal/text.hpp"
#include "test_support.hpp"

using namespace pdj;

TEST(Tokenize, KeepsContractionsAndDropsPunctuation) {
  auto seq = text::tokenize("I can't sleep, really!");
  ASSERT_EQ(seq.size(), 4u);
  EXPECT_EQ(seq.tokens[1], "can't");
  EXPECT_EQ(seq.lower[0], "i");
  EXPECT_EQ(seq.source_text.substr(seq.begin[2], seq.end[2] - seq.begin[2]), "sleep");
}

TEST(Tokenize, EmptyAndPunctuationOnly) {
  EXPECT_TRUE(text::tokenize("").empty());
  EXPECT_TRUE(text::tokenize("?!...").empty());
}

TEST(EditDistance, Basics) {
  EXPECT_EQ(text::edit_distance("kitten", "sitting"), 3u);
  EXPECT_EQ(text::edit_distance("", "abc"), 3u);
  EXPECT_EQ(text::edit_distance("same", "same"), 0u);
}

TEST(IntentTag, RoundTripsEveryKind) {
  std::vector<Intent> all = {Intent::asr(), Intent::none(), Intent::multiple({Symptom::Tremor, Symptom::Mood})};
  for (auto s : kAllSymptoms) all.push_back(Intent::symptom(s));
  for (auto k : {AnecdoteKind::Positive, AnecdoteKind::Negative, AnecdoteKind::Medication, AnecdoteKind::Other}) {
    all.push_back(Intent::anecdote(k));
  }
  for (auto c : {ControlKind::Clarify, ControlKind::Skip, ControlKind::Exit, ControlKind::Restart, ControlKind::Affirm,
                 ControlKind::Deny, ControlKind::Confused}) {
    all.push_back(Intent::control(c));
  }
  for (const auto& i : all) EXPECT_EQ(Intent::parse(i.tag()), i) << i.tag();
}

TEST(IntentTag, MultipleNeedsTwoDistinctSymptoms) {
  EXPECT_THROW(Intent::multiple({Symptom::Tremor}), Error);
  EXPECT_THROW(Intent::multiple({Symptom::Tremor, Symptom::Tremor}), Error);
  auto m = Intent::multiple({Symptom::Mood, Symptom::Tremor, Symptom::Mood});
  ASSERT_EQ(m.symptoms().size(), 2u);
  EXPECT_EQ(m.symptoms().front(), Symptom::Mood);
}

TEST(IntentTag, RejectsGarbage) {
  for (const char* bad : {"", "symptom:", "symptom:gout", "control:dance", "tremor", "multiple:tremor"}) {
    EXPECT_THROW(Intent::parse(bad), Error) << bad;
  }
}

TEST(Profile, JsonRoundTrip) {
  auto p = support::sample_profile();
  p.version = 3;
  EXPECT_EQ(profile_from_json(to_json(p)), p);
}

TEST(JournalEntryJson, RoundTrip) {
  JournalEntry e;
  e.entry_id = 7;
  e.patient_id = "alex";
  e.session_id = "s-1";
  e.timestamp_ms = 1234;
  e.speaker = Speaker::Patient;
  e.text = "my hands shake";
  e.intent_tag = Intent::symptom(Symptom::Tremor);
  e.topic_tag = ProbingTopic::Duration;
  EXPECT_EQ(entry_from_json(to_json(e)), e);
  e.intent_tag.reset();
  e.topic_tag.reset();
  EXPECT_EQ(entry_from_json(to_json(e)), e);
}

TEST(RenderTemplate, SubstitutesAndBlanksUnknown) {
  EXPECT_EQ(render_template("When did you last take your {medication}?", {{"medication", "levodopa"}}),
            "When did you last take your levodopa?");
  EXPECT_EQ(render_template("Hi {name}{missing}!", {{"name", "Sam"}}), "Hi Sam!");
  EXPECT_EQ(render_template("no placeholders", {}), "no placeholders");
}

class FollowUpConfigTest : public ::testing::Test {
protected:
  FollowUpConfig cfg = *support::assets().followups;
};

TEST_F(FollowUpConfigTest, ShippedConfigIsValid) {
  EXPECT_TRUE(validate_config(cfg).empty());
  EXPECT_EQ(cfg.topics.size(), kAllSymptoms.size());
}

TEST_F(FollowUpConfigTest, TremorProbesMedicationActivityAndDuration) {
  const auto& t = cfg.topics.at(Symptom::Tremor);
  for (auto topic : {ProbingTopic::Medication, ProbingTopic::DailyActivity, ProbingTopic::Duration}) {
    EXPECT_NE(std::find(t.begin(), t.end(), topic), t.end());
  }
  const auto& f = cfg.topics.at(Symptom::Falling);
  EXPECT_EQ(std::find(f.begin(), f.end(), ProbingTopic::Duration), f.end());
}

TEST_F(FollowUpConfigTest, MutationsAreRejected) {
  {
    auto c = cfg;
    c.topics.erase(Symptom::Pain);
    EXPECT_FALSE(validate_config(c).empty());
  }
  {
    auto c = cfg;
    c.topics[Symptom::Falling].push_back(ProbingTopic::Duration);
    c.templates[{Symptom::Falling, ProbingTopic::Duration}] = {"How long?"};
    EXPECT_FALSE(validate_config(c).empty());
  }
  {
    auto c = cfg;
    auto& t = c.topics[Symptom::Tremor];
    t.erase(std::find(t.begin(), t.end(), ProbingTopic::Duration));
    EXPECT_FALSE(validate_config(c).empty());
  }
  {
    auto c = cfg;
    c.templates.erase({Symptom::Mood, c.topics[Symptom::Mood].front()});
    EXPECT_FALSE(validate_config(c).empty());
  }
  {
    auto c = cfg;
    c.topics[Symptom::Mood].push_back(c.topics[Symptom::Mood].front());
    EXPECT_FALSE(validate_config(c).empty());
  }
  {
    auto c = cfg;
    c.topics[Symptom::Weakness].clear();
    EXPECT_FALSE(validate_config(c).empty());
  }
}

TEST_F(FollowUpConfigTest, JsonRoundTripPreservesValidity) {
  auto again = parse_followup_config(followup_config_to_json(cfg));
  EXPECT_TRUE(validate_config(again).empty());
  EXPECT_EQ(again.topics, cfg.topics);
  EXPECT_EQ(again.templates, cfg.templates);
}

#include <gtest/gtest.h>

#include "cotd/elicitation.hpp"

namespace cotd {
namespace {

Sample sample() {
  Sample s;
  s.id = "s7";
  s.question = "What sounds first?";
  s.options = {{'A', "rain"}, {'B', "dog"}, {'C', "siren"}, {'D', "bell"}};
  s.media.video_ref = "clips/7.mp4";
  s.media.audio_ref = "clips/7.wav";
  s.gold_answer = 'C';
  return s;
}

Gateway scripted(std::vector<std::string> completions) {
  MockScript script;
  script.default_completions = std::move(completions);
  return Gateway(mock_program(script));
}

TEST(ExtractAnswerTest, AnswerTag) {
  EXPECT_EQ(extract_answer("<think>...</think><answer>B</answer>"), 'B');
  EXPECT_EQ(extract_answer("<answer> (c) </answer>"), 'C');
  EXPECT_EQ(extract_answer("<answer>B) dog</answer>"), 'B');
}

TEST(ExtractAnswerTest, PhraseTakesTheLastMatch) {
  EXPECT_EQ(extract_answer("I first thought the answer is A. Final answer: D"), 'D');
  EXPECT_EQ(extract_answer("THE ANSWER IS (b)"), 'B');
}

TEST(ExtractAnswerTest, LoneTrailingLetter) {
  EXPECT_EQ(extract_answer("Reasoning here.\nC"), 'C');
  EXPECT_EQ(extract_answer("Reasoning here.\n(A)."), 'A');
}

TEST(ExtractAnswerTest, NothingExtractable) {
  EXPECT_EQ(extract_answer(""), std::nullopt);
  EXPECT_EQ(extract_answer("I am not sure."), std::nullopt);
  EXPECT_EQ(extract_answer("<answer>dog</answer>"), std::nullopt);
  EXPECT_EQ(extract_answer("the answer is apparent"), std::nullopt);
}

TEST(PromptTest, TeacherSeesVideoOnlyAndNoGold) {
  const AudioFocusedPrompt p = build_prompt(sample());
  ASSERT_EQ(p.attachments.size(), 1u);
  EXPECT_EQ(p.attachments[0].kind, MediaKind::kVideo);
  EXPECT_EQ(p.attachments[0].uri, "clips/7.mp4");
  EXPECT_EQ(p.system_text, kDefaultAudioPromptTemplate);
  EXPECT_EQ(p.user_text, "What sounds first?\nA. rain\nB. dog\nC. siren\nD. bell");
}

TEST(PromptTest, MissingVideoIsAnError) {
  Sample s = sample();
  s.media.video_ref.reset();
  EXPECT_THROW(build_prompt(s), ValidationError);
}

TEST(PromptTest, TemplateIsConfigurable) {
  EXPECT_EQ(build_prompt(sample(), "custom").system_text, "custom");
}

TEST(ElicitTest, UnanimousTracesAreRetained) {
  Gateway gw = scripted({"<think>x</think><answer>C</answer>"});
  TeacherConfig cfg;
  const TraceSet set = elicit(sample(), gw, cfg, 1);
  EXPECT_EQ(set.traces.size(), 5u);
  EXPECT_TRUE(set.retained);
  EXPECT_EQ(set.consensus, 'C');
  for (int i = 0; i < 5; ++i) EXPECT_EQ(set.traces[static_cast<std::size_t>(i)].raw_choice_index, i);
}

TEST(ElicitTest, MissingAnswerBlocksRetention) {
  Gateway gw = scripted({"<answer>B</answer>", "no idea", "<answer>B</answer>"});
  TeacherConfig cfg;
  cfg.n_traces = 3;
  EXPECT_FALSE(elicit(sample(), gw, cfg, 1).retained);
}

TEST(ElicitTest, OutOfRangeLetterCountsAsMissing) {
  Gateway gw = scripted({"<answer>F</answer>"});
  TeacherConfig cfg;
  cfg.n_traces = 2;
  const TraceSet set = elicit(sample(), gw, cfg, 1);
  EXPECT_FALSE(set.traces[0].extracted_answer.has_value());
  EXPECT_FALSE(set.retained);
}

TEST(ElicitTest, GoldNeverReachesTheTeacher) {
  Sample s = sample();
  s.options[2].text = "siren";
  const ChatRequest r = make_teacher_request(s.without_gold(), TeacherConfig{}, 3);
  const std::string body = r.messages[1].content;
  EXPECT_EQ(body.find("gold"), std::string::npos);
  EXPECT_EQ(r.n, 5);
  EXPECT_EQ(r.seed, 3u);
}

TEST(ElicitTest, SingleTraceIsTriviallyUnanimous) {
  Gateway gw = scripted({"<answer>A</answer>"});
  TeacherConfig cfg;
  cfg.n_traces = 1;
  EXPECT_TRUE(elicit(sample(), gw, cfg, 1).retained);
}

}  // namespace
}  // namespace cotd

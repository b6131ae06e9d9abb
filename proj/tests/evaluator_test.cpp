#include <gtest/gtest.h>

#include <cctype>
#include <fstream>

#include "cotd/evaluator.hpp"
#include "cotd/rng.hpp"
#include "test_util.hpp"

namespace cotd {
namespace {

Sample four_way(char gold = 'C') {
  Sample s;
  s.id = "s1";
  s.question = "Which instrument plays first?";
  s.options = {{'A', "violin"}, {'B', "piano"}, {'C', "electric guitar"}, {'D', "drum kit"}};
  s.gold_answer = gold;
  s.category = "order";
  return s;
}

TEST(EvaluatorTest, LetterPath) {
  const EvalResult r = score_response("<think>strings</think><answer>C</answer>", four_way());
  EXPECT_EQ(r.predicted_letter, 'C');
  EXPECT_EQ(r.matched_by, MatchedBy::kLetter);
  EXPECT_TRUE(r.correct);
  EXPECT_EQ(r.category, "order");
}

TEST(EvaluatorTest, SimilarityFallback) {
  const EvalResult r = score_response("I think it is the electric guitar.", four_way());
  EXPECT_EQ(r.predicted_letter, 'C');
  EXPECT_EQ(r.matched_by, MatchedBy::kSimilarity);
  EXPECT_TRUE(r.correct);
}

TEST(EvaluatorTest, InvalidLetterFallsThroughToSimilarity) {
  const EvalResult r = score_response("<answer>F</answer> the piano", four_way());
  EXPECT_EQ(r.matched_by, MatchedBy::kSimilarity);
  EXPECT_EQ(r.predicted_letter, 'B');
  EXPECT_FALSE(r.correct);
}

TEST(EvaluatorTest, TieGoesToTheLowestIndex) {
  Sample s = four_way('A');
  s.options = {{'A', "red car"}, {'B', "blue car"}, {'C', "green car"}};
  const EvalResult r = score_response("car", s);
  EXPECT_EQ(r.predicted_letter, 'A');
  EXPECT_TRUE(r.correct);
}

TEST(EvaluatorTest, NoOverlapStillPicksTheFirstOption) {
  const EvalResult r = score_response("", four_way('A'));
  EXPECT_EQ(r.matched_by, MatchedBy::kSimilarity);
  EXPECT_EQ(r.predicted_letter, 'A');
}

TEST(EvaluatorTest, MissingGoldIsAnError) {
  Sample s = four_way();
  s.gold_answer.reset();
  EXPECT_THROW(score_response("<answer>A</answer>", s), ValidationError);
}

TEST(EvaluatorTest, CaseAndWhitespaceDoNotMatter) {
  const Sample s = four_way();
  for (const char* text : {"<answer>C</answer>", "the Electric Guitar", "Answer: D"}) {
    const EvalResult base = score_response(text, s);
    std::string upper = text;
    std::string lower = text;
    for (auto& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    for (const std::string& variant : {upper, lower, "  \n" + std::string(text) + " \t"}) {
      const EvalResult r = score_response(variant, s);
      EXPECT_EQ(r.predicted_letter, base.predicted_letter) << variant;
      EXPECT_EQ(r.matched_by, base.matched_by) << variant;
    }
  }
}

TEST(EvaluatorTest, LetterPathWinsOverSimilarity) {
  // The text overlaps option D entirely, but a valid letter is present.
  const EvalResult r = score_response("drum kit <answer>A</answer>", four_way());
  EXPECT_EQ(r.matched_by, MatchedBy::kLetter);
  EXPECT_EQ(r.predicted_letter, 'A');
}

TEST(EvaluatorTest, TokenF1) {
  EXPECT_DOUBLE_EQ(token_f1("the drum kit", "drum kit"), 0.8);
  EXPECT_DOUBLE_EQ(token_f1("Drum, KIT!", "drum kit"), 1.0);
  EXPECT_DOUBLE_EQ(token_f1("x", "drum kit"), 0.0);
  EXPECT_DOUBLE_EQ(token_f1("", ""), 0.0);
  // Multiset overlap: a repeated token counts once per occurrence in the reference.
  EXPECT_DOUBLE_EQ(token_f1("kit kit", "drum kit"), 0.5);
}

TEST(EvaluatorTest, NormalizeTokens) {
  EXPECT_EQ(normalize_tokens("  Hello, World!! foo-bar "),
            (std::vector<std::string>{"hello", "world", "foo", "bar"}));
  EXPECT_EQ(normalize_tokens("caf\xc3\xa9 ok"), (std::vector<std::string>{"caf\xc3\xa9", "ok"}));
}

TEST(EvaluatorTest, AggregationMatchesBruteForce) {
  Rng rng(17);
  const std::vector<std::string> names = {"count", "order", "presence"};
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<EvalResult> results(rng.below(30));
    for (auto& r : results) {
      r.correct = rng.bernoulli(0.5);
      if (!rng.bernoulli(0.2)) r.category = names[rng.below(names.size())];
    }
    const EvalSummary s = aggregate(results);
    std::size_t correct = 0;
    for (const auto& r : results) correct += r.correct ? 1 : 0;
    ASSERT_EQ(s.overall.correct, correct);
    ASSERT_EQ(s.overall.total, results.size());
    std::size_t seen = 0;
    for (const auto& [name, stats] : s.per_category) {
      std::size_t c = 0, n = 0;
      for (const auto& r : results) {
        if (r.category.value_or(std::string(kUncategorized)) != name) continue;
        ++n;
        c += r.correct ? 1 : 0;
      }
      ASSERT_EQ(stats.correct, c);
      ASSERT_EQ(stats.total, n);
      ASSERT_GT(n, 0u);
      seen += n;
    }
    ASSERT_EQ(seen, results.size());
  }
}

TEST(EvaluatorTest, EmptySummaryHasNullAccuracy) {
  const auto j = to_json(aggregate({}));
  EXPECT_TRUE(j["overall"].is_null());
  EXPECT_EQ(j["n"], 0);
}

TEST(EvaluatorTest, ResultJson) {
  const auto j = to_json(score_response("<answer>C</answer>", four_way()));
  EXPECT_EQ(j["predicted_letter"], "C");
  EXPECT_EQ(j["matched_by"], "letter");
  EXPECT_EQ(j["correct"], true);
}

TEST(EvaluatorTest, ReadPredictions) {
  testing::TempDir dir;
  const auto path = dir.path() / "p.jsonl";
  std::ofstream(path) << R"({"sample_id":"a","response_text":"<answer>B</answer>"})" << "\n";
  const auto preds = read_predictions(path.string());
  ASSERT_EQ(preds.size(), 1u);
  EXPECT_EQ(preds[0].sample_id, "a");
  std::ofstream(path) << R"({"sample_id":"a"})" << "\n";
  EXPECT_THROW(read_predictions(path.string()), ValidationError);
}

}  // namespace
}  // namespace cotd

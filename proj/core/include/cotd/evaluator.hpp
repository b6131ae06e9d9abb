#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cotd/types.hpp"

namespace cotd {

enum class MatchedBy { kLetter, kSimilarity, kNone };

std::string_view to_string(MatchedBy m);

struct EvalResult {
  std::string sample_id;
  std::optional<char> predicted_letter;
  MatchedBy matched_by = MatchedBy::kNone;
  bool correct = false;
  std::optional<std::string> category;

  friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

// Case-folded, punctuation-stripped whitespace tokens.
std::vector<std::string> normalize_tokens(std::string_view text);

// Harmonic mean of multiset token precision and recall; 0 when nothing overlaps.
double token_f1(std::string_view response, std::string_view reference);

/// Letter match first (only letters that name one of the sample's options);
/// otherwise the option with the highest token F1, ties to the lowest index.
/// Throws ValidationError when the sample has no gold answer.
EvalResult score_response(std::string_view response_text, const Sample& sample);

struct CategoryStats {
  std::size_t correct = 0;
  std::size_t total = 0;

  std::optional<double> accuracy() const;
  friend bool operator==(const CategoryStats&, const CategoryStats&) = default;
};

inline constexpr std::string_view kUncategorized = "uncategorized";

struct EvalSummary {
  CategoryStats overall;
  std::map<std::string, CategoryStats> per_category;  // sorted by name
};

EvalSummary aggregate(std::span<const EvalResult> results);

nlohmann::json to_json(const EvalResult& r);
// {overall, per_category, n}; accuracies are null for empty sets.
nlohmann::json to_json(const EvalSummary& s);

struct Prediction {
  std::string sample_id;
  std::string response_text;
};

std::vector<Prediction> read_predictions(const std::string& path);

}  // namespace cotd

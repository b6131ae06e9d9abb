#include "cotd/evaluator.hpp"

#include <cctype>
#include <unordered_map>

#include "cotd/elicitation.hpp"
#include "cotd/serialization.hpp"

namespace cotd {

std::string_view to_string(MatchedBy m) {
  switch (m) {
    case MatchedBy::kLetter:
      return "letter";
    case MatchedBy::kSimilarity:
      return "similarity";
    case MatchedBy::kNone:
      break;
  }
  return "none";
}

std::vector<std::string> normalize_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    // Bytes >= 0x80 belong to UTF-8 sequences and stay inside tokens.
    if (c >= 0x80 || std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

double token_f1(std::string_view response, std::string_view reference) {
  const auto pred = normalize_tokens(response);
  const auto ref = normalize_tokens(reference);
  if (pred.empty() || ref.empty()) return 0.0;
  std::unordered_map<std::string, int> counts;
  for (const auto& t : ref) ++counts[t];
  int overlap = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

EvalResult score_response(std::string_view response_text, const Sample& sample) {
  if (!sample.gold_answer) {
    throw ValidationError("sample '" + sample.id + "' has no gold_answer to score against", 0,
                          "gold_answer");
  }
  EvalResult r;
  r.sample_id = sample.id;
  r.category = sample.category;
  if (auto letter = extract_answer(response_text); letter && sample.has_option(*letter)) {
    r.predicted_letter = letter;
    r.matched_by = MatchedBy::kLetter;
  } else if (!sample.options.empty()) {
    double best = -1.0;
    for (const auto& o : sample.options) {
      const double f1 = token_f1(response_text, o.text);
      if (f1 > best) {
        best = f1;
        r.predicted_letter = o.label;
      }
    }
    r.matched_by = MatchedBy::kSimilarity;
  }
  r.correct = r.predicted_letter && *r.predicted_letter == *sample.gold_answer;
  return r;
}

std::optional<double> CategoryStats::accuracy() const {
  if (total == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(total);
}

EvalSummary aggregate(std::span<const EvalResult> results) {
  EvalSummary s;
  for (const auto& r : results) {
    auto& cat = s.per_category[r.category.value_or(std::string(kUncategorized))];
    ++cat.total;
    ++s.overall.total;
    if (r.correct) {
      ++cat.correct;
      ++s.overall.correct;
    }
  }
  return s;
}

json to_json(const EvalResult& r) {
  return {{"sample_id", r.sample_id},
          {"predicted_letter",
           r.predicted_letter ? json(std::string(1, *r.predicted_letter)) : json(nullptr)},
          {"matched_by", std::string(to_string(r.matched_by))},
          {"correct", r.correct},
          {"category", r.category ? json(*r.category) : json(nullptr)}};
}

json to_json(const EvalSummary& s) {
  auto acc = [](const CategoryStats& c) {
    auto a = c.accuracy();
    return a ? json(*a) : json(nullptr);
  };
  json per = json::object();
  for (const auto& [name, c] : s.per_category) {
    per[name] = {{"accuracy", acc(c)}, {"correct", c.correct}, {"n", c.total}};
  }
  return {{"overall", acc(s.overall)}, {"per_category", std::move(per)}, {"n", s.overall.total}};
}

std::vector<Prediction> read_predictions(const std::string& path) {
  std::vector<Prediction> out;
  std::size_t line = 0;
  for (const auto& j : read_jsonl(path)) {
    ++line;
    if (!j.is_object() || !j.contains("sample_id") || !j.contains("response_text")) {
      throw ValidationError("prediction needs sample_id and response_text", line);
    }
    out.push_back({j["sample_id"].get<std::string>(), j["response_text"].get<std::string>()});
  }
  return out;
}

}  // namespace cotd

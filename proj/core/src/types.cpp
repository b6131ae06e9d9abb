#include "cotd/types.hpp"

#include <algorithm>

namespace cotd {

bool Sample::has_option(char letter) const { return option(letter) != nullptr; }

const OptionItem* Sample::option(char letter) const {
  auto it = std::find_if(options.begin(), options.end(),
                         [letter](const OptionItem& o) { return o.label == letter; });
  return it == options.end() ? nullptr : &*it;
}

Sample Sample::without_gold() const {
  Sample copy = *this;
  copy.gold_answer.reset();
  return copy;
}

TraceSet TraceSet::from_traces(std::string sample_id, std::vector<Trace> traces) {
  TraceSet set;
  set.sample_id = std::move(sample_id);
  set.traces = std::move(traces);
  std::optional<char> first;
  bool unanimous = !set.traces.empty();
  for (const auto& t : set.traces) {
    if (!t.extracted_answer) {
      unanimous = false;
      break;
    }
    if (!first) first = t.extracted_answer;
    if (*first != *t.extracted_answer) {
      unanimous = false;
      break;
    }
  }
  set.retained = unanimous;
  if (unanimous) set.consensus = first;
  return set;
}

std::string_view to_string(Verdict v) { return v == Verdict::kAccept ? "accept" : "reject"; }

Verdict verdict_from_string(std::string_view s) {
  if (s == "accept") return Verdict::kAccept;
  if (s == "reject") return Verdict::kReject;
  throw ValidationError("verdict must be accept or reject, got '" + std::string(s) + "'", 0,
                        "verdict");
}

ValidationError::ValidationError(std::string message, std::size_t line, std::string field)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + message : message),
      line_(line),
      field_(std::move(field)) {}

void validate_sample(const Sample& sample) {
  if (sample.id.empty()) throw ValidationError("id must be non-empty", 0, "id");
  if (sample.options.empty()) throw ValidationError("options must be non-empty", 0, "options");
  if (sample.options.size() > kMaxOptions) {
    throw ValidationError("more than 26 options", 0, "options");
  }
  for (std::size_t i = 0; i < sample.options.size(); ++i) {
    if (sample.options[i].label != letter_at(static_cast<int>(i))) {
      throw ValidationError("non-consecutive letters: expected '" +
                                std::string(1, letter_at(static_cast<int>(i))) + "', got '" +
                                std::string(1, sample.options[i].label) + "'",
                            0, "options");
    }
  }
  if (sample.gold_answer && !sample.has_option(*sample.gold_answer)) {
    throw ValidationError("gold_answer is not one of the option letters", 0, "gold_answer");
  }
}

void validate_trace_set(const TraceSet& set, const Sample* sample) {
  const TraceSet expected = TraceSet::from_traces(set.sample_id, set.traces);
  if (expected.retained != set.retained || expected.consensus != set.consensus) {
    throw ValidationError("retained/consensus inconsistent with extracted answers", 0,
                          "retained");
  }
  if (sample) {
    for (const auto& t : set.traces) {
      if (t.extracted_answer && !sample->has_option(*t.extracted_answer)) {
        throw ValidationError("extracted_answer is not a valid option letter", 0,
                              "extracted_answer");
      }
    }
  }
}

}  // namespace cotd

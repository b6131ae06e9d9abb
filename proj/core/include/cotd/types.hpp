#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cotd {

// Option labels are single ASCII letters; a question carries at most 26.
inline constexpr int kMaxOptions = 26;

constexpr bool is_option_letter(char c) { return c >= 'A' && c <= 'Z'; }
constexpr char letter_at(int index) { return static_cast<char>('A' + index); }
constexpr int letter_index(char letter) { return letter - 'A'; }

struct OptionItem {
  char label = 'A';
  std::string text;

  friend bool operator==(const OptionItem&, const OptionItem&) = default;
};

struct Media {
  std::optional<std::string> video_ref;
  std::optional<std::string> audio_ref;

  friend bool operator==(const Media&, const Media&) = default;
};

/// One audio-visual multiple-choice question.
///
/// `gold_answer` is only consulted by the evaluator. Every stage that talks to
/// a model or trains on data receives `without_gold()` copies.
struct Sample {
  std::string id;
  std::string question;
  std::vector<OptionItem> options;
  Media media;
  std::optional<char> gold_answer;
  std::optional<std::string> category;

  bool has_option(char letter) const;
  const OptionItem* option(char letter) const;
  Sample without_gold() const;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Trace {
  std::string text;
  std::optional<char> extracted_answer;
  int raw_choice_index = 0;

  friend bool operator==(const Trace&, const Trace&) = default;
};

/// The n teacher traces for one sample plus the self-consistency outcome.
struct TraceSet {
  std::string sample_id;
  std::vector<Trace> traces;
  std::optional<char> consensus;
  bool retained = false;

  // Builds a TraceSet whose retained/consensus fields follow from the traces:
  // retained iff every trace carries the same extracted answer.
  static TraceSet from_traces(std::string sample_id, std::vector<Trace> traces);

  friend bool operator==(const TraceSet&, const TraceSet&) = default;
};

enum class Verdict { kAccept, kReject };

std::string_view to_string(Verdict v);
Verdict verdict_from_string(std::string_view s);

struct VerifiedTrace {
  std::string sample_id;
  std::string trace_text;
  char teacher_answer = 'A';
  Verdict verdict = Verdict::kReject;
  std::string checker_raw;

  friend bool operator==(const VerifiedTrace&, const VerifiedTrace&) = default;
};

/// Raised for malformed records and invariant violations. `line` is 1-based
/// when the error comes from a JSONL file and 0 otherwise.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string message, std::size_t line = 0, std::string field = {});

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

// Throws ValidationError when a sample violates its invariants.
void validate_sample(const Sample& sample);
void validate_trace_set(const TraceSet& set, const Sample* sample = nullptr);

}  // namespace cotd

#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace cotd {

struct RewardBreakdown {
  int accuracy = 0;  // 0|1
  int format = 0;    // 0|1
  int total = 0;     // accuracy + format

  friend bool operator==(const RewardBreakdown&, const RewardBreakdown&) = default;
};

// Stabilizer added to the group standard deviation.
inline constexpr double kAdvantageEpsilon = 1e-8;

/// 1 iff the text is exactly: optional whitespace, one <think>...</think>
/// block, optional whitespace, one <answer>...</answer> block with non-blank
/// content, optional whitespace. Each tag must occur exactly once.
int format_reward(std::string_view output_text);

/// 1 iff `predicted` is present and equals `teacher_label` ignoring case.
int accuracy_reward(std::optional<char> predicted, char teacher_label);

// Accuracy is scored on extract_answer(output_text).
RewardBreakdown total_reward(std::string_view output_text, char teacher_label);

/// (r_i - mean) / (popstd + kAdvantageEpsilon). Throws std::invalid_argument
/// for groups smaller than two.
std::vector<double> normalize_advantages(std::span<const double> rewards);

struct AdvantageGroup {
  std::vector<double> rewards;
  std::vector<double> advantages;

  static AdvantageGroup from_rewards(std::vector<double> rewards);
};

}  // namespace cotd

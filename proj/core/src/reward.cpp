#include "cotd/reward.hpp"

#include <cctype>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cotd/elicitation.hpp"

namespace cotd {
namespace {

std::size_t count_of(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

bool is_blank(std::string_view s) {
  for (unsigned char c : s) {
    if (!std::isspace(c)) return false;
  }
  return true;
}

std::size_t skip_space(std::string_view s, std::size_t pos) {
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  return pos;
}

}  // namespace

int format_reward(std::string_view text) {
  static constexpr std::string_view kThinkOpen = "<think>";
  static constexpr std::string_view kThinkClose = "</think>";
  static constexpr std::string_view kAnswerOpen = "<answer>";
  static constexpr std::string_view kAnswerClose = "</answer>";
  for (auto tag : {kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose}) {
    if (count_of(text, tag) != 1) return 0;
  }
  std::size_t pos = skip_space(text, 0);
  if (text.substr(pos, kThinkOpen.size()) != kThinkOpen) return 0;
  const auto think_close = text.find(kThinkClose, pos);
  if (think_close == std::string_view::npos) return 0;
  pos = skip_space(text, think_close + kThinkClose.size());
  if (text.substr(pos, kAnswerOpen.size()) != kAnswerOpen) return 0;
  const auto content_start = pos + kAnswerOpen.size();
  const auto answer_close = text.find(kAnswerClose, content_start);
  if (answer_close == std::string_view::npos) return 0;
  if (is_blank(text.substr(content_start, answer_close - content_start))) return 0;
  pos = skip_space(text, answer_close + kAnswerClose.size());
  return pos == text.size() ? 1 : 0;
}

int accuracy_reward(std::optional<char> predicted, char teacher_label) {
  if (!predicted) return 0;
  return std::toupper(static_cast<unsigned char>(*predicted)) ==
                 std::toupper(static_cast<unsigned char>(teacher_label))
             ? 1
             : 0;
}

RewardBreakdown total_reward(std::string_view output_text, char teacher_label) {
  RewardBreakdown r;
  r.accuracy = accuracy_reward(extract_answer(output_text), teacher_label);
  r.format = format_reward(output_text);
  r.total = r.accuracy + r.format;
  return r;
}

std::vector<double> normalize_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) {
    throw std::invalid_argument("advantage normalization needs a group of at least 2 rewards");
  }
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std = std::sqrt(var / n);
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - mean) / (std + kAdvantageEpsilon));
  return out;
}

AdvantageGroup AdvantageGroup::from_rewards(std::vector<double> rewards) {
  AdvantageGroup g;
  g.advantages = normalize_advantages(rewards);
  g.rewards = std::move(rewards);
  return g;
}

}  // namespace cotd

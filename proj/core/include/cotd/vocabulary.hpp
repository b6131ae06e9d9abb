#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cotd {

inline constexpr std::string_view kEosToken = "</s>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr int kMaxVocabulary = 64;

/// Fixed symbol table of the toy student. Words are matched exactly, then
/// lower-cased; the four reasoning tags are recognized anywhere in the text.
/// Out-of-vocabulary words fold to <unk>, and a run of them to a single <unk>.
class Vocabulary {
 public:
  // Throws std::invalid_argument on duplicates, a missing EOS, or > 64 symbols.
  explicit Vocabulary(std::vector<std::string> tokens);

  // Symbols of the synthetic world: tags, option letters A-H, event names,
  // answer words and question keywords.
  static Vocabulary standard();

  int size() const { return static_cast<int>(tokens_.size()); }
  int eos() const { return eos_; }
  std::optional<int> unk() const { return unk_; }
  std::optional<int> find(std::string_view symbol) const;
  int id(std::string_view symbol) const;  // throws std::out_of_range
  const std::string& symbol(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& symbols() const { return tokens_; }

  // Throws std::out_of_range for an OOV word when the vocabulary has no <unk>.
  std::vector<int> tokenize(std::string_view text) const;
  // Tags are glued to their neighbours, words are space separated; EOS ends the text.
  std::string detokenize(std::span<const int> ids) const;

  bool is_tag(int id) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int eos_ = -1;
  std::optional<int> unk_;
};

}  // namespace cotd

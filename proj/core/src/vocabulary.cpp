#include "cotd/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace cotd {
namespace {

constexpr std::string_view kTags[] = {"<think>", "</think>", "<answer>", "</answer>"};

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() > static_cast<std::size_t>(kMaxVocabulary)) {
    throw std::invalid_argument("vocabulary larger than 64 symbols");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary symbol '" + tokens_[i] + "'");
    }
  }
  auto eos = index_.find(std::string(kEosToken));
  if (eos == index_.end()) throw std::invalid_argument("vocabulary must contain </s>");
  eos_ = eos->second;
  if (auto unk = index_.find(std::string(kUnkToken)); unk != index_.end()) unk_ = unk->second;
}

Vocabulary Vocabulary::standard() {
  std::vector<std::string> t = {std::string(kEosToken), std::string(kUnkToken)};
  for (auto tag : kTags) t.emplace_back(tag);
  for (char c = 'A'; c <= 'H'; ++c) t.emplace_back(1, c);
  for (auto e : {"rain", "dog", "siren", "bell", "car", "thunder", "wind", "horn"}) t.emplace_back(e);
  for (auto w : {"yes", "no", "0", "1", "2", "3", "present", "many", "position"}) t.emplace_back(w);
  return Vocabulary(std::move(t));
}

std::optional<int> Vocabulary::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view symbol) const {
  if (auto i = find(symbol)) return *i;
  throw std::out_of_range("symbol '" + std::string(symbol) + "' not in vocabulary");
}

bool Vocabulary::is_tag(int id) const {
  const auto& s = symbol(id);
  return std::find(std::begin(kTags), std::end(kTags), s) != std::end(kTags);
}

std::vector<int> Vocabulary::tokenize(std::string_view text) const {
  std::vector<int> out;
  auto push_word = [&](std::string_view word) {
    std::optional<int> id = find(word);
    if (!id) {
      std::string folded(word);
      std::transform(folded.begin(), folded.end(), folded.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      id = find(folded);
    }
    if (!id) {
      if (!unk_) throw std::out_of_range("out-of-vocabulary word '" + std::string(word) + "'");
      if (!out.empty() && out.back() == *unk_) return;
      id = unk_;
    }
    out.push_back(*id);
  };

  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '<') {
      bool matched = false;
      for (auto tag : kTags) {
        if (text.substr(i, tag.size()) == tag) {
          if (auto id = find(tag)) {
            out.push_back(*id);
          } else {
            push_word(tag);
          }
          i += tag.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    if (is_word_char(text[i])) {
      std::size_t j = i;
      while (j < text.size() && is_word_char(text[j])) ++j;
      push_word(text.substr(i, j - i));
      i = j;
      continue;
    }
    ++i;
  }
  return out;
}

std::string Vocabulary::detokenize(std::span<const int> ids) const {
  std::string out;
  bool prev_word = false;
  for (int id : ids) {
    if (id == eos_) break;
    const auto& s = symbol(id);
    if (is_tag(id)) {
      out += s;
      prev_word = false;
    } else {
      if (prev_word) out += ' ';
      out += s;
      prev_word = true;
    }
  }
  return out;
}

}  // namespace cotd

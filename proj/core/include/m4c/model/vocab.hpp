#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace m4c::model {

/// Fixed answer vocabulary. Slot 0 is <begin>, slot 1 is <end>, then words.
class AnswerVocab {
 public:
  static constexpr std::size_t kBegin = 0;
  static constexpr std::size_t kEnd = 1;
  static constexpr std::string_view kBeginToken = "<begin>";
  static constexpr std::string_view kEndToken = "<end>";

  AnswerVocab();
  explicit AnswerVocab(std::span<const std::string> words);

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::size_t index) const { return words_.at(index); }
  std::optional<std::size_t> find(std::string_view word) const;
  bool is_special(std::size_t index) const { return index == kBegin || index == kEnd; }
  // Words without the two special tokens, in slot order.
  std::vector<std::string> plain_words() const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Learned-mode question token table; index 0 is <unk>.
class QuestionVocab {
 public:
  static constexpr std::string_view kUnknown = "<unk>";

  QuestionVocab();
  explicit QuestionVocab(std::span<const std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(std::string_view token) const;  // unknown tokens map to 0
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace m4c::model

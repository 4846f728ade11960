#include "m4c/model/vocab.hpp"

#include "m4c/errors.hpp"

namespace m4c::model {

AnswerVocab::AnswerVocab() : AnswerVocab(std::span<const std::string>{}) {}

AnswerVocab::AnswerVocab(std::span<const std::string> words) {
  words_.emplace_back(kBeginToken);
  words_.emplace_back(kEndToken);
  words_.insert(words_.end(), words.begin(), words.end());
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (!index_.emplace(words_[i], i).second) {
      throw ValidationError("duplicate answer vocabulary entry '" + words_[i] + "'");
    }
  }
}

std::optional<std::size_t> AnswerVocab::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> AnswerVocab::plain_words() const {
  return {words_.begin() + 2, words_.end()};
}

QuestionVocab::QuestionVocab() : QuestionVocab(std::span<const std::string>{}) {}

QuestionVocab::QuestionVocab(std::span<const std::string> tokens) {
  tokens_.emplace_back(kUnknown);
  for (const auto& t : tokens) {
    if (t == kUnknown) continue;
    if (index_.emplace(t, tokens_.size()).second) tokens_.push_back(t);
  }
  index_.emplace(std::string(kUnknown), 0);
}

std::size_t QuestionVocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? 0 : it->second;
}

}  // namespace m4c::model

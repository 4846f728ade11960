#include "m4c/train/targets.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "m4c/errors.hpp"

namespace m4c::train {

using model::AnswerVocab;
using model::StepInput;

std::vector<std::string> tokenize_answer(std::string_view answer) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : answer) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

model::AnswerVocab build_answer_vocab(std::span<const feat::ScenePack> scenes,
                                      std::size_t max_words) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : scenes)
    for (const auto& a : s.answers)
      for (auto& w : tokenize_answer(a)) ++counts[w];
  counts.erase(std::string(AnswerVocab::kBeginToken));
  counts.erase(std::string(AnswerVocab::kEndToken));
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_words) ranked.resize(max_words);
  std::vector<std::string> words;
  for (auto& [w, _] : ranked) words.push_back(w);
  return AnswerVocab(words);
}

std::optional<StepTargets> build_step_targets(std::span<const std::string> words,
                                              const AnswerVocab& vocab,
                                              std::span<const std::string> ocr_texts,
                                              const model::M4CConfig& config) {
  const std::size_t T = config.max_decode_steps;
  const std::size_t V = config.vocab_size;
  const std::size_t N = config.max_ocr_tokens;
  if (vocab.size() != V) {
    throw ValidationError("answer vocabulary has " + std::to_string(vocab.size()) +
                          " entries, config expects " + std::to_string(V));
  }
  if (ocr_texts.size() > N) throw InternalError("more OCR texts than slots");

  StepTargets st;
  st.steps = T;
  st.width = V + N;
  const std::size_t n_words = std::min(words.size(), T - 1);
  st.words.assign(words.begin(), words.begin() + static_cast<std::ptrdiff_t>(n_words));
  st.supervised = n_words + 1;
  st.targets.assign(T * st.width, 0.0);
  st.mask.assign(T * st.width, 0.0);
  st.inputs.assign(T, StepInput{StepInput::Kind::kVocab, AnswerVocab::kEnd});
  st.inputs[0] = StepInput{StepInput::Kind::kVocab, AnswerVocab::kBegin};

  // Columns the loss may look at, shared by all supervised steps.
  std::vector<double> columns(st.width, 0.0);
  for (std::size_t v = 0; v < V; ++v) {
    if (v == AnswerVocab::kBegin) continue;
    if (v != AnswerVocab::kEnd && !config.enable_fixed_vocab) continue;
    columns[v] = 1.0;
  }
  if (config.enable_ocr_copy) {
    for (std::size_t j = 0; j < ocr_texts.size(); ++j) columns[V + j] = 1.0;
  }

  for (std::size_t t = 0; t < st.supervised; ++t) {
    double* target = st.targets.data() + t * st.width;
    std::copy(columns.begin(), columns.end(), st.mask.begin() + static_cast<std::ptrdiff_t>(t * st.width));
    if (t == n_words) {
      target[AnswerVocab::kEnd] = 1.0;
      break;
    }
    const std::string& w = st.words[t];
    constexpr std::size_t kNone = static_cast<std::size_t>(-1);
    std::size_t first_ocr = kNone, vocab_slot = kNone;
    if (config.enable_ocr_copy) {
      for (std::size_t j = 0; j < ocr_texts.size(); ++j) {
        if (ocr_texts[j] != w) continue;
        target[V + j] = 1.0;
        if (first_ocr == kNone) first_ocr = j;
      }
    }
    if (config.enable_fixed_vocab) {
      const auto found = vocab.find(w);
      if (found && !vocab.is_special(*found)) {
        vocab_slot = *found;
        target[vocab_slot] = 1.0;
      }
    }
    if (first_ocr != kNone) {
      st.inputs[t + 1] = StepInput{StepInput::Kind::kOcr, first_ocr};
    } else if (vocab_slot != kNone) {
      st.inputs[t + 1] = StepInput{StepInput::Kind::kVocab, vocab_slot};
    } else {
      return std::nullopt;
    }
  }
  return st;
}

std::string input_surface(const StepInput& in, const AnswerVocab& vocab,
                          std::span<const std::string> ocr_texts) {
  if (in.kind == StepInput::Kind::kVocab) return vocab.word(in.index);
  if (in.index >= ocr_texts.size()) throw InternalError("OCR input index out of range");
  return ocr_texts[in.index];
}

}  // namespace m4c::train

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "m4c/featurize/scene.hpp"
#include "m4c/model/config.hpp"
#include "m4c/model/m4c.hpp"
#include "m4c/model/vocab.hpp"

namespace m4c::train {

// Lowercase, split on whitespace runs.
std::vector<std::string> tokenize_answer(std::string_view answer);

/// The `max_words` most frequent answer words (ties broken alphabetically).
model::AnswerVocab build_answer_vocab(std::span<const feat::ScenePack> scenes,
                                      std::size_t max_words);

/// Supervision for one example over the full T × (V+N) score grid.
struct StepTargets {
  std::size_t steps = 0;       // T
  std::size_t width = 0;       // V + N
  std::size_t supervised = 0;  // answer words + 1 (<end>)
  std::vector<double> targets;  // [T × width], 0/1
  std::vector<double> mask;     // [T × width], 1 where the loss looks
  std::vector<model::StepInput> inputs;  // [T]: <begin>, then one per word
  std::vector<std::string> words;        // answer words after truncation
};

/// Builds targets and teacher-forcing inputs for one tokenized answer.
/// `ocr_texts` are normalized OCR strings of the (truncated) scene. Returns
/// nullopt when some word can be produced by neither enabled head.
std::optional<StepTargets> build_step_targets(std::span<const std::string> words,
                                              const model::AnswerVocab& vocab,
                                              std::span<const std::string> ocr_texts,
                                              const model::M4CConfig& config);

/// Surface form a step input stands for.
std::string input_surface(const model::StepInput& in, const model::AnswerVocab& vocab,
                          std::span<const std::string> ocr_texts);

}  // namespace m4c::train

#pragma once

#include <cstddef>

#include "m4c/featurize/scene.hpp"

namespace m4c::model {

/// Network shape. Defaults are the published hyper-parameters.
struct M4CConfig {
  std::size_t hidden_dim = 768;
  std::size_t num_layers = 4;
  std::size_t num_heads = 12;
  std::size_t ffn_dim = 3072;
  std::size_t max_question_words = 20;  // K
  std::size_t max_objects = 100;        // M
  std::size_t max_ocr_tokens = 50;      // N
  std::size_t max_decode_steps = 12;    // T
  std::size_t vocab_size = 5002;        // V, includes <begin> and <end>
  double dropout = 0.1;
  bool enable_fixed_vocab = true;
  bool enable_ocr_copy = true;

  // Input feature sizes.
  feat::QuestionMode question_mode = feat::QuestionMode::kLearned;
  std::size_t question_vocab_size = 1;  // learned mode token table
  std::size_t question_dim = 768;       // ingested mode vector width
  std::size_t object_feat_dim = 2048;
  std::size_t ocr_frcn_dim = 2048;
  std::size_t ocr_ft_dim = 300;

  double layer_norm_eps = 1e-12;
  double init_std = 0.02;

  std::size_t sequence_length() const {
    return max_question_words + max_objects + max_ocr_tokens + max_decode_steps;
  }
  feat::Caps caps() const { return {max_question_words, max_objects, max_ocr_tokens}; }

  // Throws ValidationError on inconsistent settings.
  void validate() const;
};

}  // namespace m4c::model

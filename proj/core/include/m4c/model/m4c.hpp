#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "m4c/featurize/scene.hpp"
#include "m4c/model/config.hpp"
#include "m4c/model/vocab.hpp"
#include "m4c/num/ops.hpp"
#include "m4c/num/params.hpp"

namespace m4c::model {

/// All learnable tensors of the network, named and shaped from a config.
struct ModelParams {
  M4CConfig config;
  num::ParameterSet tensors;

  /// Truncated-normal(0, init_std) weights and embeddings, zero biases,
  /// unit layer-norm gains.
  static ModelParams initialize(const M4CConfig& config, std::uint64_t seed);

  ModelParams clone() const { return {config, tensors.clone()}; }

  /// Copy limited to the first `steps` decoding steps (steps <= T). Decoding
  /// with it reproduces the first `steps` steps of the full model.
  ModelParams with_decode_steps(std::size_t steps) const;

  const num::Tensor& operator[](std::string_view name) const { return tensors.get(name); }
  num::Tensor& operator[](std::string_view name) { return tensors.get(name); }
};

/// A scene turned into model-ready numeric rows (PHOC and box features
/// included). Lists are already truncated to the config caps.
struct EncodedScene {
  std::string id;
  std::vector<std::size_t> question_ids;                // learned mode
  std::vector<std::vector<double>> question_vectors;    // ingested mode
  std::vector<std::vector<double>> object_features;
  std::vector<std::array<double, 4>> object_boxes;
  std::vector<std::vector<double>> ocr_word;
  std::vector<std::vector<double>> ocr_appearance;
  std::vector<std::vector<double>> ocr_phoc;
  std::vector<std::array<double, 4>> ocr_boxes;
  std::vector<std::string> ocr_texts;  // normalized

  std::size_t num_ocr() const { return ocr_texts.size(); }
};

EncodedScene encode_scene(const feat::ScenePack& scene, const M4CConfig& config,
                          const QuestionVocab& question_vocab);

/// Several scenes padded to the config caps and packed example-major.
struct EncodedBatch {
  std::size_t batch = 0;
  std::vector<std::size_t> question_ids;  // [B*K], learned mode
  num::Tensor question_vectors;           // [B*K × question_dim], ingested mode
  std::vector<double> question_mask;      // [B*K]
  num::Tensor object_features;            // [B*M × object_feat_dim]
  num::Tensor object_boxes;               // [B*M × 4]
  std::vector<double> object_mask;
  num::Tensor ocr_word;        // [B*N × ocr_ft_dim]
  num::Tensor ocr_appearance;  // [B*N × ocr_frcn_dim]
  num::Tensor ocr_phoc;        // [B*N × 604]
  num::Tensor ocr_boxes;       // [B*N × 4]
  std::vector<double> ocr_mask;
  std::vector<std::size_t> ocr_counts;  // valid OCR tokens per example
};

EncodedBatch make_batch(std::span<const EncodedScene* const> scenes, const M4CConfig& config);

/// Packed per-slot embeddings with their validity mask.
struct Embedded {
  num::Tensor rows;          // [B*slots × d], padding rows are zero
  std::vector<double> mask;  // [B*slots], 1 real / 0 padding
};

Embedded embed_question(const ModelParams& params, const EncodedBatch& batch);
Embedded embed_objects(const ModelParams& params, const EncodedBatch& batch);
Embedded embed_ocr(const ModelParams& params, const EncodedBatch& batch);

/// What fed decoding step t: a vocabulary word (its head weight row) or an
/// OCR token (its embedding).
struct StepInput {
  enum class Kind { kVocab, kOcr };
  Kind kind = Kind::kVocab;
  std::size_t index = AnswerVocab::kBegin;
  bool operator==(const StepInput&) const = default;
};

/// Decoder inputs for all B*T slots: base vector + step position + type of
/// the previous prediction. `steps` is example-major, T entries per example.
num::Tensor step_input_embeddings(const ModelParams& params, std::span<const StepInput> steps,
                                  const num::Tensor& ocr_embeddings, std::size_t batch);

/// Which slots may attend to which, for one example laid out as
/// [question K | objects M | OCR N | decode T]. Row i lists what slot i may
/// attend to; result is row-major (K+M+N+T)² of 0/1.
std::vector<std::uint8_t> build_joint_mask(std::span<const double> question_mask,
                                           std::span<const double> object_mask,
                                           std::span<const double> ocr_mask,
                                           std::span<const double> decode_mask);

/// The entity + decode sequence for a packed batch.
struct JointSequence {
  std::size_t batch = 0;
  std::size_t seq = 0;
  num::Tensor embeddings;  // [B*seq × d]
  std::shared_ptr<const num::AttentionMask> mask;
};

JointSequence assemble_joint(const M4CConfig& config, const Embedded& question,
                             const Embedded& objects, const Embedded& ocr,
                             const Embedded& decode);

struct RunMode {
  bool train = false;            // enables dropout
  std::mt19937_64* rng = nullptr;  // required when train && dropout > 0
};

/// L post-norm transformer layers with masked multi-head self-attention and
/// a GELU feed-forward block.
num::Tensor transformer_forward(const ModelParams& params, const JointSequence& joint,
                                const RunMode& mode);

/// Fixed-vocabulary head: rows of z_dec -> V raw scores.
num::Tensor vocab_scores(const ModelParams& params, const num::Tensor& z_dec);

/// Bilinear pointer head: per example, (W_ocr z_ocr + b_ocr)·(W_dec z_dec + b_dec).
/// z_dec [B*T × d], z_ocr [B*N × d] -> raw scores [B*T × N].
num::Tensor pointer_scores(const ModelParams& params, const num::Tensor& z_dec,
                           const num::Tensor& z_ocr, std::size_t batch);

struct ForwardResult {
  num::Tensor ocr_embeddings;  // x_ocr, [B*N × d]
  num::Tensor z_question;      // [B*K × d]
  num::Tensor z_objects;       // [B*M × d]
  num::Tensor z_ocr;           // [B*N × d]
  num::Tensor z_dec;           // [B*T × d]
  num::Tensor vocab_scores;    // [B*T × V]
  num::Tensor ocr_scores;      // [B*T × N]
  num::Tensor all_scores;      // [B*T × (V+N)]
};

/// Full pass. `steps` holds B*T step inputs; decode slot t of example b is
/// treated as real iff t < decode_lengths[b].
ForwardResult forward(const ModelParams& params, const EncodedBatch& batch,
                      std::span<const StepInput> steps,
                      std::span<const std::size_t> decode_lengths, const RunMode& mode);

// Name constants for parameters other modules touch directly.
inline constexpr std::string_view kVocabWeight = "vocab_head.weight";
inline constexpr std::string_view kVocabBias = "vocab_head.bias";

}  // namespace m4c::model

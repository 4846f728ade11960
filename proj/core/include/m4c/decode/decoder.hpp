#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "m4c/model/m4c.hpp"

namespace m4c::decode {

using Kind = model::StepInput::Kind;

struct Component {
  Kind kind = Kind::kVocab;
  std::size_t index = 0;
  std::string surface;
  bool operator==(const Component&) const = default;
};

struct DecodeResult {
  std::string id;
  std::vector<Component> components;  // never contains <begin>; stops before <end>
  std::string answer;                 // surfaces joined by single spaces
  std::vector<std::vector<double>> step_scores;  // masked [vocab | ocr] per step
  std::size_t steps_used = 0;
};

struct Selection {
  Kind kind = Kind::kVocab;
  std::size_t index = 0;
  bool operator==(const Selection&) const = default;
};

/// Argmax over [vocab (vocab_size) | ocr]; ties go to the lowest position.
/// Throws InternalError when no score is finite.
Selection select_argmax(std::span<const double> scores, std::size_t vocab_size);

/// Raw head scores for one step turned into decision scores: <begin> never
/// eligible, disabled heads and padding OCR slots at -inf.
std::vector<double> mask_step_scores(std::span<const double> raw, const model::M4CConfig& config,
                                     std::size_t ocr_count);

/// Greedy auto-regressive decoding of one scene.
DecodeResult decode_answer(const model::ModelParams& params, const model::AnswerVocab& vocab,
                           const model::EncodedScene& scene);

/// Same as decode_answer over many scenes, `batch_size` at a time.
std::vector<DecodeResult> decode_all(const model::ModelParams& params,
                                     const model::AnswerVocab& vocab,
                                     std::span<const model::EncodedScene> scenes,
                                     std::size_t batch_size = 64);

/// Masked per-step scores from one full pass with all step inputs given,
/// for comparison with incremental decoding. `inputs` has T entries.
std::vector<std::vector<double>> teacher_forced_scores(const model::ModelParams& params,
                                                       const model::EncodedScene& scene,
                                                       std::span<const model::StepInput> inputs,
                                                       std::size_t steps);

/// The step inputs a decode result implies: <begin>, then each component.
std::vector<model::StepInput> realized_inputs(const DecodeResult& result, std::size_t max_steps);

// Prediction file: JSON lines {id, answer, trace: ["kind:index:surface"], steps_used}.
void write_predictions(std::ostream& out, std::span<const DecodeResult> results);
void save_predictions(const std::filesystem::path& path, std::span<const DecodeResult> results);

struct PredictionRecord {
  std::string id;
  std::string answer;
  std::vector<std::string> trace;
  std::size_t steps_used = 0;
};
std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path);

std::string trace_entry(const Component& c);

}  // namespace m4c::decode

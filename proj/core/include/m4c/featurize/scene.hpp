#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace m4c::feat {

struct BBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  bool operator==(const BBox&) const = default;
};

struct ImageSize {
  double width = 0, height = 0;
  bool operator==(const ImageSize&) const = default;
};

struct OcrTokenInput {
  std::string text;
  BBox bbox;
  std::vector<double> feat_appearance;  // detector RoI feature
  std::vector<double> feat_word;        // FastText-style word vector
  bool operator==(const OcrTokenInput&) const = default;
};

struct DetectedObjectInput {
  BBox bbox;
  std::vector<double> feat_appearance;
  bool operator==(const DetectedObjectInput&) const = default;
};

enum class QuestionMode { kIngested, kLearned };

std::string_view to_string(QuestionMode mode);
QuestionMode question_mode_from_string(std::string_view s);

/// One example: question, detected objects, OCR tokens and answers.
/// Exactly one of question_tokens / question_vectors is used, per the
/// dataset's QuestionMode.
struct ScenePack {
  std::string id;
  ImageSize image_size;
  std::vector<std::string> question_tokens;
  std::vector<std::vector<double>> question_vectors;
  std::vector<DetectedObjectInput> objects;
  std::vector<OcrTokenInput> ocr;
  std::vector<std::string> answers;
  bool operator==(const ScenePack&) const = default;
};

/// Sidecar description of a scene-pack dataset.
struct Manifest {
  QuestionMode mode = QuestionMode::kLearned;
  std::size_t question_dim = 0;  // ingested mode only
  std::size_t object_feat_dim = 0;
  std::size_t ocr_frcn_dim = 0;
  std::size_t ocr_ft_dim = 300;
  // Learned mode: question token table; index 0 is reserved for "<unk>".
  std::vector<std::string> question_vocab;
  // Optional fixed answer vocabulary (words only, no special tokens).
  std::vector<std::string> answer_vocab;
  std::string family;
  std::uint64_t seed = 0;
  bool operator==(const Manifest&) const = default;
};

struct Caps {
  std::size_t max_question_words = 20;
  std::size_t max_objects = 100;
  std::size_t max_ocr_tokens = 50;
};

/// Relative box [x_min/W, y_min/H, x_max/W, y_max/H].
std::array<double, 4> bbox_feature(const BBox& box, const ImageSize& image);

// Lowercase and trim surrounding whitespace. Punctuation is kept.
std::string normalize_token(std::string_view text);

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Reads JSON-lines scene records, validates them against `manifest` and
/// truncates lists to `caps` (warning on `warn` when non-null).
std::vector<ScenePack> read_scene_pack(std::istream& in, const Manifest& manifest,
                                       const Caps& caps, std::ostream* warn);
std::vector<ScenePack> load_scene_pack(const std::filesystem::path& path,
                                       const Manifest& manifest, const Caps& caps,
                                       std::ostream* warn);

void write_scene_pack(std::ostream& out, std::span<const ScenePack> scenes, QuestionMode mode);
void save_scene_pack(const std::filesystem::path& path, std::span<const ScenePack> scenes,
                     QuestionMode mode);

// Conventional file names inside a dataset directory.
inline constexpr std::string_view kManifestFile = "manifest.json";
inline constexpr std::string_view kTrainFile = "train.jsonl";
inline constexpr std::string_view kValFile = "val.jsonl";

}  // namespace m4c::feat

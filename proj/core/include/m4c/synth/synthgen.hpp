#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "m4c/featurize/scene.hpp"

namespace m4c::synth {

enum class Family { kCopyOne, kCopyMulti, kVocabLookup, kMixed };
std::string_view to_string(Family f);
Family family_from_string(std::string_view s);

/// Parameters of a synthetic scene distribution.
///
/// OCR tokens sit in the cells of a grid_rows × grid_cols layout; each token
/// carries a hidden class (one of `words`) visible only through its
/// appearance vector. Questions name a cell ("r2 c1") or a row ("r2").
struct SynthSpec {
  std::uint64_t seed = 0;
  Family family = Family::kCopyOne;
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 10;
  std::vector<std::string> words;  // class words, answerable only by the vocabulary head
  std::string alphabet = "bcdfghjklmnpqrstvwxz";
  std::size_t min_length = 3;
  std::size_t max_length = 5;
  std::size_t appearance_dim = 32;
  std::size_t object_feat_dim = 32;
  std::size_t max_objects = 4;
  std::size_t word_dim = 300;
  std::size_t grid_rows = 4;
  std::size_t grid_cols = 4;
  double image_width = 640;
  double image_height = 480;
  double appearance_noise = 0.3;  // norm of the noise added to a class prototype
  std::size_t max_retries = 1000;

  void validate() const;
};

// Thirty color names; none can be spelled with the default alphabet.
std::vector<std::string> default_words();

SynthSpec default_spec(Family family, std::uint64_t seed);

/// Deterministic in (spec, index).
feat::ScenePack generate_example(const SynthSpec& spec, std::size_t index);

/// Question tokens any family can emit, for the manifest.
std::vector<std::string> question_vocabulary(const SynthSpec& spec);

feat::Manifest make_manifest(const SynthSpec& spec);

/// Writes manifest.json, train.jsonl (indices [0, n_train)) and val.jsonl
/// (indices [n_train, n_train + n_val)) into `out_dir`.
void generate_dataset(const SynthSpec& spec, std::size_t n_train, std::size_t n_val,
                      const std::filesystem::path& out_dir);

}  // namespace m4c::synth

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "m4c/metrics/metrics.hpp"
#include "m4c/model/config.hpp"
#include "m4c/synth/synthgen.hpp"
#include "m4c/train/schedule.hpp"
#include "m4c/train/trainer.hpp"

namespace m4c::cli {

enum class Ablation { kNone, kNoVocab, kNoCopy };
std::string_view to_string(Ablation a);
Ablation ablation_from_string(std::string_view s);

/// Everything a subcommand needs, merged from defaults, a config file and
/// command-line flags (in increasing precedence).
struct RunConfig {
  model::M4CConfig model;
  train::LrSchedule schedule;
  train::TrainOptions training;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::kNone;
  std::filesystem::path data;
  std::filesystem::path out;

  // Synthetic generation.
  synth::Family family = synth::Family::kCopyOne;
  std::size_t n_train = 1000;
  std::size_t n_val = 200;
  std::size_t min_tokens = 3;
  std::size_t max_tokens = 10;
  std::size_t grid_rows = 4;
  std::size_t grid_cols = 4;

  /// Sets one key from its text value. Throws ValidationError on unknown
  /// keys and bad values.
  void set(std::string_view key, std::string_view value);

  /// Applies `ablation` to the model's head switches.
  void apply_ablation();
};

/// `key = value` lines; `#` starts a comment. Errors carry the line number.
void read_run_config(std::istream& in, RunConfig& config);
void load_run_config(const std::filesystem::path& path, RunConfig& config);

/// Writes every key so the file reproduces `config` when read back.
void write_run_config(std::ostream& out, const RunConfig& config);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace m4c::cli

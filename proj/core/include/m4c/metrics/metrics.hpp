#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace m4c::metrics {

/// Edit distance over Unicode code points (UTF-8 input).
std::size_t levenshtein(std::string_view a, std::string_view b);

// Lowercase, trim, collapse internal whitespace runs to one space.
std::string normalize_answer(std::string_view s);

// Scores below this are reported as 0.
inline constexpr double kAnlsThreshold = 0.5;

/// Max over ground truths of 1 - d/max(|pred|, |gt|) on normalized strings,
/// then truncated to 0 below the threshold. Needs at least one ground truth.
double anls(std::string_view pred, std::span<const std::string> gts);

/// Ten-annotator soft accuracy: mean over leave-one-out subsets of
/// min(matches / 3, 1). Needs exactly 10 ground truths.
double vqa_soft_accuracy(std::string_view pred, std::span<const std::string> gts);

// 1 when the normalized prediction equals any normalized ground truth.
double exact_match(std::string_view pred, std::span<const std::string> gts);

enum class Metric { kAnls, kVqa, kExact };
std::string_view to_string(Metric m);
Metric metric_from_string(std::string_view s);
double score(Metric m, std::string_view pred, std::span<const std::string> gts);

struct EvalRecord {
  std::string id;
  std::string prediction;
  std::vector<std::string> ground_truths;
  double score = 0.0;
};

struct Report {
  Metric metric = Metric::kExact;
  std::size_t count = 0;
  double mean = 0.0;
  std::size_t missing = 0;
  std::vector<EvalRecord> records;  // sorted by id
};

/// Scores every ground-truth entry; ids absent from `predictions` score 0.
/// `predictions` maps id -> answer; an id not present in `ground_truth`
/// raises ValidationError.
Report evaluate_set(const std::map<std::string, std::string>& predictions,
                    const std::map<std::string, std::vector<std::string>>& ground_truth,
                    Metric metric, std::ostream* warn);

void write_report(std::ostream& out, const Report& report);
void save_report(const std::filesystem::path& path, const Report& report);

}  // namespace m4c::metrics

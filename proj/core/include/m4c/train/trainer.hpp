#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "m4c/featurize/scene.hpp"
#include "m4c/metrics/metrics.hpp"
#include "m4c/model/m4c.hpp"
#include "m4c/num/tensor.hpp"
#include "m4c/train/schedule.hpp"
#include "m4c/train/targets.hpp"

namespace m4c::train {

/// Sigmoid BCE over each example's T × (V+N) grid under its loss mask,
/// averaged over unmasked cells, then over examples. `all_scores` is
/// [B*T × (V+N)] in example-major order.
num::Tensor sequence_loss(const num::Tensor& all_scores,
                          std::span<const StepTargets* const> targets);

struct TrainingExample {
  model::EncodedScene scene;
  StepTargets targets;
};

struct EvalExample {
  model::EncodedScene scene;
  std::vector<std::string> answers;
};

struct PreparedTraining {
  std::vector<TrainingExample> examples;
  std::size_t unreachable = 0;  // scenes skipped because no answer was reachable
};

/// Encodes scenes and builds targets. Among several ground-truth answers the
/// most frequent reachable one is used (earliest on ties).
PreparedTraining prepare_training(std::span<const feat::ScenePack> scenes,
                                  const model::M4CConfig& config,
                                  const model::QuestionVocab& question_vocab,
                                  const model::AnswerVocab& answer_vocab);

std::vector<EvalExample> prepare_eval(std::span<const feat::ScenePack> scenes,
                                      const model::M4CConfig& config,
                                      const model::QuestionVocab& question_vocab);

struct TrainOptions {
  std::size_t batch_size = 128;
  double clip_norm = 0.25;
  std::size_t eval_interval = 1000;  // 0: evaluate only after the last iteration
  std::size_t eval_batch = 64;
  metrics::Metric metric = metrics::Metric::kExact;
  std::uint64_t seed = 0;
};

struct LogRow {
  std::size_t iter = 0;  // iterations completed
  double lr = 0.0;
  double train_loss = 0.0;  // mean since the previous row
  std::optional<double> val_metric;
};

struct TrainResult {
  model::ModelParams best;  // best validation snapshot (final params without a val set)
  std::vector<LogRow> log;
  std::vector<double> losses;  // every iteration
  std::size_t best_iter = 0;
  std::optional<double> best_val;
};

/// Decodes `examples` and averages `metric` against their answers.
double evaluate(const model::ModelParams& params, const model::AnswerVocab& vocab,
                std::span<const EvalExample> examples, metrics::Metric metric,
                std::size_t batch_size = 64);

/// Teacher-forced training with Adam, global-norm clipping and the given
/// schedule. Rows are written to `metrics_log` as they are produced.
TrainResult train_loop(model::ModelParams params, const model::AnswerVocab& vocab,
                       std::span<const TrainingExample> train,
                       std::span<const EvalExample> val, const LrSchedule& schedule,
                       const TrainOptions& options, std::ostream* metrics_log);

void write_log_row(std::ostream& out, const LogRow& row);

}  // namespace m4c::train

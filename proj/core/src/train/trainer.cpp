#include "m4c/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "m4c/decode/decoder.hpp"
#include "m4c/errors.hpp"
#include "m4c/num/ops.hpp"
#include "m4c/num/optim.hpp"

namespace m4c::train {

using num::Tensor;

num::Tensor sequence_loss(const Tensor& all_scores, std::span<const StepTargets* const> targets) {
  const std::size_t B = targets.size();
  if (B == 0) throw InternalError("sequence_loss: empty batch");
  const std::size_t T = targets[0]->steps, W = targets[0]->width;
  if (all_scores.rank() != 2 || all_scores.rows() != B * T || all_scores.cols() != W) {
    throw DimensionError("sequence_loss: scores " + num::shape_str(all_scores.shape()) +
                         " do not match " + std::to_string(B) + " examples of " +
                         std::to_string(T) + "x" + std::to_string(W));
  }
  Tensor total;
  for (std::size_t b = 0; b < B; ++b) {
    const StepTargets& st = *targets[b];
    if (st.steps != T || st.width != W) throw DimensionError("sequence_loss: ragged targets");
    const Tensor y = num::slice_rows(all_scores, b * T, (b + 1) * T);
    const Tensor loss = num::sigmoid_bce_with_logits(y, Tensor::from_data({T, W}, st.targets),
                                                     Tensor::from_data({T, W}, st.mask));
    total = total.defined() ? num::add(total, loss) : loss;
  }
  return num::scale(total, 1.0 / static_cast<double>(B));
}

namespace {

std::vector<std::string> ranked_answers(const std::vector<std::string>& answers) {
  std::map<std::string, std::size_t> count, first;
  std::vector<std::string> norm;
  for (std::size_t i = 0; i < answers.size(); ++i) {
    std::string key;
    for (const auto& w : tokenize_answer(answers[i])) key += (key.empty() ? "" : " ") + w;
    ++count[key];
    first.emplace(key, i);
    norm.push_back(key);
  }
  std::vector<std::string> keys;
  for (const auto& [k, _] : count) keys.push_back(k);
  std::sort(keys.begin(), keys.end(), [&](const auto& a, const auto& b) {
    if (count[a] != count[b]) return count[a] > count[b];
    return first[a] < first[b];
  });
  return keys;
}

}  // namespace

PreparedTraining prepare_training(std::span<const feat::ScenePack> scenes,
                                  const model::M4CConfig& config,
                                  const model::QuestionVocab& question_vocab,
                                  const model::AnswerVocab& answer_vocab) {
  PreparedTraining out;
  for (const auto& s : scenes) {
    auto enc = model::encode_scene(s, config, question_vocab);
    std::optional<StepTargets> st;
    for (const auto& answer : ranked_answers(s.answers)) {
      const auto words = tokenize_answer(answer);
      st = build_step_targets(words, answer_vocab, enc.ocr_texts, config);
      if (st) break;
    }
    if (!st) {
      ++out.unreachable;
      continue;
    }
    out.examples.push_back({std::move(enc), std::move(*st)});
  }
  return out;
}

std::vector<EvalExample> prepare_eval(std::span<const feat::ScenePack> scenes,
                                      const model::M4CConfig& config,
                                      const model::QuestionVocab& question_vocab) {
  std::vector<EvalExample> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back({model::encode_scene(s, config, question_vocab), s.answers});
  return out;
}

double evaluate(const model::ModelParams& params, const model::AnswerVocab& vocab,
                std::span<const EvalExample> examples, metrics::Metric metric,
                std::size_t batch_size) {
  if (examples.empty()) return 0.0;
  std::vector<model::EncodedScene> scenes;
  scenes.reserve(examples.size());
  for (const auto& e : examples) scenes.push_back(e.scene);
  const auto results = decode::decode_all(params, vocab, scenes, batch_size);
  double total = 0.0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    total += metrics::score(metric, results[i].answer, examples[i].answers);
  }
  return total / static_cast<double>(examples.size());
}

void write_log_row(std::ostream& out, const LogRow& row) {
  std::ostringstream line;
  line << "iter " << row.iter << " lr " << std::setprecision(6) << row.lr << " train_loss "
       << std::setprecision(8) << row.train_loss << " val_metric ";
  if (row.val_metric) {
    line << std::setprecision(6) << *row.val_metric;
  } else {
    line << "none";
  }
  out << line.str() << '\n';
  out.flush();
}

TrainResult train_loop(model::ModelParams params, const model::AnswerVocab& vocab,
                       std::span<const TrainingExample> train,
                       std::span<const EvalExample> val, const LrSchedule& schedule,
                       const TrainOptions& options, std::ostream* metrics_log) {
  schedule.validate();
  if (train.empty()) throw ValidationError("training set is empty");
  if (options.batch_size == 0) throw ValidationError("batch_size must be > 0");
  if (!(options.clip_norm > 0)) throw ValidationError("clip_norm must be > 0");
  if (vocab.size() != params.config.vocab_size) {
    throw ValidationError("answer vocabulary size does not match the model");
  }

  const auto& config = params.config;
  const std::size_t T = config.max_decode_steps;
  const std::size_t B = std::min(options.batch_size, train.size());

  std::mt19937_64 order_rng(options.seed);
  std::mt19937_64 dropout_rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), order_rng);
  std::size_t cursor = 0;

  auto weights = params.tensors.tensors();
  num::AdamState adam;

  TrainResult result;
  result.best = params.clone();
  double window_loss = 0.0;
  std::size_t window = 0;

  const auto record = [&](std::size_t done, double lr) {
    LogRow row{done, lr, window == 0 ? 0.0 : window_loss / static_cast<double>(window), {}};
    window_loss = 0.0;
    window = 0;
    if (!val.empty()) {
      row.val_metric = evaluate(params, vocab, val, options.metric, options.eval_batch);
      if (!result.best_val || *row.val_metric > *result.best_val) {
        result.best_val = row.val_metric;
        result.best_iter = done;
        result.best = params.clone();
      }
    }
    if (metrics_log) write_log_row(*metrics_log, row);
    result.log.push_back(row);
  };

  for (std::size_t iter = 0; iter < schedule.max_iters; ++iter) {
    const double lr = lr_at_iter(iter, schedule);

    std::vector<std::size_t> picked;
    picked.reserve(B);
    while (picked.size() < B) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      picked.push_back(order[cursor++]);
    }

    std::vector<const model::EncodedScene*> scenes;
    std::vector<const StepTargets*> targets;
    std::vector<model::StepInput> inputs;
    std::vector<std::size_t> lengths;
    for (auto i : picked) {
      scenes.push_back(&train[i].scene);
      targets.push_back(&train[i].targets);
      inputs.insert(inputs.end(), train[i].targets.inputs.begin(), train[i].targets.inputs.end());
      lengths.push_back(train[i].targets.supervised);
    }
    if (inputs.size() != B * T) throw InternalError("teacher inputs do not match T");

    const auto batch = model::make_batch(scenes, config);
    model::RunMode mode{true, &dropout_rng};
    const auto fwd = model::forward(params, batch, inputs, lengths, mode);
    Tensor loss = sequence_loss(fwd.all_scores, targets);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "non-finite loss " << value << " at iteration " << iter << "; batch ids:";
      for (auto i : picked) msg << ' ' << train[i].scene.id;
      throw RuntimeFailure(msg.str());
    }
    params.tensors.zero_grad();
    loss.backward();
    num::clip_global_grad_norm(weights, options.clip_norm);
    num::adam_step(weights, adam, lr);

    result.losses.push_back(value);
    window_loss += value;
    ++window;

    const std::size_t done = iter + 1;
    const bool last = done == schedule.max_iters;
    if (last || (options.eval_interval > 0 && done % options.eval_interval == 0)) record(done, lr);
  }

  if (val.empty()) result.best = params.clone();
  return result;
}

}  // namespace m4c::train

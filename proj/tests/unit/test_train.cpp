#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "m4c/errors.hpp"
#include "m4c/train/schedule.hpp"
#include "m4c/train/targets.hpp"
#include "m4c/train/trainer.hpp"
#include "test_support.hpp"

using namespace m4c;
using namespace m4c::train;
using model::AnswerVocab;
using model::StepInput;

namespace {

model::M4CConfig target_config() {
  auto c = m4c::testing::tiny_config();
  c.vocab_size = 6;  // <begin> <end> red blue green gold
  c.max_ocr_tokens = 4;
  c.max_decode_steps = 4;
  return c;
}

double cell(const StepTargets& st, const std::vector<double>& grid, std::size_t t, std::size_t j) {
  return grid[t * st.width + j];
}

}  // namespace

TEST(Targets, Tokenize) {
  EXPECT_EQ(tokenize_answer("  Bud   LIGHT "), (std::vector<std::string>{"bud", "light"}));
  EXPECT_TRUE(tokenize_answer("   ").empty());
}

TEST(Targets, VocabByFrequencyThenAlphabet) {
  std::vector<feat::ScenePack> scenes(3);
  scenes[0].answers = {"b a", "c"};
  scenes[1].answers = {"a"};
  scenes[2].answers = {"c d", "<end>"};
  const auto v = build_answer_vocab(scenes, 3);
  EXPECT_EQ(v.plain_words(), (std::vector<std::string>{"a", "c", "b"}));
}

TEST(Targets, WordInBothHeadsMarksAllMatches) {
  const auto c = target_config();
  AnswerVocab v(m4c::testing::tiny_answer_words());
  const std::vector<std::string> ocr{"bud", "red", "bud"};
  const std::vector<std::string> words{"bud", "red"};
  const auto st = build_step_targets(words, v, ocr, c);
  ASSERT_TRUE(st);
  const std::size_t V = 6;
  EXPECT_EQ(st->supervised, 3u);
  // step 0: "bud" at OCR 0 and 2
  EXPECT_EQ(cell(*st, st->targets, 0, V + 0), 1.0);
  EXPECT_EQ(cell(*st, st->targets, 0, V + 2), 1.0);
  EXPECT_EQ(cell(*st, st->targets, 0, V + 1), 0.0);
  // step 1: "red" in the vocab (slot 2) and OCR 1
  EXPECT_EQ(cell(*st, st->targets, 1, 2), 1.0);
  EXPECT_EQ(cell(*st, st->targets, 1, V + 1), 1.0);
  // step 2: <end>
  EXPECT_EQ(cell(*st, st->targets, 2, AnswerVocab::kEnd), 1.0);
  // <begin>, padding OCR and unsupervised steps are excluded
  for (std::size_t t = 0; t < 3; ++t) {
    EXPECT_EQ(cell(*st, st->mask, t, AnswerVocab::kBegin), 0.0);
    EXPECT_EQ(cell(*st, st->mask, t, V + 3), 0.0);
    EXPECT_EQ(cell(*st, st->mask, t, V + 2), 1.0);
  }
  for (std::size_t j = 0; j < st->width; ++j) EXPECT_EQ(cell(*st, st->mask, 3, j), 0.0);
  // teacher inputs: lowest matching OCR slot wins over the vocab
  EXPECT_EQ(st->inputs[0], (StepInput{StepInput::Kind::kVocab, AnswerVocab::kBegin}));
  EXPECT_EQ(st->inputs[1], (StepInput{StepInput::Kind::kOcr, 0}));
  EXPECT_EQ(st->inputs[2], (StepInput{StepInput::Kind::kOcr, 1}));
}

TEST(Targets, TruncatesToStepBudget) {
  const auto c = target_config();  // T=4: at most 3 words then <end>
  AnswerVocab v(m4c::testing::tiny_answer_words());
  const std::vector<std::string> words{"red", "blue", "green", "gold", "red"};
  const auto st = build_step_targets(words, v, {}, c);
  ASSERT_TRUE(st);
  EXPECT_EQ(st->words.size(), 3u);
  EXPECT_EQ(st->supervised, 4u);
  EXPECT_EQ(cell(*st, st->targets, 3, AnswerVocab::kEnd), 1.0);
}

TEST(Targets, UnreachableAndAblations) {
  auto c = target_config();
  AnswerVocab v(m4c::testing::tiny_answer_words());
  const std::vector<std::string> ocr{"exit"};
  EXPECT_FALSE(build_step_targets(std::vector<std::string>{"purple"}, v, ocr, c));
  EXPECT_FALSE(build_step_targets(std::vector<std::string>{"<end>"}, v, ocr, c));
  c.enable_ocr_copy = false;
  EXPECT_FALSE(build_step_targets(std::vector<std::string>{"exit"}, v, ocr, c));
  auto st = build_step_targets(std::vector<std::string>{"red"}, v, ocr, c);
  ASSERT_TRUE(st);
  EXPECT_EQ(cell(*st, st->mask, 0, 6), 0.0);
  c.enable_ocr_copy = true;
  c.enable_fixed_vocab = false;
  EXPECT_FALSE(build_step_targets(std::vector<std::string>{"red"}, v, ocr, c));
  st = build_step_targets(std::vector<std::string>{"exit"}, v, ocr, c);
  ASSERT_TRUE(st);
  EXPECT_EQ(cell(*st, st->mask, 0, 2), 0.0);
  EXPECT_EQ(cell(*st, st->mask, 0, AnswerVocab::kEnd), 1.0);
  c.vocab_size = 7;
  EXPECT_THROW(build_step_targets(std::vector<std::string>{"exit"}, v, ocr, c), ValidationError);
}

TEST(Loss, ZeroLogitsGiveLn2AndPerfectLogitsNearZero) {
  const auto c = target_config();
  AnswerVocab v(m4c::testing::tiny_answer_words());
  const std::vector<std::string> ocr{"exit", "sign"};
  const auto a = *build_step_targets(std::vector<std::string>{"exit", "red"}, v, ocr, c);
  const auto b = *build_step_targets(std::vector<std::string>{"blue"}, v, ocr, c);
  const std::vector<const StepTargets*> ts{&a, &b};
  const std::size_t rows = 2 * c.max_decode_steps, width = a.width;
  auto zero = num::Tensor::zeros({rows, width});
  EXPECT_NEAR(sequence_loss(zero, ts).item(), std::log(2.0), 1e-12);

  std::vector<double> perfect(rows * width);
  for (std::size_t e = 0; e < 2; ++e)
    for (std::size_t i = 0; i < c.max_decode_steps * width; ++i)
      perfect[e * c.max_decode_steps * width + i] = ts[e]->targets[i] > 0 ? 40.0 : -40.0;
  auto logits = num::Tensor::from_data({rows, width}, perfect);
  EXPECT_LT(sequence_loss(logits, ts).item(), 1e-15);
}

TEST(Loss, PerExampleMeanThenBatchMean) {
  const auto c = target_config();
  AnswerVocab v(m4c::testing::tiny_answer_words());
  const auto a = *build_step_targets(std::vector<std::string>{"red", "blue"}, v, {}, c);
  const auto b = *build_step_targets(std::vector<std::string>{}, v, {}, c);
  const std::size_t rows = 2 * c.max_decode_steps, width = a.width;
  // Logit 1 everywhere: each masked cell costs log1p(e^-1) for a positive
  // target and 1 + log1p(e^-1) for a negative one.
  auto ones = num::Tensor::full({rows, width}, 1.0);
  auto per_example = [&](const StepTargets& st) {
    double total = 0, count = 0;
    for (std::size_t i = 0; i < st.mask.size(); ++i) {
      if (st.mask[i] == 0) continue;
      total += (st.targets[i] > 0 ? 0.0 : 1.0) + std::log1p(std::exp(-1.0));
      ++count;
    }
    return total / count;
  };
  const std::vector<const StepTargets*> ts{&a, &b};
  EXPECT_NEAR(sequence_loss(ones, ts).item(), 0.5 * (per_example(a) + per_example(b)), 1e-12);
}

TEST(Schedule, PublishedValues) {
  LrSchedule s;
  EXPECT_NO_THROW(s.validate());
  EXPECT_NEAR(lr_at_iter(0, s), 2e-5, 1e-18);
  EXPECT_NEAR(lr_at_iter(1000, s), 6e-5, 1e-18);
  EXPECT_NEAR(lr_at_iter(2000, s), 1e-4, 1e-18);
  EXPECT_NEAR(lr_at_iter(13999, s), 1e-4, 1e-18);
  EXPECT_NEAR(lr_at_iter(14000, s), 1e-5, 1e-18);
  EXPECT_NEAR(lr_at_iter(19000, s), 1e-6, 1e-18);
  EXPECT_NEAR(lr_at_iter(23999, s), 1e-6, 1e-18);
  EXPECT_THROW(lr_at_iter(24000, s), ValidationError);
}

TEST(Schedule, ScaledAndValidated) {
  const auto s = LrSchedule{}.scaled_to(2400);
  EXPECT_EQ(s.warmup_iters, 200u);
  EXPECT_EQ(s.decay_steps, (std::vector<std::size_t>{1400, 1900}));
  LrSchedule bad;
  bad.decay_steps = {19000, 14000};
  EXPECT_THROW(bad.validate(), ValidationError);
  bad.decay_steps = {24000};
  EXPECT_THROW(bad.validate(), ValidationError);
}

namespace {

struct CopyTask {
  model::M4CConfig config;
  model::AnswerVocab vocab{m4c::testing::tiny_answer_words()};
  std::vector<TrainingExample> train;
  std::vector<EvalExample> val;
};

// Answer = the first OCR token. Twenty examples, small model.
CopyTask copy_task(std::size_t n) {
  CopyTask task;
  auto& c = task.config;
  c = m4c::testing::tiny_config();
  c.hidden_dim = 16;
  c.ffn_dim = 32;
  c.max_decode_steps = 3;
  std::mt19937_64 rng(17);
  model::QuestionVocab qv(m4c::testing::tiny_question_words());
  std::vector<feat::ScenePack> scenes;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = m4c::testing::random_scene(rng, c, 3, 1, 2, "c" + std::to_string(i));
    s.answers = {s.ocr[0].text};
    scenes.push_back(s);
  }
  auto prep = prepare_training(scenes, c, qv, task.vocab);
  EXPECT_EQ(prep.unreachable, 0u);
  task.train = std::move(prep.examples);
  task.val = prepare_eval(scenes, c, qv);
  return task;
}

}  // namespace

TEST(Trainer, ZeroIterationsLeavesParametersUnchanged) {
  auto task = copy_task(4);
  const auto init = model::ModelParams::initialize(task.config, 3);
  LrSchedule s;
  s.max_iters = 0;
  s.decay_steps.clear();
  TrainOptions o;
  o.batch_size = 2;
  const auto r = train_loop(init.clone(), task.vocab, task.train, {}, s, o, nullptr);
  EXPECT_TRUE(r.losses.empty());
  const auto& before = init.tensors.entries();
  const auto& after = r.best.tensors.entries();
  ASSERT_EQ(before.size(), after.size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto a = before[i].second.data(), b = after[i].second.data();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << before[i].first;
  }
}

TEST(Trainer, DeterministicForFixedSeed) {
  auto task = copy_task(8);
  auto run = [&] {
    auto c = task.config;
    c.dropout = 0.1;
    const auto init = model::ModelParams::initialize(c, 3);
    LrSchedule s = LrSchedule{}.scaled_to(12);
    s.base_lr = 1e-3;
    TrainOptions o;
    o.batch_size = 3;
    o.eval_interval = 6;
    o.seed = 5;
    std::ostringstream log;
    auto r = train_loop(init, task.vocab, task.train, task.val, s, o, &log);
    return std::make_pair(r.losses, log.str());
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_EQ(a.first.size(), 12u);
  EXPECT_NE(a.second.find("iter 6 "), std::string::npos);
  EXPECT_NE(a.second.find("iter 12 "), std::string::npos);
}

TEST(Trainer, LossHalvesOnSmallCopyTask) {
  auto task = copy_task(20);
  const auto init = model::ModelParams::initialize(task.config, 1);
  LrSchedule s = LrSchedule{}.scaled_to(500);
  s.base_lr = 1e-3;
  TrainOptions o;
  o.batch_size = 10;
  o.eval_interval = 0;
  o.seed = 1;
  const auto r = train_loop(init, task.vocab, task.train, task.val, s, o, nullptr);
  ASSERT_EQ(r.losses.size(), 500u);
  const double first = r.losses.front();
  double last = 0;
  for (std::size_t i = 480; i < 500; ++i) last += r.losses[i] / 20;
  EXPECT_LT(last, 0.5 * first);
}

TEST(Trainer, LogRowFormat) {
  std::ostringstream a, b;
  write_log_row(a, {10, 1e-4, 0.5, std::nullopt});
  write_log_row(b, {20, 1e-4, 0.25, 0.75});
  EXPECT_EQ(a.str(), "iter 10 lr 0.0001 train_loss 0.5 val_metric none\n");
  EXPECT_EQ(b.str(), "iter 20 lr 0.0001 train_loss 0.25 val_metric 0.75\n");
}

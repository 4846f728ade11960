#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "m4c/decode/decoder.hpp"
#include "m4c/errors.hpp"
#include "property_suites.hpp"
#include "test_support.hpp"

using namespace m4c;
using namespace m4c::decode;
using model::StepInput;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TEST(Decode, ArgmaxTiesGoToLowestPosition) {
  const std::vector<double> s{0.0, 2.0, 3.0, 1.0, 3.0};
  EXPECT_EQ(select_argmax(s, 3), (Selection{Kind::kVocab, 2}));
  const std::vector<double> o{-kInf, 0.0, 1.0, 5.0, 5.0};
  EXPECT_EQ(select_argmax(o, 3), (Selection{Kind::kOcr, 0}));
  const std::vector<double> none{-kInf, -kInf};
  EXPECT_THROW(select_argmax(none, 2), InternalError);
}

TEST(Decode, MaskStepScores) {
  auto c = m4c::testing::tiny_config();  // V=6, N=4
  std::vector<double> raw(10, 1.0);
  auto m = mask_step_scores(raw, c, 2);
  EXPECT_EQ(m[0], -kInf);
  EXPECT_EQ(m[1], 1.0);
  EXPECT_EQ(m[7], 1.0);
  EXPECT_EQ(m[8], -kInf);
  EXPECT_EQ(m[9], -kInf);

  c.enable_fixed_vocab = false;
  m = mask_step_scores(raw, c, 4);
  EXPECT_EQ(m[1], 1.0);  // <end> stays reachable
  for (std::size_t i = 2; i < 6; ++i) EXPECT_EQ(m[i], -kInf);
  EXPECT_EQ(m[9], 1.0);

  c.enable_fixed_vocab = true;
  c.enable_ocr_copy = false;
  m = mask_step_scores(raw, c, 4);
  for (std::size_t i = 6; i < 10; ++i) EXPECT_EQ(m[i], -kInf);
}

TEST(Decode, NeverEmitsBeginAndRespectsHeads) {
  auto c = m4c::testing::suite_config();
  auto params = model::ModelParams::initialize(c, 11);
  // Make <begin> the best raw vocab score by a wide margin.
  params[model::kVocabBias].mutable_data()[0] = 1e6;
  model::QuestionVocab qv(m4c::testing::tiny_question_words());
  model::AnswerVocab av(m4c::testing::tiny_answer_words());
  std::mt19937_64 rng(3);
  std::vector<model::EncodedScene> scenes;
  for (int i = 0; i < 10; ++i)
    scenes.push_back(model::encode_scene(m4c::testing::random_scene(rng, c, 3, 1, 2), c, qv));
  for (const auto& r : decode_all(params, av, scenes)) {
    for (const auto& comp : r.components) {
      EXPECT_FALSE(comp.kind == Kind::kVocab && comp.index == 0);
      if (comp.kind == Kind::kOcr) {
        EXPECT_LT(comp.index, 3u);
      }
    }
    EXPECT_LE(r.steps_used, c.max_decode_steps);
  }
  auto copy_only = params.clone();
  copy_only.config.enable_fixed_vocab = false;
  for (const auto& r : decode_all(copy_only, av, scenes))
    for (const auto& comp : r.components) EXPECT_EQ(comp.kind, Kind::kOcr);
}

TEST(Decode, StopsAtEnd) {
  auto c = m4c::testing::suite_config();
  auto params = model::ModelParams::initialize(c, 12);
  params[model::kVocabBias].mutable_data()[model::AnswerVocab::kEnd] = 1e6;
  model::QuestionVocab qv(m4c::testing::tiny_question_words());
  model::AnswerVocab av(m4c::testing::tiny_answer_words());
  std::mt19937_64 rng(3);
  auto e = model::encode_scene(m4c::testing::random_scene(rng, c, 3, 1, 2), c, qv);
  const auto r = decode_answer(params, av, e);
  EXPECT_TRUE(r.components.empty());
  EXPECT_EQ(r.answer, "");
  EXPECT_EQ(r.steps_used, 1u);
}

TEST(Decode, CopiesOcrSurface) {
  auto c = m4c::testing::suite_config();
  c.max_decode_steps = 2;
  auto params = model::ModelParams::initialize(c, 13);
  // Push every vocab score far down so the pointer head must win.
  for (auto& b : params[model::kVocabBias].mutable_data()) b = -1e6;
  model::QuestionVocab qv(m4c::testing::tiny_question_words());
  model::AnswerVocab av(m4c::testing::tiny_answer_words());
  std::mt19937_64 rng(4);
  auto scene = m4c::testing::random_scene(rng, c, 3, 1, 2);
  scene.ocr[0].text = "  HeLLo ";
  auto e = model::encode_scene(scene, c, qv);
  const auto r = decode_answer(params, av, e);
  ASSERT_EQ(r.components.size(), 2u);
  for (const auto& comp : r.components) {
    EXPECT_EQ(comp.kind, Kind::kOcr);
    EXPECT_EQ(comp.surface, e.ocr_texts[comp.index]);
  }
  EXPECT_EQ(r.answer, r.components[0].surface + " " + r.components[1].surface);
}

TEST(Decode, BatchedEqualsSingle) {
  const auto c = m4c::testing::suite_config();
  const auto params = model::ModelParams::initialize(c, 14);
  model::QuestionVocab qv(m4c::testing::tiny_question_words());
  model::AnswerVocab av(m4c::testing::tiny_answer_words());
  std::mt19937_64 rng(5);
  std::vector<model::EncodedScene> scenes;
  for (int i = 0; i < 9; ++i)
    scenes.push_back(model::encode_scene(
        m4c::testing::random_scene(rng, c, 1 + i % 6, i % 4, 1 + i % 4, "x" + std::to_string(i)), c, qv));
  const auto batched = decode_all(params, av, scenes, 4);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto single = decode_answer(params, av, scenes[i]);
    EXPECT_EQ(single.answer, batched[i].answer);
    EXPECT_EQ(single.components, batched[i].components);
  }
}

TEST(Decode, IncrementalMatchesTeacherForced) {
  const auto r = m4c::testing::incremental_check(20, 21);
  EXPECT_GT(r.steps_compared, 20u);
  EXPECT_LE(r.max_diff, 1e-9);
  EXPECT_EQ(r.infinity_mismatches, 0u);
}

TEST(Decode, PredictionFileRoundTrip) {
  DecodeResult r;
  r.id = "q7";
  r.components = {{Kind::kVocab, 3, "red"}, {Kind::kOcr, 0, "exit"}};
  r.answer = "red exit";
  r.steps_used = 3;
  const auto dir = m4c::testing::temp_dir("pred");
  save_predictions(dir / "p.jsonl", std::vector<DecodeResult>{r});
  const auto back = load_predictions(dir / "p.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].id, "q7");
  EXPECT_EQ(back[0].answer, "red exit");
  EXPECT_EQ(back[0].trace, (std::vector<std::string>{"vocab:3:red", "ocr:0:exit"}));
  EXPECT_EQ(back[0].steps_used, 3u);
  std::filesystem::remove_all(dir);
}

#include <benchmark/benchmark.h>

#include <random>

#include "m4c/decode/decoder.hpp"
#include "m4c/featurize/phoc.hpp"
#include "m4c/model/m4c.hpp"
#include "m4c/num/ops.hpp"
#include "m4c/num/optim.hpp"
#include "m4c/synth/synthgen.hpp"
#include "m4c/train/trainer.hpp"

using namespace m4c;

namespace {

num::Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(r * c);
  for (auto& x : v) x = g(rng);
  return num::Tensor::from_data({r, c}, std::move(v));
}

// The synthetic-task model: d=128, L=2, heads=4, N=10, T=6, V=32.
struct SynthSetup {
  model::M4CConfig config;
  model::ModelParams params;
  model::AnswerVocab vocab;
  std::vector<train::TrainingExample> train;
  std::vector<model::EncodedScene> scenes;

  explicit SynthSetup(std::size_t n) {
    const auto spec = synth::default_spec(synth::Family::kMixed, 7);
    const auto man = synth::make_manifest(spec);
    auto& c = config;
    c.hidden_dim = 128;
    c.num_layers = 2;
    c.num_heads = 4;
    c.ffn_dim = 512;
    c.max_question_words = 8;
    c.max_objects = 4;
    c.max_ocr_tokens = 10;
    c.max_decode_steps = 6;
    c.vocab_size = spec.words.size() + 2;
    c.dropout = 0.0;
    c.question_vocab_size = man.question_vocab.size() + 1;
    c.object_feat_dim = man.object_feat_dim;
    c.ocr_frcn_dim = man.ocr_frcn_dim;
    c.ocr_ft_dim = man.ocr_ft_dim;
    params = model::ModelParams::initialize(c, 1);
    vocab = model::AnswerVocab(man.answer_vocab);
    model::QuestionVocab qv(man.question_vocab);
    std::vector<feat::ScenePack> packs;
    for (std::size_t i = 0; i < n; ++i) packs.push_back(synth::generate_example(spec, i));
    train = train::prepare_training(packs, c, qv, vocab).examples;
    for (const auto& e : train) scenes.push_back(e.scene);
  }
};

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  auto a = random_matrix(n, n, rng), b = random_matrix(n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(num::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_Attention(benchmark::State& state) {
  const std::size_t batch = 32, seq = 28, d = 128, heads = 4;
  std::mt19937_64 rng(2);
  auto q = random_matrix(batch * seq, d, rng), k = random_matrix(batch * seq, d, rng),
       v = random_matrix(batch * seq, d, rng);
  auto mask = std::make_shared<num::AttentionMask>();
  mask->batch = batch;
  mask->seq = seq;
  mask->additive.assign(batch * seq * seq, 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(num::multi_head_attention(q, k, v, mask, heads));
}
BENCHMARK(BM_Attention);

static void BM_Phoc(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(feat::phoc("mississippi"));
}
BENCHMARK(BM_Phoc);

static void BM_TrainStep(benchmark::State& state) {
  static SynthSetup setup(64);
  const auto B = static_cast<std::size_t>(state.range(0));
  auto params = setup.params.clone();
  auto tensors = params.tensors.tensors();
  for (auto& t : tensors) t.set_requires_grad(true);
  num::AdamState adam;
  std::vector<const model::EncodedScene*> scenes;
  std::vector<const train::StepTargets*> targets;
  std::vector<model::StepInput> steps;
  for (std::size_t i = 0; i < B; ++i) {
    const auto& e = setup.train[i % setup.train.size()];
    scenes.push_back(&e.scene);
    targets.push_back(&e.targets);
    steps.insert(steps.end(), e.targets.inputs.begin(), e.targets.inputs.end());
  }
  const std::vector<std::size_t> lengths(B, setup.config.max_decode_steps);
  const auto batch = model::make_batch(scenes, setup.config);
  for (auto _ : state) {
    params.tensors.zero_grad();
    auto f = model::forward(params, batch, steps, lengths, {});
    auto loss = train::sequence_loss(f.all_scores, targets);
    loss.backward();
    num::clip_global_grad_norm(tensors, 0.25);
    num::adam_step(tensors, adam, 1e-4);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(B));
}
BENCHMARK(BM_TrainStep)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_Decode(benchmark::State& state) {
  static SynthSetup setup(64);
  for (auto _ : state) benchmark::DoNotOptimize(decode::decode_all(setup.params, setup.vocab, setup.scenes));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(setup.scenes.size()));
}
BENCHMARK(BM_Decode)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();

#pragma once

// Finite-difference checks for every differentiable op and for the full
// model loss. Shared by the unit tests and the acceptance binary.

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "m4c/model/m4c.hpp"
#include "m4c/num/gradcheck.hpp"
#include "m4c/num/ops.hpp"
#include "m4c/train/targets.hpp"
#include "m4c/train/trainer.hpp"
#include "test_support.hpp"

namespace m4c::testing {

struct GradCase {
  std::string name;
  std::function<double(std::uint64_t seed)> max_rel_error;
};

inline std::shared_ptr<num::AttentionMask> random_mask(std::mt19937_64& rng, std::size_t batch,
                                                       std::size_t seq) {
  auto m = std::make_shared<num::AttentionMask>();
  m->batch = batch;
  m->seq = seq;
  m->additive.assign(batch * seq * seq, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < seq; ++i)
      for (std::size_t j = 0; j < seq; ++j)
        if (j != i && rng() % 3 == 0) m->additive[(b * seq + i) * seq + j] = -1e9;
  return m;
}

// Random weights make every output element matter, so a dropped gradient
// term cannot hide behind a plain sum.
inline num::Tensor weighted_sum(const num::Tensor& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xabcdef);
  auto w = random_tensor(x.shape(), rng);
  return num::sum(num::mul(x, w));
}

inline double check(std::vector<num::Tensor> inputs, std::function<num::Tensor()> f) {
  return num::check_gradients(f, inputs);
}

inline std::vector<GradCase> op_grad_cases() {
  using num::Tensor;
  std::vector<GradCase> cases;
  auto add_case = [&](std::string name, std::function<double(std::uint64_t)> fn) {
    cases.push_back({std::move(name), std::move(fn)});
  };

  add_case("matmul", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto a = random_tensor({3, 4}, r), b = random_tensor({4, 2}, r);
    return check({a, b}, [=] { return weighted_sum(num::matmul(a, b), s); });
  });
  add_case("matmul_nt", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto a = random_tensor({3, 4}, r), b = random_tensor({5, 4}, r);
    return check({a, b}, [=] { return weighted_sum(num::matmul_nt(a, b), s); });
  });
  add_case("transpose", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto a = random_tensor({3, 4}, r);
    return check({a}, [=] { return weighted_sum(num::transpose(a), s); });
  });
  add_case("add_sub_mul_scale", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto a = random_tensor({2, 3}, r), b = random_tensor({2, 3}, r);
    return check({a, b}, [=] {
      return weighted_sum(num::scale(num::mul(num::add(a, b), num::sub(a, b)), -1.7), s);
    });
  });
  add_case("add_bias", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto a = random_tensor({3, 4}, r), b = random_tensor({4}, r);
    return check({a, b}, [=] { return weighted_sum(num::add_bias(a, b), s); });
  });
  add_case("linear", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto x = random_tensor({3, 4}, r), w = random_tensor({5, 4}, r), b = random_tensor({5}, r);
    const double with_bias = check({x, w, b}, [=] { return weighted_sum(num::linear(x, w, b), s); });
    const double no_bias = check({x, w}, [=] { return weighted_sum(num::linear(x, w), s); });
    return std::max(with_bias, no_bias);
  });
  add_case("gelu", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto x = random_tensor({4, 5}, r, 2.0);
    return check({x}, [=] { return weighted_sum(num::gelu(x), s); });
  });
  add_case("softmax", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto x = random_tensor({3, 4}, r, 2.0);
    return std::max(check({x}, [=] { return weighted_sum(num::softmax(x, 1), s); }),
                    check({x}, [=] { return weighted_sum(num::softmax(x, 0), s); }));
  });
  add_case("layer_norm", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto x = random_tensor({3, 6}, r, 2.0), g = random_tensor({6}, r), b = random_tensor({6}, r);
    return check({x, g, b}, [=] { return weighted_sum(num::layer_norm(x, g, b, 1e-12), s); });
  });
  add_case("sigmoid_bce_with_logits", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto x = random_tensor({3, 4}, r, 3.0);
    std::vector<double> t(12), m(12);
    for (std::size_t i = 0; i < 12; ++i) {
      t[i] = static_cast<double>(r() % 2);
      m[i] = i == 0 ? 1.0 : static_cast<double>(r() % 4 != 0);
    }
    auto tt = Tensor::from_data({3, 4}, t), mm = Tensor::from_data({3, 4}, m);
    return check({x}, [=] { return num::sigmoid_bce_with_logits(x, tt, mm); });
  });
  add_case("sum_mean", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto x = random_tensor({2, 5}, r);
    return check({x}, [=] { return num::add(num::sum(num::mul(x, x)), num::mean(num::gelu(x))); });
  });
  add_case("gather_rows", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto x = random_tensor({4, 3}, r);
    const std::vector<std::size_t> idx = {2, 0, 2, 3, 2};
    return check({x}, [=] { return weighted_sum(num::gather_rows(x, idx), s); });
  });
  add_case("concat_rows_cols", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto a = random_tensor({2, 3}, r), b = random_tensor({1, 3}, r), c = random_tensor({2, 2}, r);
    return check({a, b, c}, [=] {
      auto rows = num::concat_rows(std::vector<Tensor>{a, b});
      auto cols = num::concat_cols(std::vector<Tensor>{a, c});
      return num::add(weighted_sum(rows, s), weighted_sum(cols, s + 1));
    });
  });
  add_case("slice_reshape", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto x = random_tensor({4, 3}, r);
    return check({x}, [=] {
      return weighted_sum(num::reshape(num::slice_rows(x, 1, 3), {3, 2}), s);
    });
  });
  add_case("scale_rows", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto x = random_tensor({3, 2}, r);
    const std::vector<double> f = {1.0, 0.0, -2.5};
    return check({x}, [=] { return weighted_sum(num::scale_rows(x, f), s); });
  });
  add_case("dropout", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto x = random_tensor({4, 5}, r);
    // Same mask on every evaluation: re-seed per call.
    return check({x}, [=] {
      std::mt19937_64 drop(s + 17);
      return weighted_sum(num::dropout(x, 0.3, drop), s);
    });
  });
  add_case("multi_head_attention", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    const std::size_t B = 2, S = 4, d = 6;
    auto q = random_tensor({B * S, d}, r), k = random_tensor({B * S, d}, r),
         v = random_tensor({B * S, d}, r);
    std::shared_ptr<const num::AttentionMask> mask = random_mask(r, B, S);
    return check({q, k, v}, [=] { return weighted_sum(num::multi_head_attention(q, k, v, mask, 2), s); });
  });
  add_case("batched_matmul_nt", [](std::uint64_t s) {
    std::mt19937_64 r(s);
    auto a = random_tensor({2 * 3, 4}, r), b = random_tensor({2 * 5, 4}, r);
    return check({a, b}, [=] { return weighted_sum(num::batched_matmul_nt(a, b, 2), s); });
  });
  return cases;
}

/// Loss of a d=8, L=1, heads=2 model on two random scenes, checked against
/// every parameter.
inline double model_loss_grad_error(std::uint64_t seed) {
  auto c = tiny_config();
  c.init_std = 0.5;  // keeps gradients well above the relative-error floor
  std::mt19937_64 rng(seed);
  const model::AnswerVocab vocab(tiny_answer_words());
  const model::QuestionVocab qv(tiny_question_words());
  auto params = model::ModelParams::initialize(c, seed);

  std::vector<model::EncodedScene> enc;
  std::vector<train::StepTargets> targets;
  for (std::size_t i = 0; i < 2; ++i) {
    auto s = random_scene(rng, c, 2 + i, 1 + i, 2 + i);
    auto e = model::encode_scene(s, c, qv);
    // One copied word and one vocabulary word.
    const std::vector<std::string> words = {e.ocr_texts[0], "blue"};
    targets.push_back(*train::build_step_targets(words, vocab, e.ocr_texts, c));
    enc.push_back(std::move(e));
  }
  std::vector<const model::EncodedScene*> ptrs = {&enc[0], &enc[1]};
  const auto batch = model::make_batch(ptrs, c);
  std::vector<model::StepInput> inputs;
  std::vector<std::size_t> lengths;
  for (const auto& t : targets) {
    inputs.insert(inputs.end(), t.inputs.begin(), t.inputs.end());
    lengths.push_back(t.supervised);
  }
  std::vector<const train::StepTargets*> tp = {&targets[0], &targets[1]};
  auto tensors = params.tensors.tensors();
  return num::check_gradients(
      [&] {
        auto fwd = model::forward(params, batch, inputs, lengths, {});
        return train::sequence_loss(fwd.all_scores, tp);
      },
      tensors);
}

}  // namespace m4c::testing

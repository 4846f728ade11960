#include <gtest/gtest.h>

#include "m4c/errors.hpp"
#include "m4c/num/ops.hpp"
#include "m4c/num/tensor.hpp"

using namespace m4c;
using num::Tensor;

TEST(Tensor, FactoriesAndShape) {
  auto z = Tensor::zeros({2, 3});
  EXPECT_EQ(z.numel(), 6u);
  EXPECT_EQ(z.rows(), 2u);
  EXPECT_EQ(z.cols(), 3u);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
  auto f = Tensor::full({4}, 2.5);
  EXPECT_EQ(f.rank(), 1u);
  EXPECT_EQ(f.data()[3], 2.5);
  EXPECT_EQ(Tensor::scalar(3.0).item(), 3.0);
  EXPECT_THROW(Tensor::from_data({2, 2}, {1, 2, 3}), DimensionError);
}

TEST(Tensor, HandlesShareStorageCloneDoesNot) {
  auto a = Tensor::full({2}, 1.0);
  auto b = a;
  b.mutable_data()[0] = 7.0;
  EXPECT_EQ(a.data()[0], 7.0);
  auto c = a.clone();
  c.mutable_data()[0] = 0.0;
  EXPECT_EQ(a.data()[0], 7.0);
}

TEST(Tensor, LeafGradsAccumulateAcrossBackwardCalls) {
  auto x = Tensor::from_data({3}, {1, 2, 3});
  x.set_requires_grad(true);
  num::sum(num::mul(x, x)).backward();
  num::sum(num::mul(x, x)).backward();
  const std::vector<double> want = {4, 8, 12};
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], want[i]);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, SharedSubexpressionGetsBothContributions) {
  auto x = Tensor::from_data({2}, {1.5, -2.0});
  x.set_requires_grad(true);
  auto y = num::scale(x, 3.0);
  num::sum(num::add(y, num::mul(y, y))).backward();
  // d/dx (3x + 9x^2) = 3 + 18x
  EXPECT_DOUBLE_EQ(x.grad()[0], 3 + 18 * 1.5);
  EXPECT_DOUBLE_EQ(x.grad()[1], 3 + 18 * -2.0);
}

TEST(Tensor, NoGradGuardStopsRecording) {
  auto x = Tensor::full({2}, 1.0);
  x.set_requires_grad(true);
  {
    num::NoGradGuard guard;
    auto y = num::scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(num::scale(x, 2.0).requires_grad());
}

TEST(Tensor, BackwardNeedsScalar) {
  auto x = Tensor::full({2}, 1.0);
  x.set_requires_grad(true);
  EXPECT_THROW(num::scale(x, 2.0).backward(), DimensionError);
}

TEST(Tensor, DetachCutsTape) {
  auto x = Tensor::full({2}, 1.0);
  x.set_requires_grad(true);
  auto d = num::scale(x, 2.0).detach();
  EXPECT_FALSE(d.requires_grad());
  EXPECT_EQ(d.data()[0], 2.0);
}

TEST(Ops, ShapeMismatchesThrow) {
  auto a = Tensor::zeros({2, 3}), b = Tensor::zeros({2, 3});
  EXPECT_THROW(num::matmul(a, b), DimensionError);
  EXPECT_THROW(num::add(a, Tensor::zeros({3, 2})), DimensionError);
  EXPECT_THROW(num::linear(a, Tensor::zeros({4, 2})), DimensionError);
  EXPECT_THROW(num::add_bias(a, Tensor::zeros({2})), DimensionError);
  EXPECT_THROW(num::concat_cols(std::vector<Tensor>{a, Tensor::zeros({3, 1})}), DimensionError);
}

TEST(Ops, ForwardValuesOnSmallCases) {
  auto a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
  auto c = num::matmul(a, b);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{19, 22, 43, 50}));
  auto s = num::softmax(Tensor::from_data({1, 2}, {0.0, std::log(3.0)}), 1);
  EXPECT_NEAR(s.data()[0], 0.25, 1e-15);
  EXPECT_NEAR(s.data()[1], 0.75, 1e-15);
  auto g = num::gelu(Tensor::from_data({3}, {0.0, 1.0, -1.0}));
  EXPECT_EQ(g.data()[0], 0.0);
  EXPECT_NEAR(g.data()[1], 0.8413447460685429, 1e-15);
  EXPECT_NEAR(g.data()[2], -0.15865525393145707, 1e-15);
  auto ln = num::layer_norm(Tensor::from_data({1, 2}, {1.0, 3.0}), Tensor::full({2}, 1.0),
                            Tensor::zeros({2}), 0.0);
  EXPECT_NEAR(ln.data()[0], -1.0, 1e-15);
  EXPECT_NEAR(ln.data()[1], 1.0, 1e-15);
}

TEST(Ops, BceMatchesClosedForm) {
  auto logits = Tensor::from_data({1, 3}, {0.0, 2.0, -1.0});
  auto targets = Tensor::from_data({1, 3}, {1.0, 0.0, 1.0});
  auto mask = Tensor::from_data({1, 3}, {1.0, 1.0, 0.0});
  const double want = (std::log(2.0) + (2.0 + std::log1p(std::exp(-2.0)))) / 2.0;
  EXPECT_NEAR(num::sigmoid_bce_with_logits(logits, targets, mask).item(), want, 1e-15);
  EXPECT_EQ(num::sigmoid_bce_with_logits(logits, targets, Tensor::zeros({1, 3})).item(), 0.0);
  EXPECT_THROW(num::sigmoid_bce_with_logits(logits, Tensor::full({1, 3}, 0.5), mask),
               ValidationError);
}

TEST(Ops, AttentionMaskedKeysGetZeroWeight) {
  // One example, seq 3; query 0 may only see key 0.
  auto mask = std::make_shared<num::AttentionMask>();
  mask->batch = 1;
  mask->seq = 3;
  mask->additive.assign(9, 0.0);
  mask->additive[1] = mask->additive[2] = -1e9;
  auto q = Tensor::from_data({3, 2}, {1, 0, 0, 1, 1, 1});
  auto k = Tensor::from_data({3, 2}, {2, 1, -1, 3, 0.5, 0.5});
  auto v = Tensor::from_data({3, 2}, {10, 20, 30, 40, 50, 60});
  auto out = num::multi_head_attention(q, k, v, mask, 1);
  EXPECT_EQ(out.at(0, 0), 10.0);
  EXPECT_EQ(out.at(0, 1), 20.0);
}

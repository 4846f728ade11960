#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "m4c/errors.hpp"
#include "m4c/num/ops.hpp"
#include "m4c/num/optim.hpp"
#include "m4c/num/params.hpp"
#include "test_support.hpp"

using namespace m4c;
using num::Tensor;

TEST(Adam, TwoStepsMatchHandComputation) {
  auto w = Tensor::from_data({2}, {1.0, -1.0});
  w.set_requires_grad(true);
  std::vector<Tensor> ps = {w};
  num::AdamState st;
  const std::vector<double> g1 = {0.5, -0.25}, g2 = {-0.1, 0.3};
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1.0, -1.0};
  const double lr = 0.01;
  for (int step = 1; step <= 2; ++step) {
    const auto& g = step == 1 ? g1 : g2;
    w.zero_grad();
    std::copy(g.begin(), g.end(), w.mutable_grad().begin());
    num::adam_step(ps, st, lr);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, step));
      const double vh = v[i] / (1 - std::pow(0.999, step));
      x[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  EXPECT_NEAR(w.data()[0], x[0], 1e-15);
  EXPECT_NEAR(w.data()[1], x[1], 1e-15);
  EXPECT_EQ(st.step, 2);
}

TEST(Adam, MissingGradCountsAsZero) {
  auto w = Tensor::from_data({1}, {2.0});
  w.set_requires_grad(true);
  std::vector<Tensor> ps = {w};
  num::AdamState st;
  num::adam_step(ps, st, 0.1);
  EXPECT_EQ(w.data()[0], 2.0);
}

TEST(Clip, ScalesToMaxNormAndReportsPreClipNorm) {
  auto a = Tensor::zeros({2}), b = Tensor::zeros({1});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  a.mutable_grad()[0] = 3.0;
  a.mutable_grad()[1] = 0.0;
  b.mutable_grad()[0] = 4.0;
  std::vector<Tensor> ps = {a, b};
  EXPECT_DOUBLE_EQ(num::clip_global_grad_norm(ps, 0.25), 5.0);
  EXPECT_NEAR(num::global_grad_norm(ps), 0.25, 1e-15);
  EXPECT_NEAR(a.grad()[0], 3.0 * 0.05, 1e-15);
  EXPECT_NEAR(b.grad()[0], 4.0 * 0.05, 1e-15);
  // Below the limit nothing changes.
  EXPECT_NEAR(num::clip_global_grad_norm(ps, 1.0), 0.25, 1e-15);
  EXPECT_NEAR(a.grad()[0], 0.15, 1e-15);
  EXPECT_THROW(num::clip_global_grad_norm(ps, 0.0), ValidationError);
}

TEST(Params, DuplicateNamesRejected) {
  num::ParameterSet p;
  p.add("w", Tensor::zeros({1}));
  EXPECT_THROW(p.add("w", Tensor::zeros({1})), ValidationError);
  EXPECT_THROW(p.get("missing"), ValidationError);
}

TEST(Params, CheckpointRoundTripIsBitExact) {
  std::mt19937_64 rng(5);
  num::ParameterSet p;
  p.add("encoder.w", m4c::testing::random_tensor({3, 4}, rng));
  p.add("b", m4c::testing::random_tensor({4}, rng));
  p.add("s", Tensor::scalar(-0.0));
  std::stringstream buf;
  num::write_checkpoint(p, buf);
  const auto bytes = buf.str();
  EXPECT_EQ(bytes.substr(0, 4), "M4C1");
  auto q = num::read_checkpoint(buf);
  ASSERT_EQ(q.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& [n1, t1] = p.entries()[i];
    const auto& [n2, t2] = q.entries()[i];
    EXPECT_EQ(n1, n2);
    EXPECT_EQ(t1.shape(), t2.shape());
    EXPECT_EQ(0, std::memcmp(t1.data().data(), t2.data().data(), t1.numel() * sizeof(double)));
  }
  std::stringstream again;
  num::write_checkpoint(q, again);
  EXPECT_EQ(again.str(), bytes);
}

TEST(Params, CorruptCheckpointsRejected) {
  std::stringstream bad_magic("XXXX");
  EXPECT_THROW(num::read_checkpoint(bad_magic), ParseError);
  num::ParameterSet p;
  p.add("w", Tensor::full({8}, 1.0));
  std::stringstream buf;
  num::write_checkpoint(p, buf);
  auto bytes = buf.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(num::read_checkpoint(truncated), ParseError);
}

TEST(Params, AssignValuesChecksNamesAndShapes) {
  num::ParameterSet a, b;
  a.add("w", Tensor::zeros({2}));
  b.add("w", Tensor::full({2}, 3.0));
  a.assign_values(b);
  EXPECT_EQ(a.get("w").data()[1], 3.0);
  num::ParameterSet c;
  c.add("w", Tensor::zeros({3}));
  EXPECT_THROW(a.assign_values(c), ValidationError);
}

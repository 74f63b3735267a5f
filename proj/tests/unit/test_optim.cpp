#include <gtest/gtest.h>

#include <cmath>

#include "finder/optim.hpp"

using namespace finder;

namespace {

// One scalar parameter minimising (x - 5)^2.
double quadratic_grad(Tensor<double>& x) {
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto d = x + (-5.0);
  auto loss = sum_squares(d);
  tape.backward(loss);
  return loss.item();
}

}  // namespace

TEST(Adam, ConvergesOnQuadratic) {
  std::vector<Tensor<double>> params{Tensor<double>::from_data({1}, {0.0}, true)};
  AdamState<double> state(params, {0.1, 1.0});
  for (int i = 0; i < 2000; ++i) {
    quadratic_grad(params[0]);
    adam_step(params, state);
    zero_grad(params);
  }
  EXPECT_NEAR(params[0].data()[0], 5.0, 1e-3);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // With bias correction the first update is lr * g / (|g| + eps).
  std::vector<Tensor<double>> params{Tensor<double>::from_data({2}, {0.0, 10.0}, true)};
  AdamState<double> state(params, {0.01, 1.0});
  quadratic_grad(params[0]);
  adam_step(params, state);
  EXPECT_NEAR(params[0].data()[0], 0.01, 1e-9);
  EXPECT_NEAR(params[0].data()[1], 10.0 - 0.01, 1e-9);
}

TEST(Adam, LearningRateDecaysPerIteration) {
  std::vector<Tensor<double>> params{Tensor<double>::from_data({1}, {0.0}, true)};
  AdamState<double> state(params);
  EXPECT_DOUBLE_EQ(state.current_lr(), 3e-4);
  for (int i = 0; i < 100; ++i) {
    quadratic_grad(params[0]);
    adam_step(params, state);
    zero_grad(params);
  }
  EXPECT_EQ(state.step(), 100u);
  // 3e-4 * 0.999^100
  EXPECT_NEAR(state.current_lr(), 2.714376e-4, 1e-9);
}

TEST(Adam, RejectsBadOptionsAndMissingGrads) {
  std::vector<Tensor<double>> params{Tensor<double>::from_data({1}, {0.0}, true)};
  EXPECT_THROW(AdamState<double>(params, {0.0, 0.999}), std::invalid_argument);
  EXPECT_THROW(AdamState<double>(params, {1e-3, 1.5}), std::invalid_argument);
  AdamState<double> state(params);
  EXPECT_THROW(adam_step(params, state), std::invalid_argument);
}

TEST(Clip, ScalesToThresholdOnlyWhenAbove) {
  std::vector<Tensor<double>> params{Tensor<double>::from_data({2}, {0.0, 0.0}, true),
                                     Tensor<double>::from_data({1}, {0.0}, true)};
  auto set_grads = [&](double a, double b, double c) {
    for (auto& p : params) p.zero_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto w0 = Tensor<double>::from_data({2}, {a, b});
    auto w1 = Tensor<double>::from_data({1}, {c});
    auto loss = sum_all(params[0] * w0) + sum_all(params[1] * w1);
    tape.backward(loss);
  };
  set_grads(3.0, 4.0, 12.0);  // norm 13
  EXPECT_DOUBLE_EQ(clip_gradients(params, 1.0), 13.0);
  EXPECT_NEAR(global_grad_norm(params), 1.0, 1e-12);
  EXPECT_NEAR(params[0].grad()[0], 3.0 / 13.0, 1e-12);
  EXPECT_NEAR(params[1].grad()[0], 12.0 / 13.0, 1e-12);

  set_grads(0.3, 0.4, 0.0);
  clip_gradients(params, 1.0);
  EXPECT_DOUBLE_EQ(params[0].grad()[0], 0.3);
  EXPECT_THROW(clip_gradients(params, 0.0), std::invalid_argument);
}

TEST(ZeroGrad, KeepsBuffersAllocated) {
  std::vector<Tensor<double>> params{Tensor<double>::from_data({3}, {1, 2, 3}, true)};
  quadratic_grad(params[0]);
  zero_grad(params);
  ASSERT_TRUE(params[0].has_grad());
  for (double g : params[0].grad()) EXPECT_EQ(g, 0.0);
}

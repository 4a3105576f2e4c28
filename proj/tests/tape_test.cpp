#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "grcn/error.hpp"
#include "grcn/ops.hpp"
#include "support/finite_diff.hpp"

namespace grcn {
namespace {

TEST(Tape, SumHasUnitGradient) {
  Tape tape;
  Var x = tape.variable(Tensor({2, 3, 2}, 0.7));
  auto g = tape.backward(sum(x));
  EXPECT_EQ(g[x], Tensor({2, 3, 2}, 1.0));
}

TEST(Tape, SigmoidDerivativeAtZero) {
  Tape tape;
  Var w = tape.variable(Tensor::vector({0.0}));
  Var x = tape.constant(Tensor::vector({1.0}));
  auto g = tape.backward(sum(sigmoid(hadamard(w, x))));
  EXPECT_DOUBLE_EQ(g[w][0], 0.25);
}

TEST(Tape, UnusedVariableGetsZeroGradient) {
  Tape tape;
  Var used = tape.variable(Tensor::vector({1, 2}));
  Var unused = tape.variable(Tensor({3, 3}, 5.0));
  auto g = tape.backward(sum(scale(used, 2.0)));
  EXPECT_EQ(g[used], Tensor::vector({2, 2}));
  EXPECT_EQ(g[unused], Tensor({3, 3}, 0.0));
}

TEST(Tape, GradientsAccumulateOverFanOut) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({3.0}));
  auto g = tape.backward(sum(hadamard(x, x)));
  EXPECT_EQ(g[x][0], 6.0);
}

TEST(Tape, NonScalarLossIsRejected) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(scale(x, 1.0)), DimensionError);
}

TEST(Tape, NonFiniteForwardNamesTheOp) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({1e300}));
  try {
    scale(x, 1e300);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos);
  }
}

TEST(Tape, NonFiniteBackwardNamesTheOp) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({1.0}));
  Var y = tape.record(
      "broken_op", {x}, [](std::span<const Tensor* const> in) { return *in[0]; },
      [](const BackwardArgs& a) { (*a.grad_inputs[0])[0] += std::nan(""); });
  try {
    tape.backward(sum(y));
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("broken_op"), std::string::npos);
  }
}

TEST(Tape, BackwardVisitsInExactReverseOrder) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({0.3, -0.2}));
  Var a = sigmoid(x);
  Var b = tanh(a);
  Var c = hadamard(a, b);
  Var loss = sum(c);
  tape.backward(loss);
  const std::vector<std::size_t> expected{loss.id(), c.id(), b.id(), a.id()};
  EXPECT_EQ(tape.backward_trace(), expected);
}

TEST(Tape, ReplayReproducesEveryOutputBitExactly) {
  Rng rng(3);
  Tape tape;
  Var x = tape.variable(testing::random_tensor({2, 5, 5}, rng));
  Var k = tape.variable(testing::random_tensor({3, 2, 3, 3}, rng));
  Var y = tanh(conv2d(x, k, std::nullopt, Conv2dOptions::same(3, 3)));
  Var p = softmax(global_avg_pool(pool2d(y, PoolMode::max, {})));
  sum(p);
  EXPECT_TRUE(tape.replay());
}

TEST(Tape, TwoForwardPassesAreBitIdentical) {
  Rng rng(4);
  const Tensor x0 = testing::random_tensor({2, 6, 6}, rng);
  const Tensor k0 = testing::random_tensor({4, 2, 3, 3}, rng);
  auto run = [&] {
    Tape tape;
    Var y = sigmoid(conv2d(tape.constant(x0), tape.constant(k0), std::nullopt, Conv2dOptions::same(3, 3)));
    return y.value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, InjectedFaultCorruptsGradient) {
  Tape tape;
  Var w = tape.variable(Tensor::vector({0.0}));
  tape.inject_gradient_fault("sigmoid", 2.0);
  auto g = tape.backward(sum(sigmoid(w)));
  EXPECT_DOUBLE_EQ(g[w][0], 0.5);
}

}  // namespace
}  // namespace grcn

#include <gtest/gtest.h>

#include "fusionflow/autodiff.hpp"
#include "fusionflow/ops.hpp"
#include "oracles.hpp"

using namespace fusionflow;

TEST(Tensor, ShapeAndFill) {
  Tensor<float> t(Shape{2, 3, 4, 5}, 1.5f);
  EXPECT_EQ(t.numel(), 120u);
  EXPECT_EQ(t.rank(), 4u);
  EXPECT_FLOAT_EQ(t.at(1, 2, 3, 4), 1.5f);
  EXPECT_EQ(t.offset(1, 0, 0, 0), 60u);
}

TEST(Tensor, ValueCountMismatchThrows) {
  EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), InvalidInput);
}

TEST(Tensor, ReshapeKeepsValues) {
  Tensor<double> t(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r[5], 6.0);
  EXPECT_THROW(t.reshaped({4}), InvalidInput);
}

TEST(Tensor, ItemRequiresSingleElement) {
  EXPECT_DOUBLE_EQ(Tensor<double>::scalar(3.0).item(), 3.0);
  EXPECT_THROW(Tensor<double>(Shape{2}).item(), InvalidInput);
}

TEST(Tape, LinearMapGradientIsInput) {
  Tape<double> tape;
  Parameter<double> w("w", Tensor<double>(Shape{3}, std::vector<double>{0.5, -1.0, 2.0}));
  Tensor<double> x(Shape{3}, std::vector<double>{1.0, 2.0, 3.0});
  auto loss = sum(mul(tape.param(w), tape.constant(x)));
  tape.backward(loss);
  EXPECT_EQ(w.grad, x);
}

TEST(Tape, SharedWeightAcrossThreeStepsSumsContributions) {
  // y3 = w*(w*(w*x0 + a1) + a2); hand-unrolled derivative.
  const double w0 = 0.7, x0 = 1.3, a1 = -0.4, a2 = 0.25;
  Tape<double> tape;
  Parameter<double> w("w", Tensor<double>::scalar(w0));
  auto h = tape.constant(Tensor<double>::scalar(x0));
  for (double a : {a1, a2}) h = add(mul(tape.param(w), h), tape.constant(Tensor<double>::scalar(a)));
  h = mul(tape.param(w), h);
  tape.backward(sum(h));
  const double h1 = w0 * x0 + a1, h2 = w0 * h1 + a2;
  const double expected = h2 + w0 * (h1 + w0 * x0);
  EXPECT_NEAR(w.grad.item(), expected, 1e-14);
}

TEST(Tape, DisconnectedParameterHasZeroGrad) {
  Tape<double> tape;
  Parameter<double> used("u", Tensor<double>::scalar(2.0)), unused("n", Tensor<double>(Shape{4}, 1.0));
  tape.param(unused);
  tape.backward(sum(scale(tape.param(used), 3.0)));
  EXPECT_DOUBLE_EQ(used.grad.item(), 3.0);
  for (double g : unused.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(Tape, BackwardOnNonScalarThrows) {
  Tape<double> tape;
  auto v = tape.variable(Tensor<double>(Shape{2}, 1.0));
  EXPECT_THROW(tape.backward(v), InvalidInput);
}

TEST(Tape, SecondBackwardWithoutResetThrows) {
  Tape<double> tape;
  auto v = tape.variable(Tensor<double>::scalar(1.0));
  auto l = sum(v);
  tape.backward(l);
  EXPECT_THROW(tape.backward(l), InvalidState);
  tape.reset();
  auto v2 = tape.variable(Tensor<double>::scalar(1.0));
  EXPECT_NO_THROW(tape.backward(sum(v2)));
}

TEST(Tape, ForeignVariableRejected) {
  Tape<double> a, b;
  auto va = a.variable(Tensor<double>::scalar(1.0));
  auto vb = b.variable(Tensor<double>::scalar(1.0));
  EXPECT_THROW(add(va, vb), InvalidInput);
}

TEST(Tape, IndependentBranchOrderDoesNotChangeGradients) {
  std::mt19937_64 rng(11);
  const auto x = oracle::random_tensor({1, 2, 6, 6}, rng);
  const auto w1 = oracle::random_tensor({3, 2, 3, 3}, rng), w2 = oracle::random_tensor({3, 2, 3, 3}, rng);
  auto run = [&](bool swap) {
    Tape<double> tape;
    Parameter<double> p1("a", w1), p2("b", w2);
    auto xv = tape.variable(x);
    Var<double> ya, yb;
    if (swap) {
      yb = conv2d(xv, tape.param(p2), Var<double>{}, 1, 1);
      ya = conv2d(xv, tape.param(p1), Var<double>{}, 1, 1);
    } else {
      ya = conv2d(xv, tape.param(p1), Var<double>{}, 1, 1);
      yb = conv2d(xv, tape.param(p2), Var<double>{}, 1, 1);
    }
    tape.backward(sum(add(charbonnier(ya, 1e-3, 0.45), leaky_relu(yb, 0.1))));
    return std::make_tuple(p1.grad, p2.grad, tape.grad(xv));
  };
  const auto [a1, b1, x1] = run(false);
  const auto [a2, b2, x2] = run(true);
  EXPECT_EQ(a1, a2);
  EXPECT_EQ(b1, b2);
  EXPECT_EQ(x1, x2);
}

TEST(Tape, DeterministicAcrossRuns) {
  std::mt19937_64 rng(5);
  const auto x = oracle::random_tensor({2, 3, 8, 8}, rng);
  const auto w = oracle::random_tensor({4, 3, 3, 3}, rng);
  auto run = [&] {
    Tape<float> tape;
    Parameter<float> p("w", w.cast<float>());
    auto y = conv2d(tape.constant(x.cast<float>()), tape.param(p), Var<float>{}, 2, 1);
    tape.backward(sum(leaky_relu(y, 0.1f)));
    return std::make_pair(y.value(), p.grad);
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, FirstNonFiniteLocatesNode) {
  Tape<double> tape;
  tape.constant(Tensor<double>::scalar(1.0));
  tape.constant(Tensor<double>::scalar(std::nan("")));
  EXPECT_EQ(tape.first_non_finite(), 1u);
}

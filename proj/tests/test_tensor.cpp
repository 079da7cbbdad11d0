// Copyright 2026 The dann-emotion Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dann/gradcheck.hpp"
#include "dann/random.hpp"
#include "dann/tensor.hpp"

namespace dann {
namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor(r, c, rng);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Tape tape;
  const Tensor x = random_matrix(2, 5, 3);
  const Var out = matmul(tape.constant(Tensor::identity(2)), tape.constant(x));
  EXPECT_EQ(out.value(), x);
}

TEST(Matmul, ScalarProduct) {
  Tape tape;
  const Var out = matmul(tape.constant(Tensor::scalar(2)), tape.constant(Tensor::scalar(3)));
  EXPECT_EQ(out.value().item(), 6.0);
}

TEST(Matmul, MatchesTripleLoop) {
  const Tensor a = random_matrix(3, 4, 11);
  const Tensor b = random_matrix(4, 2, 12);
  Tape tape;
  const Tensor got = matmul(tape.constant(a), tape.constant(b)).value();
  ASSERT_EQ(got.rows(), 3u);
  ASSERT_EQ(got.cols(), 2u);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
      EXPECT_NEAR(got(i, j), s, 1e-12);
    }
}

TEST(Matmul, MismatchNamesBothShapes) {
  Tape tape;
  try {
    matmul(tape.constant(Tensor(2, 3)), tape.constant(Tensor(4, 5)));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Softmax, KnownRows) {
  const Tensor p = softmax_rows(
      Tensor::from_rows({{0.0, 0.0}, {std::log(1.0), std::log(3.0)}, {1000.0, 1000.0}}));
  EXPECT_DOUBLE_EQ(p(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p(0, 1), 0.5);
  EXPECT_NEAR(p(1, 0), 0.25, 1e-15);
  EXPECT_NEAR(p(1, 1), 0.75, 1e-15);
  EXPECT_DOUBLE_EQ(p(2, 0), 0.5);
  EXPECT_DOUBLE_EQ(p(2, 1), 0.5);
  EXPECT_TRUE(p.all_finite());
}

TEST(Softmax, RowsAreStochastic) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor p = softmax_rows(random_tensor(4, 7, rng, 30.0));
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) {
        EXPECT_GE(p(i, j), 0.0);
        s += p(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, NanIsRejected) {
  EXPECT_THROW(softmax_rows(Tensor::from_rows({{0.0, std::nan("")}})), InvalidValueError);
}

TEST(Elementwise, KnownValues) {
  Tape tape;
  EXPECT_EQ(tanh(tape.constant(Tensor::scalar(0))).value().item(), 0.0);
  EXPECT_EQ(sigmoid(tape.constant(Tensor::scalar(0))).value().item(), 0.5);
  const Var a = tape.constant(Tensor::from_rows({{1, 2}}));
  const Var b = tape.constant(Tensor::from_rows({{3, 5}}));
  EXPECT_EQ(add(a, b).value(), Tensor::from_rows({{4, 7}}));
  EXPECT_EQ(mul(a, b).value(), Tensor::from_rows({{3, 10}}));
  EXPECT_EQ(scale(a, 2).value(), Tensor::from_rows({{2, 4}}));
  EXPECT_EQ(neg(a).value(), Tensor::from_rows({{-1, -2}}));
  EXPECT_THROW(add(a, tape.constant(Tensor(2, 1))), DimensionError);
  EXPECT_THROW(mul(a, tape.constant(Tensor(1, 3))), DimensionError);
}

TEST(Elementwise, SigmoidSaturatesWithoutOverflow) {
  Tape tape;
  const Tensor s = sigmoid(tape.constant(Tensor::from_rows({{-800.0, 800.0}}))).value();
  EXPECT_EQ(s(0, 0), 0.0);
  EXPECT_EQ(s(0, 1), 1.0);
}

TEST(Elementwise, TanhGradientMatchesCentralDifference) {
  Tape tape;
  const Var x = tape.variable(Tensor::scalar(0.5));
  tape.backward(tanh(x));
  const double h = 1e-6;
  const double numeric = (std::tanh(0.5 + h) - std::tanh(0.5 - h)) / (2 * h);
  EXPECT_NEAR(tape.grad(x).item(), numeric, 1e-8);
}

TEST(Concat, ColumnsOfTwoVectors) {
  Tape tape;
  const Var a = tape.constant(Tensor::column(std::vector<double>{1, 2, 3}));
  const Var b = tape.constant(Tensor::column(std::vector<double>{4, 5, 6}));
  const Tensor c = concat(a, b, Axis::cols).value();
  EXPECT_EQ(c, Tensor::from_rows({{1, 4}, {2, 5}, {3, 6}}));
}

TEST(Concat, EmptyOperandIsIdentity) {
  Tape tape;
  const Tensor x = random_matrix(2, 3, 1);
  EXPECT_EQ(concat(tape.constant(x), tape.constant(Tensor()), Axis::rows).value(), x);
  EXPECT_EQ(concat(tape.constant(Tensor()), tape.constant(x), Axis::cols).value(), x);
}

TEST(Concat, SplitRestoresOperands) {
  Tape tape;
  const Tensor a = random_matrix(3, 2, 7);
  const Tensor b = random_matrix(3, 4, 8);
  const Var c = concat(tape.constant(a), tape.constant(b), Axis::cols);
  EXPECT_EQ(slice_cols(c, 0, 2).value(), a);
  EXPECT_EQ(slice_cols(c, 2, 4).value(), b);
  const Var r = concat(tape.constant(a), tape.constant(random_matrix(1, 2, 9)), Axis::rows);
  EXPECT_EQ(slice_rows(r, 0, 3).value(), a);
}

TEST(Concat, IncompatibleShapes) {
  Tape tape;
  EXPECT_THROW(concat(tape.constant(Tensor(2, 2)), tape.constant(Tensor(3, 2)), Axis::cols),
               DimensionError);
}

TEST(Backward, SquareAtThree) {
  Tape tape;
  const Var x = tape.variable(Tensor::scalar(3));
  tape.backward(mul(x, x));
  EXPECT_EQ(tape.grad(x).item(), 6.0);
}

TEST(Backward, SumOfProductMatchesFiniteDifferences) {
  const GradCheckReport r = check_gradients(
      [](Tape&, std::span<const Var> v) { return sum(matmul(v[0], v[1])); },
      {random_matrix(3, 4, 21), random_matrix(4, 5, 22)});
  EXPECT_LE(r.max_relative_error, 1e-6);
  EXPECT_EQ(r.entries, 32u);
}

TEST(Backward, DisconnectedParameterGetsZero) {
  Tape tape;
  const Var x = tape.variable(Tensor::scalar(2));
  const Var unused = tape.variable(random_matrix(2, 2, 4));
  tape.backward(mul(x, x));
  EXPECT_EQ(tape.grad(unused), Tensor(2, 2));
}

TEST(Backward, ErrorsOnEmptyTapeNonScalarAndReuse) {
  {
    Tape empty;
    Tape other;
    const Var v = other.variable(Tensor::scalar(1));
    EXPECT_THROW(empty.backward(v), TapeError);
  }
  Tape tape;
  const Var x = tape.variable(Tensor(2, 1, 1.0));
  EXPECT_THROW(tape.backward(x), TapeError);
  const Var loss = sum(x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), TapeError);
}

TEST(Backward, DeterministicAcrossRuns) {
  auto run = [] {
    Tape tape;
    const Var a = tape.variable(random_matrix(4, 4, 31));
    const Var b = tape.variable(random_matrix(4, 3, 32));
    tape.backward(sum(tanh(matmul(a, b))));
    return std::pair{tape.grad(a), tape.grad(b)};
  };
  EXPECT_EQ(run(), run());
}

TEST(Grl, IdentityForwardAndReversedBackward) {
  const Tensor x = random_matrix(3, 2, 41);
  const Tensor w = random_matrix(3, 2, 42);
  for (double lambda : {0.0, 1.0, 0.37}) {
    Tape tape;
    const Var v = tape.variable(x);
    const Var y = grl(v, {lambda});
    EXPECT_EQ(y.value(), x);
    tape.backward(sum(mul(y, tape.constant(w))));
    const Tensor g = tape.grad(v);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (lambda == 0.0) {
        EXPECT_EQ(g[i], 0.0);
      } else {
        EXPECT_EQ(g[i], -lambda * w[i]);
      }
    }
  }
}

TEST(Grl, DoubleReversalRestoresGradient) {
  const Tensor x = random_matrix(2, 3, 43);
  Tape plain, twice;
  const Var a = plain.variable(x);
  plain.backward(sum(tanh(a)));
  const Var b = twice.variable(x);
  twice.backward(sum(tanh(grl(grl(b, {1.0}), {1.0}))));
  EXPECT_EQ(plain.grad(a), twice.grad(b));
}

TEST(Grl, NegativeLambdaRejected) {
  Tape tape;
  EXPECT_THROW(grl(tape.variable(Tensor::scalar(1)), {-1.0}), std::invalid_argument);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  for (double g : {3.0, -0.002, 1e5}) {
    Tensor p = Tensor::scalar(1.0);
    AdamState state(AdamConfig{0.01, 0.9, 0.999, 1e-8});
    Tensor* params[] = {&p};
    const Tensor grads[] = {Tensor::scalar(g)};
    adam_step(params, grads, state);
    // m_hat = g and sqrt(v_hat) = |g| after bias correction.
    EXPECT_NEAR(p.item(), 1.0 - 0.01 * g / (std::abs(g) + 1e-8), 1e-15);
    EXPECT_EQ(state.step, 1u);
  }
}

TEST(Adam, ZeroGradientLeavesEverythingAtRest) {
  Tensor p = random_matrix(2, 2, 5);
  const Tensor before = p;
  AdamState state;
  Tensor* params[] = {&p};
  const Tensor grads[] = {Tensor(2, 2)};
  adam_step(params, grads, state);
  EXPECT_EQ(p, before);
  EXPECT_EQ(state.first_moment[0], Tensor(2, 2));
  EXPECT_EQ(state.second_moment[0], Tensor(2, 2));
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, QuadraticDecreasesEveryStep) {
  Tensor x = Tensor::scalar(1.0);
  AdamState state(AdamConfig{0.1, 0.9, 0.999, 1e-8});
  double previous = x.item() * x.item();
  for (int i = 0; i < 10; ++i) {
    Tensor* params[] = {&x};
    const Tensor grads[] = {Tensor::scalar(2.0 * x.item())};
    adam_step(params, grads, state);
    const double f = x.item() * x.item();
    EXPECT_LT(f, previous) << "step " << i;
    previous = f;
  }
  EXPECT_EQ(state.step, 10u);
}

TEST(Adam, ShapeMismatchRejected) {
  Tensor p(2, 2);
  AdamState state;
  Tensor* params[] = {&p};
  const Tensor grads[] = {Tensor(2, 3)};
  EXPECT_THROW(adam_step(params, grads, state), DimensionError);
  const Tensor none[] = {Tensor(2, 2), Tensor(2, 2)};
  EXPECT_THROW(adam_step(params, none, state), DimensionError);
}

TEST(L2, ZeroWeightIsZero) {
  Tape tape;
  const Var w[] = {tape.variable(random_matrix(3, 3, 6))};
  EXPECT_EQ(l2_penalty(w, 0.0).value().item(), 0.0);
}

TEST(L2, SingleEntry) {
  Tape tape;
  const Var w[] = {tape.variable(Tensor::scalar(3))};
  const Var p = l2_penalty(w, 1.0);
  EXPECT_EQ(p.value().item(), 9.0);
  tape.backward(p);
  EXPECT_EQ(tape.grad(w[0]).item(), 6.0);
}

TEST(L2, MatchesFlattenedSum) {
  Tape tape;
  std::vector<Var> ws;
  std::vector<double> flat;
  for (std::uint64_t s = 0; s < 4; ++s) {
    const Tensor t = random_matrix(2 + s, 3, 50 + s);
    flat.insert(flat.end(), t.values().begin(), t.values().end());
    ws.push_back(tape.variable(t));
  }
  double oracle = 0.0;
  for (double v : flat) oracle += v * v;
  EXPECT_NEAR(l2_penalty(ws, 1e-5).value().item(), 1e-5 * oracle, 1e-12);
}

TEST(L2, NegativeWeightRejected) {
  Tape tape;
  const Var w[] = {tape.variable(Tensor::scalar(1))};
  EXPECT_THROW(l2_penalty(w, -1.0), std::invalid_argument);
}

TEST(CrossEntropy, MatchesNegativeLogProbability) {
  const Tensor z = random_matrix(3, 4, 60);
  const std::vector<int> labels{2, -1, 0};
  Tape tape;
  const double got = cross_entropy_sum(tape.constant(z), labels).value().item();
  const Tensor p = softmax_rows(z);
  EXPECT_NEAR(got, -std::log(p(0, 2)) - std::log(p(2, 0)), 1e-12);
}

}  // namespace
}  // namespace dann

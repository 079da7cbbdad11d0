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
#include "dann/layers.hpp"

namespace dann {
namespace {

// Plain-loop reference helpers, independent of the tape.
Tensor ref_matmul(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) out(i, j) += a(i, k) * b(k, j);
  return out;
}

double ref_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> ref_gru_step(const std::vector<double>& x, const std::vector<double>& h,
                                 const GruCellParams<Tensor>& p) {
  const std::size_t H = h.size();
  auto affine = [&](const Tensor& w, const Tensor& u, const Tensor& b, const std::vector<double>& hh,
                    std::size_t j) {
    double s = b(0, j);
    for (std::size_t k = 0; k < x.size(); ++k) s += x[k] * w(k, j);
    for (std::size_t k = 0; k < H; ++k) s += hh[k] * u(k, j);
    return s;
  };
  std::vector<double> z(H), r(H), rh(H), out(H);
  for (std::size_t j = 0; j < H; ++j) {
    z[j] = ref_sigmoid(affine(p.input_update, p.hidden_update, p.bias_update, h, j));
    r[j] = ref_sigmoid(affine(p.input_reset, p.hidden_reset, p.bias_reset, h, j));
  }
  for (std::size_t j = 0; j < H; ++j) rh[j] = r[j] * h[j];
  for (std::size_t j = 0; j < H; ++j) {
    const double cand = std::tanh(affine(p.input_candidate, p.hidden_candidate, p.bias_candidate, rh, j));
    out[j] = z[j] * h[j] + (1.0 - z[j]) * cand;
  }
  return out;
}

GruCellParams<Tensor> random_gru(std::size_t in, std::size_t hidden, Rng& rng) {
  GruCellParams<Tensor> g = gru_shape(in, hidden);
  g.each("", [&rng](const std::string&, Tensor& t, bool) { t = random_tensor(t.rows(), t.cols(), rng, 0.5); });
  return g;
}

TEST(Dense, ZeroWeightsGiveZeros) {
  Tape tape;
  const auto p = bind_constants(tape, dense_shape(3, 2));
  const Var y = dense_forward(tape.constant(Tensor::from_rows({{1, 2, 3}})), p, Activation::none);
  EXPECT_EQ(y.value(), Tensor(1, 2));
}

TEST(Dense, IdentityWeightPassesThrough) {
  Tape tape;
  const DenseParams<Tensor> p{Tensor::identity(3), Tensor(1, 3)};
  const Tensor x = Tensor::from_rows({{1.5, -2, 0.25}});
  EXPECT_EQ(dense_forward(tape.constant(x), bind_constants(tape, p), Activation::none).value(), x);
}

TEST(Dense, MatchesMatmulPlusBias) {
  Rng rng(1);
  const DenseParams<Tensor> p{random_tensor(4, 3, rng), random_tensor(1, 3, rng)};
  const Tensor x = random_tensor(5, 4, rng);
  Tape tape;
  const auto bound = bind_constants(tape, p);
  const Tensor none = dense_forward(tape.constant(x), bound, Activation::none).value();
  const Tensor th = dense_forward(tape.constant(x), bound, Activation::tanh).value();
  const Tensor sg = dense_forward(tape.constant(x), bound, Activation::sigmoid).value();
  const Tensor xw = ref_matmul(x, p.weight);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const double pre = xw(i, j) + p.bias(0, j);
      EXPECT_NEAR(none(i, j), pre, 1e-12);
      EXPECT_NEAR(th(i, j), std::tanh(pre), 1e-12);
      EXPECT_NEAR(sg(i, j), ref_sigmoid(pre), 1e-12);
    }
  EXPECT_THROW(dense_forward(tape.constant(Tensor(1, 3)), bound, Activation::none), DimensionError);
}

TEST(AtFusion, IdenticalProjectionsGiveThatVector) {
  Rng rng(2);
  AtFusionParams<Tensor> p = at_fusion_shape(3, 3, 4);
  initialize(p, "fusion", 9);
  p.lexical = p.acoustic;
  const Tensor a = random_tensor(1, 3, rng);
  Tape tape;
  const auto out = at_fusion_forward(tape.constant(a), tape.constant(a), bind_constants(tape, p));
  const Tensor projected = ref_matmul(a, p.acoustic.weight);
  EXPECT_LE(max_abs_diff(out.fused.value(), projected), 1e-12);
}

TEST(AtFusion, ZeroScoringGivesMidpoint) {
  Rng rng(3);
  for (int which = 0; which < 2; ++which) {
    AtFusionParams<Tensor> p = at_fusion_shape(3, 2, 4);
    initialize(p, "fusion", 10);
    if (which == 0) {
      p.fuse_matrix = Tensor(4, 4);
    } else {
      p.fuse_vector = Tensor(4, 1);
    }
    const Tensor a = random_tensor(3, 1, rng);  // column form is accepted
    const Tensor t = random_tensor(2, 1, rng);
    Tape tape;
    const auto out = at_fusion_forward(tape.constant(a), tape.constant(t), bind_constants(tape, p));
    EXPECT_EQ(out.weights.value(), Tensor::from_rows({{0.5, 0.5}}));
    const Tensor pa = ref_matmul(Tensor(1, 3, std::vector<double>(a.values())), p.acoustic.weight);
    const Tensor pt = ref_matmul(Tensor(1, 2, std::vector<double>(t.values())), p.lexical.weight);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.fused.value()(0, j), 0.5 * (pa(0, j) + pt(0, j)), 1e-12);
  }
}

TEST(AtFusion, MatchesExplicitConvexCombination) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    AtFusionParams<Tensor> p = at_fusion_shape(5, 3, 4);
    initialize(p, "fusion", rng.next_u64());
    p.acoustic.bias = random_tensor(1, 4, rng, 0.3);
    const Tensor a = random_tensor(1, 5, rng);
    const Tensor t = random_tensor(1, 3, rng);
    Tape tape;
    const auto out = at_fusion_forward(tape.constant(a), tape.constant(t), bind_constants(tape, p));
    // Column form of the fusion: u = [a', t'] is d x 2.
    Tensor pa = ref_matmul(a, p.acoustic.weight), pt = ref_matmul(t, p.lexical.weight);
    for (std::size_t j = 0; j < 4; ++j) {
      pa(0, j) += p.acoustic.bias(0, j);
      pt(0, j) += p.lexical.bias(0, j);
    }
    double score[2];
    for (int m = 0; m < 2; ++m) {
      const Tensor& col = m == 0 ? pa : pt;
      double s = 0.0;
      for (std::size_t r = 0; r < 4; ++r) {
        double inner = 0.0;
        for (std::size_t k = 0; k < 4; ++k) inner += p.fuse_matrix(r, k) * col(0, k);
        s += p.fuse_vector(r, 0) * std::tanh(inner);
      }
      score[m] = s;
    }
    const double e0 = std::exp(score[0]), e1 = std::exp(score[1]);
    const double alpha0 = e0 / (e0 + e1), alpha1 = e1 / (e0 + e1);
    EXPECT_NEAR(out.weights.value()(0, 0), alpha0, 1e-12);
    EXPECT_NEAR(out.weights.value()(0, 1), alpha1, 1e-12);
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(out.fused.value()(0, j), alpha0 * pa(0, j) + alpha1 * pt(0, j), 1e-12);
    }
  }
}

TEST(AtFusion, DimensionMismatch) {
  Tape tape;
  const auto p = bind_constants(tape, at_fusion_shape(3, 2, 4));
  EXPECT_THROW(at_fusion_forward(tape.constant(Tensor(1, 4)), tape.constant(Tensor(1, 2)), p),
               DimensionError);
}

TEST(GruCell, ZeroParametersAndZeroState) {
  Tape tape;
  const auto p = bind_constants(tape, gru_shape(3, 2));
  const Var h = gru_cell_step(tape.constant(Tensor::from_rows({{1, -2, 3}})), tape.constant(Tensor(1, 2)), p);
  EXPECT_EQ(h.value(), Tensor(1, 2));
}

TEST(GruCell, ZeroParametersHalveTheState) {
  Tape tape;
  const auto p = bind_constants(tape, gru_shape(3, 2));
  const Var h = gru_cell_step(tape.constant(Tensor::from_rows({{1, -2, 3}})),
                              tape.constant(Tensor::from_rows({{0.8, -0.4}})), p);
  EXPECT_EQ(h.value(), Tensor::from_rows({{0.4, -0.2}}));
}

TEST(GruCell, MatchesGateByGateOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const GruCellParams<Tensor> p = random_gru(4, 3, rng);
    const Tensor x = random_tensor(1, 4, rng);
    Tensor h(1, 3);
    for (double& v : h.data()) v = rng.uniform(-1, 1);
    Tape tape;
    const Tensor got = gru_cell_step(tape.constant(x), tape.constant(h), bind_constants(tape, p)).value();
    const auto want = ref_gru_step(x.values(), h.values(), p);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(got(0, j), want[j], 1e-12);
      EXPECT_GT(got(0, j), -1.0);
      EXPECT_LT(got(0, j), 1.0);
    }
  }
}

TEST(GruCell, ShapeMismatch) {
  Tape tape;
  const auto p = bind_constants(tape, gru_shape(3, 2));
  EXPECT_THROW(gru_cell_step(tape.constant(Tensor(1, 4)), tape.constant(Tensor(1, 2)), p), DimensionError);
  EXPECT_THROW(gru_cell_step(tape.constant(Tensor(1, 3)), tape.constant(Tensor(1, 3)), p), DimensionError);
}

TEST(BiGru, SingleStepHalvesAreCellSteps) {
  Rng rng(6);
  const auto f = random_gru(4, 2, rng), b = random_gru(4, 2, rng);
  const Tensor x = random_tensor(1, 4, rng);
  Tape tape;
  const Tensor H = bigru_forward(tape.constant(x), bind_constants(tape, f), bind_constants(tape, b)).value();
  ASSERT_EQ(H.rows(), 1u);
  ASSERT_EQ(H.cols(), 4u);
  const auto hf = ref_gru_step(x.values(), {0, 0}, f);
  const auto hb = ref_gru_step(x.values(), {0, 0}, b);
  EXPECT_NEAR(H(0, 0), hf[0], 1e-12);
  EXPECT_NEAR(H(0, 1), hf[1], 1e-12);
  EXPECT_NEAR(H(0, 2), hb[0], 1e-12);
  EXPECT_NEAR(H(0, 3), hb[1], 1e-12);
}

TEST(BiGru, ReversalSymmetry) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t L = 1 + rng.uniform_index(8);
    const auto f = random_gru(6, 3, rng), b = random_gru(6, 3, rng);
    const Tensor x = random_tensor(L, 6, rng);
    Tensor reversed(L, 6);
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t j = 0; j < 6; ++j) reversed(t, j) = x(L - 1 - t, j);
    Tape tape;
    const Tensor H = bigru_forward(tape.constant(x), bind_constants(tape, f), bind_constants(tape, b)).value();
    const Tensor Hr = bigru_forward(tape.constant(reversed), bind_constants(tape, b), bind_constants(tape, f)).value();
    for (std::size_t t = 0; t < L; ++t)
      for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_EQ(Hr(L - 1 - t, j), H(t, 3 + j));
        EXPECT_EQ(Hr(L - 1 - t, 3 + j), H(t, j));
      }
  }
}

TEST(BiGru, FullScaleSizes) {
  const auto f = [] { auto g = gru_shape(100, 50); initialize(g, "f", 1); return g; }();
  const auto b = [] { auto g = gru_shape(100, 50); initialize(g, "b", 1); return g; }();
  Rng rng(8);
  for (std::size_t L : {1u, 5u, 17u}) {
    Tape tape;
    const Tensor H = bigru_forward(tape.constant(random_tensor(L, 100, rng)), bind_constants(tape, f),
                                   bind_constants(tape, b)).value();
    EXPECT_EQ(H.rows(), L);
    EXPECT_EQ(H.cols(), 100u);
  }
}

TEST(BiGru, RejectsOddWidthAndEmptySequence) {
  Tape tape;
  const auto g = bind_constants(tape, gru_shape(5, 2));
  EXPECT_THROW(bigru_forward(tape.constant(Tensor(2, 5)), g, g), DimensionError);
  const auto g4 = bind_constants(tape, gru_shape(4, 2));
  EXPECT_THROW(bigru_forward(tape.constant(Tensor(0, 4)), g4, g4), DimensionError);
}

TEST(Attention, SingleRowIsValueProjection) {
  Rng rng(9);
  AttentionParams<Tensor> p = attention_shape(4, 2);
  initialize(p, "attention", 3);
  const Tensor H = random_tensor(1, 4, rng);
  Tape tape;
  const auto out = self_attention_forward(tape.constant(H), bind_constants(tape, p));
  for (const Var& w : out.weights) EXPECT_EQ(w.value(), Tensor::scalar(1.0));
  const Tensor v0 = ref_matmul(H, p.value[0]), v1 = ref_matmul(H, p.value[1]);
  EXPECT_NEAR(out.values.value()(0, 0), v0(0, 0), 1e-12);
  EXPECT_NEAR(out.values.value()(0, 1), v0(0, 1), 1e-12);
  EXPECT_NEAR(out.values.value()(0, 2), v1(0, 0), 1e-12);
  EXPECT_NEAR(out.values.value()(0, 3), v1(0, 1), 1e-12);
}

TEST(Attention, FullScaleSizesGiveQuarterWidthHeads) {
  AttentionParams<Tensor> p = attention_shape(100, 4);
  initialize(p, "attention", 3);
  Rng rng(10);
  Tape tape;
  const auto out = self_attention_forward(tape.constant(random_tensor(6, 100, rng, 0.3)), bind_constants(tape, p));
  ASSERT_EQ(out.weights.size(), 4u);
  EXPECT_EQ(p.value[0].cols(), 25u);
  EXPECT_EQ(out.values.value().rows(), 6u);
  EXPECT_EQ(out.values.value().cols(), 100u);
}

TEST(Attention, MatchesBruteForceLoop) {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    AttentionParams<Tensor> p = attention_shape(6, 3);
    p.each("", [&rng](const std::string&, Tensor& t, bool) { t = random_tensor(t.rows(), t.cols(), rng, 0.8); });
    const Tensor H = random_tensor(3, 6, rng);
    for (bool scaled : {false, true}) {
      Tape tape;
      const Tensor R = self_attention_forward(tape.constant(H), bind_constants(tape, p), {scaled}).values.value();
      for (std::size_t h = 0; h < 3; ++h) {
        const Tensor Q = ref_matmul(H, p.query[h]), K = ref_matmul(H, p.key[h]), V = ref_matmul(H, p.value[h]);
        for (std::size_t i = 0; i < 3; ++i) {
          double score[3], total = 0.0, mx = -1e300;
          for (std::size_t j = 0; j < 3; ++j) {
            score[j] = 0.0;
            for (std::size_t k = 0; k < 2; ++k) score[j] += Q(i, k) * K(j, k);
            if (scaled) score[j] /= std::sqrt(2.0);
            mx = std::max(mx, score[j]);
          }
          for (double& s : score) total += (s = std::exp(s - mx));
          for (std::size_t k = 0; k < 2; ++k) {
            double v = 0.0;
            for (std::size_t j = 0; j < 3; ++j) v += score[j] / total * V(j, k);
            EXPECT_NEAR(R(i, 2 * h + k), v, 1e-12);
          }
        }
      }
    }
  }
}

TEST(Attention, RowsAreStochasticAndDivisibilityChecked) {
  Rng rng(12);
  AttentionParams<Tensor> p = attention_shape(8, 4);
  initialize(p, "attention", 5);
  Tape tape;
  const auto out = self_attention_forward(tape.constant(random_tensor(7, 8, rng, 3.0)), bind_constants(tape, p));
  for (const Var& w : out.weights) {
    const Tensor& a = w.value();
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
  EXPECT_THROW(attention_shape(10, 4), DimensionError);
}

TEST(Initialization, GlorotBoundsZeroBiasesAndPerNameStreams) {
  DenseParams<Tensor> a = dense_shape(30, 20), b = dense_shape(30, 20);
  initialize(a, "x", 1);
  initialize(b, "x", 1);
  EXPECT_EQ(a.weight, b.weight);
  EXPECT_EQ(a.bias, Tensor(1, 20));
  const double limit = std::sqrt(6.0 / 50.0);
  for (double v : a.weight.data()) EXPECT_LE(std::abs(v), limit);
  DenseParams<Tensor> c = dense_shape(30, 20);
  initialize(c, "y", 1);
  EXPECT_NE(a.weight, c.weight);
}

TEST(LayerGradients, EveryLayerPassesFiniteDifferences) {
  for (const auto& check : gradient_suite(99, 5)) {
    EXPECT_LE(check.report.max_relative_error, 1e-5) << check.name;
    EXPECT_GT(check.report.entries, 0u) << check.name;
  }
}

}  // namespace
}  // namespace dann

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

#include "dann/gradcheck.hpp"

namespace dann {
namespace {

TEST(RelativeError, FloorAppliesNearZero) {
  EXPECT_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_NEAR(relative_error(2.0, 1.0), 0.5, 1e-15);
  EXPECT_NEAR(relative_error(1e-9, 0.0), 1e-6, 1e-18);
}

TEST(CheckGradients, CatchesAWrongBackwardRule) {
  // Forward x^3 with the backward rule of x^2: the check must notice.
  const ScalarGraph wrong = [](Tape& t, std::span<const Var> v) {
    const Var x = v[0];
    Tensor cube = x.value();
    for (double& c : cube.data()) c = c * c * c;
    const Var y = t.record(cube, {x}, [x](Tape& tape, const Tensor& g) {
      if (Tensor* gx = tape.grad_buffer(x))
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * 2.0 * tape.value(x)[i];
    });
    return sum(y);
  };
  EXPECT_GT(check_gradients(wrong, {Tensor::from_rows({{1.5, -2.0}})}).max_relative_error, 0.1);
}

TEST(GradientSuite, AllLayersWithinTolerance) {
  for (const auto& c : gradient_suite(7, 20)) {
    EXPECT_LE(c.report.max_relative_error, 1e-5) << c.name;
  }
}

TEST(GradientSuite, ModelCheckWithLabelledDataOnly) {
  Rng rng(3);
  ModelConfig mc;
  mc.acoustic_dim = 3;
  mc.lexical_dim = 2;
  mc.model_dim = 4;
  mc.heads = 2;
  mc.emotion_classes = 2;
  mc.domain_classes = 2;
  mc.lambda = 1.0;
  const DannModel model(mc, 5);
  const Conversation lab = random_conversation(3, 3, 2, 2, rng);
  const Conversation* l[] = {&lab};
  const SpeakerIndex speakers(std::set<std::string>{"a", "b"});
  EXPECT_LE(check_model_gradients(model, l, {}, speakers, 0.0).max_relative_error, 1e-5);
}

}  // namespace
}  // namespace dann

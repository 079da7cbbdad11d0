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

// Central finite-difference checks of the analytic gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dann/data.hpp"
#include "dann/layers.hpp"
#include "dann/model.hpp"
#include "dann/random.hpp"
#include "dann/tensor.hpp"

namespace dann {

// |analytic - numeric| relative to the larger magnitude, floored at 1e-3 so
// entries that are zero up to rounding are compared absolutely.
inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
  return std::abs(analytic - numeric) / scale;
}

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t entries = 0;

  void merge(const GradCheckReport& o) {
    max_relative_error = std::max(max_relative_error, o.max_relative_error);
    entries += o.entries;
  }
};

// Builds a scalar from the given inputs on a fresh tape.
using ScalarGraph = std::function<Var(Tape&, std::span<const Var>)>;

inline GradCheckReport check_gradients(const ScalarGraph& graph, std::vector<Tensor> inputs,
                                       double step = 1e-6) {
  auto evaluate = [&](const std::vector<Tensor>& values) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : values) vars.push_back(tape.constant(t));
    return graph(tape, vars).value().item();
  };

  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
  tape.backward(graph(tape, vars));

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = tape.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double original = inputs[k][i];
      inputs[k][i] = original + step;
      const double up = evaluate(inputs);
      inputs[k][i] = original - step;
      const double down = evaluate(inputs);
      inputs[k][i] = original;
      const double numeric = (up - down) / (2.0 * step);
      report.max_relative_error =
          std::max(report.max_relative_error, relative_error(analytic[i], numeric));
      report.entries += 1;
    }
  }
  return report;
}

// Checks the full model under gradient reversal. Encoder and emotion-head
// gradients must match d(L_y - lambda L_d + l2); domain-head gradients must
// match d(L_y + L_d + l2), since the head itself still minimises L_d.
inline GradCheckReport check_model_gradients(const DannModel& model,
                                             std::span<const Conversation* const> labeled,
                                             std::span<const Conversation* const> unlabeled,
                                             const SpeakerIndex& speakers, double l2_weight,
                                             double step = 1e-6) {
  std::vector<std::string> names = model.parameter_names();
  std::vector<Tensor> values;
  model.params().each("", [&values](const std::string&, const Tensor& t, bool) { values.push_back(t); });

  struct Scalars {
    double reported_total;
    double objective;
  };
  auto evaluate = [&](const std::vector<Tensor>& current) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : current) vars.push_back(tape.constant(t));
    const BoundModel bound = bind_vars(model, vars);
    const LossGraph loss = combined_loss(tape, bound, model, labeled, unlabeled, speakers, l2_weight);
    return Scalars{loss.breakdown.total, loss.objective.value().item()};
  };

  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : values) vars.push_back(tape.variable(t));
  const BoundModel bound = bind_vars(model, vars);
  const LossGraph loss = combined_loss(tape, bound, model, labeled, unlabeled, speakers, l2_weight);
  tape.backward(loss.objective);

  GradCheckReport report;
  for (std::size_t k = 0; k < values.size(); ++k) {
    const bool domain_head = names[k].rfind("domain_head", 0) == 0;
    const Tensor analytic = tape.grad(vars[k]);
    for (std::size_t i = 0; i < values[k].size(); ++i) {
      const double original = values[k][i];
      values[k][i] = original + step;
      const Scalars up = evaluate(values);
      values[k][i] = original - step;
      const Scalars down = evaluate(values);
      values[k][i] = original;
      const double numeric = domain_head ? (up.objective - down.objective) / (2.0 * step)
                                         : (up.reported_total - down.reported_total) / (2.0 * step);
      report.max_relative_error =
          std::max(report.max_relative_error, relative_error(analytic[i], numeric));
      report.entries += 1;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Randomised per-layer suite shared by the CLI and the tests.

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0) {
  Tensor t(rows, cols);
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

// Tiny random conversation: L utterances, two alternating speakers.
inline Conversation random_conversation(std::size_t length, std::size_t acoustic_dim,
                                        std::size_t lexical_dim, std::size_t emotion_classes,
                                        Rng& rng, const std::string& id = "c") {
  Conversation c;
  c.id = id;
  c.session = 1;
  c.speaker = "a";
  for (std::size_t i = 0; i < length; ++i) {
    Utterance u;
    for (std::size_t k = 0; k < acoustic_dim; ++k) u.acoustic.push_back(rng.normal());
    for (std::size_t k = 0; k < lexical_dim; ++k) u.lexical.push_back(rng.normal());
    u.emotion = static_cast<int>(rng.uniform_index(emotion_classes));
    u.speaker = i % 2 == 0 ? "a" : "b";
    c.utterances.push_back(std::move(u));
  }
  return c;
}

struct LayerCheck {
  std::string name;
  GradCheckReport report;
};

// Loss for each layer is the sum of its outputs. The model check uses
// d=4, h=2, L=3, two emotions and two speakers.
inline std::vector<LayerCheck> gradient_suite(std::uint64_t seed, int trials) {
  std::vector<LayerCheck> checks{{"matmul", {}},        {"tanh", {}},
                                 {"sigmoid", {}},       {"softmax_rows", {}},
                                 {"cross_entropy", {}}, {"dense", {}},
                                 {"at_fusion", {}},     {"gru_cell", {}},
                                 {"bigru", {}},         {"self_attention", {}},
                                 {"l2_penalty", {}},    {"dann_model", {}}};
  auto report = [&checks](const std::string& name) -> GradCheckReport& {
    for (auto& c : checks)
      if (c.name == name) return c.report;
    throw std::logic_error("unknown check " + name);
  };

  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(trial)));

    report("matmul").merge(check_gradients(
        [](Tape&, std::span<const Var> v) { return sum(matmul(v[0], v[1])); },
        {random_tensor(3, 4, rng), random_tensor(4, 2, rng)}));
    report("tanh").merge(check_gradients(
        [](Tape&, std::span<const Var> v) { return sum(tanh(v[0])); }, {random_tensor(3, 3, rng)}));
    report("sigmoid").merge(check_gradients(
        [](Tape&, std::span<const Var> v) { return sum(sigmoid(v[0])); },
        {random_tensor(3, 3, rng, 2.0)}));
    // Plain sums of softmax rows are constant, so weight the outputs.
    const Tensor weights = random_tensor(3, 4, rng);
    report("softmax_rows").merge(check_gradients(
        [&weights](Tape& t, std::span<const Var> v) {
          return sum(mul(softmax_rows(v[0]), t.constant(weights)));
        },
        {random_tensor(3, 4, rng, 2.0)}));
    std::vector<int> labels{static_cast<int>(rng.uniform_index(4)), -1,
                            static_cast<int>(rng.uniform_index(4))};
    report("cross_entropy").merge(check_gradients(
        [&labels](Tape&, std::span<const Var> v) { return cross_entropy_sum(v[0], labels); },
        {random_tensor(3, 4, rng, 2.0)}));

    const DenseParams<Tensor> dense{random_tensor(4, 3, rng), random_tensor(1, 3, rng)};
    report("dense").merge(check_gradients(
        [](Tape&, std::span<const Var> v) {
          return sum(dense_forward(v[0], DenseParams<Var>{v[1], v[2]}, Activation::tanh));
        },
        {random_tensor(2, 4, rng), dense.weight, dense.bias}));

    AtFusionParams<Tensor> fusion = at_fusion_shape(3, 2, 4);
    initialize(fusion, "fusion", rng.next_u64());
    fusion.acoustic.bias = random_tensor(1, 4, rng, 0.1);
    std::vector<Tensor> fusion_inputs{random_tensor(3, 3, rng), random_tensor(3, 2, rng)};
    fusion.each("", [&](const std::string&, const Tensor& t, bool) { fusion_inputs.push_back(t); });
    report("at_fusion").merge(check_gradients(
        [](Tape&, std::span<const Var> v) {
          const AtFusionParams<Var> p{{v[2], v[3]}, {v[4], v[5]}, v[6], v[7]};
          return sum(at_fusion_sequence(v[0], v[1], p).fused);
        },
        fusion_inputs));

    auto gru_from = [](std::span<const Var> v, std::size_t o) {
      return GruCellParams<Var>{v[o],     v[o + 1], v[o + 2], v[o + 3], v[o + 4],
                                v[o + 5], v[o + 6], v[o + 7], v[o + 8]};
    };
    auto random_gru = [&rng](std::size_t in, std::size_t hidden) {
      GruCellParams<Tensor> g = gru_shape(in, hidden);
      g.each("", [&rng](const std::string&, Tensor& t, bool) { t = random_tensor(t.rows(), t.cols(), rng, 0.5); });
      return g;
    };
    {
      const GruCellParams<Tensor> g = random_gru(3, 2);
      std::vector<Tensor> in{random_tensor(1, 3, rng), random_tensor(1, 2, rng, 0.5)};
      g.each("", [&in](const std::string&, const Tensor& t, bool) { in.push_back(t); });
      report("gru_cell").merge(check_gradients(
          [&gru_from](Tape&, std::span<const Var> v) {
            return sum(gru_cell_step(v[0], v[1], gru_from(v, 2)));
          },
          in));
    }
    {
      const GruCellParams<Tensor> f = random_gru(4, 2);
      const GruCellParams<Tensor> b = random_gru(4, 2);
      std::vector<Tensor> in{random_tensor(3, 4, rng)};
      f.each("", [&in](const std::string&, const Tensor& t, bool) { in.push_back(t); });
      b.each("", [&in](const std::string&, const Tensor& t, bool) { in.push_back(t); });
      report("bigru").merge(check_gradients(
          [&gru_from](Tape&, std::span<const Var> v) {
            return sum(bigru_forward(v[0], gru_from(v, 1), gru_from(v, 10)));
          },
          in));
    }
    {
      AttentionParams<Tensor> a = attention_shape(4, 2);
      a.each("", [&rng](const std::string&, Tensor& t, bool) { t = random_tensor(t.rows(), t.cols(), rng, 0.7); });
      std::vector<Tensor> in{random_tensor(3, 4, rng)};
      a.each("", [&in](const std::string&, const Tensor& t, bool) { in.push_back(t); });
      const bool scaled = trial % 2 == 1;
      report("self_attention").merge(check_gradients(
          [scaled](Tape&, std::span<const Var> v) {
            AttentionParams<Var> p;
            for (std::size_t h = 0; h < 2; ++h) {
              p.query.push_back(v[1 + 3 * h]);
              p.key.push_back(v[2 + 3 * h]);
              p.value.push_back(v[3 + 3 * h]);
            }
            return sum(self_attention_forward(v[0], p, {scaled}).values);
          },
          in));
    }
    report("l2_penalty").merge(check_gradients(
        [](Tape&, std::span<const Var> v) { return l2_penalty(v, 0.3); },
        {random_tensor(2, 3, rng), random_tensor(3, 1, rng)}));

    {
      ModelConfig mc;
      mc.acoustic_dim = 3;
      mc.lexical_dim = 2;
      mc.model_dim = 4;
      mc.heads = 2;
      mc.emotion_classes = 2;
      mc.domain_classes = 2;
      mc.lambda = 1.0;
      DannModel model(mc, rng.next_u64());
      // Non-zero biases so every parameter has a generic gradient.
      model.params().each("", [&rng](const std::string&, Tensor& t, bool is_weight) {
        if (!is_weight) t = random_tensor(t.rows(), t.cols(), rng, 0.1);
      });
      const Conversation labeled = random_conversation(3, 3, 2, 2, rng, "labeled");
      const Conversation unlabeled = random_conversation(3, 3, 2, 2, rng, "unlabeled");
      const Conversation* lab[] = {&labeled};
      const Conversation* unl[] = {&unlabeled};
      const SpeakerIndex speakers(std::set<std::string>{"a", "b"});
      report("dann_model").merge(check_model_gradients(model, lab, unl, speakers, 1e-3));
    }
  }
  return checks;
}

}  // namespace dann

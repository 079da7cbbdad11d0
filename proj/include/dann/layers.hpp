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

// Network blocks of the feature encoder and the classifier heads.
//
// Parameter bundles are templated on their storage: `Tensor` for the values
// a model owns, `Var` for the same values bound onto a Tape. `each` walks the
// fields in a fixed order, reporting a dotted name and whether the field is a
// weight matrix (L2-penalised) or a bias; `map` converts the storage type.
// Sequences are L x d, one position per row.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "dann/random.hpp"
#include "dann/tensor.hpp"

namespace dann {

namespace detail {

inline std::string join_name(std::string_view prefix, std::string_view field) {
  if (prefix.empty()) return std::string(field);
  std::string out(prefix);
  out += '.';
  out += field;
  return out;
}

}  // namespace detail

enum class Activation { none, tanh, sigmoid };

template <class T>
struct DenseParams {
  T weight;  // in x out
  T bias;    // 1 x out

  template <class F>
  void each(std::string_view prefix, F&& f) { apply(*this, prefix, f); }
  template <class F>
  void each(std::string_view prefix, F&& f) const { apply(*this, prefix, f); }

  template <class F>
  auto map(F&& f) const {
    using U = std::remove_cvref_t<std::invoke_result_t<F&, const T&>>;
    return DenseParams<U>{f(weight), f(bias)};
  }

 private:
  template <class Self, class F>
  static void apply(Self& self, std::string_view prefix, F& f) {
    f(detail::join_name(prefix, "weight"), self.weight, true);
    f(detail::join_name(prefix, "bias"), self.bias, false);
  }
};

template <class T>
struct AtFusionParams {
  DenseParams<T> acoustic;  // d_a -> d
  DenseParams<T> lexical;   // d_t -> d
  T fuse_matrix;            // W_F, d x d
  T fuse_vector;            // w_F, d x 1

  template <class F>
  void each(std::string_view prefix, F&& f) { apply(*this, prefix, f); }
  template <class F>
  void each(std::string_view prefix, F&& f) const { apply(*this, prefix, f); }

  template <class F>
  auto map(F&& f) const {
    using U = std::remove_cvref_t<std::invoke_result_t<F&, const T&>>;
    return AtFusionParams<U>{acoustic.map(f), lexical.map(f), f(fuse_matrix), f(fuse_vector)};
  }

 private:
  template <class Self, class F>
  static void apply(Self& self, std::string_view prefix, F& f) {
    self.acoustic.each(detail::join_name(prefix, "acoustic"), f);
    self.lexical.each(detail::join_name(prefix, "lexical"), f);
    f(detail::join_name(prefix, "fuse_matrix"), self.fuse_matrix, true);
    f(detail::join_name(prefix, "fuse_vector"), self.fuse_vector, true);
  }
};

// Standard GRU: update gate z, reset gate r, candidate with the reset applied
// on the hidden-to-candidate path.
template <class T>
struct GruCellParams {
  T input_update, input_reset, input_candidate;     // in x H
  T hidden_update, hidden_reset, hidden_candidate;  // H x H
  T bias_update, bias_reset, bias_candidate;        // 1 x H

  template <class F>
  void each(std::string_view prefix, F&& f) { apply(*this, prefix, f); }
  template <class F>
  void each(std::string_view prefix, F&& f) const { apply(*this, prefix, f); }

  template <class F>
  auto map(F&& f) const {
    using U = std::remove_cvref_t<std::invoke_result_t<F&, const T&>>;
    return GruCellParams<U>{f(input_update),  f(input_reset),  f(input_candidate),
                            f(hidden_update), f(hidden_reset), f(hidden_candidate),
                            f(bias_update),   f(bias_reset),   f(bias_candidate)};
  }

 private:
  template <class Self, class F>
  static void apply(Self& self, std::string_view prefix, F& f) {
    f(detail::join_name(prefix, "input_update"), self.input_update, true);
    f(detail::join_name(prefix, "input_reset"), self.input_reset, true);
    f(detail::join_name(prefix, "input_candidate"), self.input_candidate, true);
    f(detail::join_name(prefix, "hidden_update"), self.hidden_update, true);
    f(detail::join_name(prefix, "hidden_reset"), self.hidden_reset, true);
    f(detail::join_name(prefix, "hidden_candidate"), self.hidden_candidate, true);
    f(detail::join_name(prefix, "bias_update"), self.bias_update, false);
    f(detail::join_name(prefix, "bias_reset"), self.bias_reset, false);
    f(detail::join_name(prefix, "bias_candidate"), self.bias_candidate, false);
  }
};

// One query/key/value projection per head, each d x (d / heads).
template <class T>
struct AttentionParams {
  std::vector<T> query, key, value;

  std::size_t heads() const { return query.size(); }

  template <class F>
  void each(std::string_view prefix, F&& f) { apply(*this, prefix, f); }
  template <class F>
  void each(std::string_view prefix, F&& f) const { apply(*this, prefix, f); }

  template <class F>
  auto map(F&& f) const {
    using U = std::remove_cvref_t<std::invoke_result_t<F&, const T&>>;
    AttentionParams<U> out;
    for (const T& w : query) out.query.push_back(f(w));
    for (const T& w : key) out.key.push_back(f(w));
    for (const T& w : value) out.value.push_back(f(w));
    return out;
  }

 private:
  template <class Self, class F>
  static void apply(Self& self, std::string_view prefix, F& f) {
    for (std::size_t i = 0; i < self.query.size(); ++i) {
      const std::string head = detail::join_name(prefix, "head" + std::to_string(i));
      f(detail::join_name(head, "query"), self.query[i], true);
      f(detail::join_name(head, "key"), self.key[i], true);
      f(detail::join_name(head, "value"), self.value[i], true);
    }
  }
};

// ---------------------------------------------------------------------------
// Construction and initialisation

inline DenseParams<Tensor> dense_shape(std::size_t in, std::size_t out) {
  return {Tensor(in, out), Tensor(1, out)};
}

inline AtFusionParams<Tensor> at_fusion_shape(std::size_t acoustic_dim, std::size_t lexical_dim,
                                              std::size_t model_dim) {
  return {dense_shape(acoustic_dim, model_dim), dense_shape(lexical_dim, model_dim),
          Tensor(model_dim, model_dim), Tensor(model_dim, 1)};
}

inline GruCellParams<Tensor> gru_shape(std::size_t input, std::size_t hidden) {
  return {Tensor(input, hidden),  Tensor(input, hidden),  Tensor(input, hidden),
          Tensor(hidden, hidden), Tensor(hidden, hidden), Tensor(hidden, hidden),
          Tensor(1, hidden),      Tensor(1, hidden),      Tensor(1, hidden)};
}

inline AttentionParams<Tensor> attention_shape(std::size_t model_dim, std::size_t heads) {
  if (heads == 0 || model_dim % heads != 0) {
    throw DimensionError("attention: model dim " + std::to_string(model_dim) +
                         " is not divisible by " + std::to_string(heads) + " heads");
  }
  AttentionParams<Tensor> p;
  const std::size_t head_dim = model_dim / heads;
  for (std::size_t i = 0; i < heads; ++i) {
    p.query.emplace_back(model_dim, head_dim);
    p.key.emplace_back(model_dim, head_dim);
    p.value.emplace_back(model_dim, head_dim);
  }
  return p;
}

inline Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Tensor t(rows, cols);
  for (double& v : t.data()) v = rng.uniform(-limit, limit);
  return t;
}

// Glorot-uniform weights, zero biases. Each weight draws from its own stream
// keyed by (seed, name), so adding or removing a block never perturbs the
// initial values of the others.
template <class Params>
void initialize(Params& params, std::string_view prefix, std::uint64_t seed) {
  params.each(prefix, [seed](const std::string& name, Tensor& t, bool is_weight) {
    if (!is_weight) {
      t = Tensor(t.rows(), t.cols());
      return;
    }
    Rng rng(mix_seed(seed, hash_name(name)));
    t = glorot_uniform(t.rows(), t.cols(), rng);
  });
}

template <class Params>
auto bind_params(Tape& tape, const Params& params) {
  return params.map([&tape](const Tensor& t) { return tape.variable(t); });
}

template <class Params>
auto bind_constants(Tape& tape, const Params& params) {
  return params.map([&tape](const Tensor& t) { return tape.constant(t); });
}

template <class Params>
std::vector<Var> flatten_vars(const Params& params) {
  std::vector<Var> out;
  params.each("", [&out](const std::string&, const Var& v, bool) { out.push_back(v); });
  return out;
}

// ---------------------------------------------------------------------------
// Forward blocks

inline Var activate(Var x, Activation activation) {
  switch (activation) {
    case Activation::tanh:
      return tanh(x);
    case Activation::sigmoid:
      return sigmoid(x);
    case Activation::none:
      break;
  }
  return x;
}

// activation(x W + b) for rows of x.
inline Var dense_forward(Var x, const DenseParams<Var>& p, Activation activation) {
  if (x.cols() != p.weight.rows()) {
    throw DimensionError("dense: input " + x.value().shape_string() + " does not match weight " +
                         p.weight.value().shape_string());
  }
  return activate(add_bias(matmul(x, p.weight), p.bias), activation);
}

struct FusionOutput {
  Var fused;    // L x d
  Var weights;  // L x 2, (acoustic, lexical) per row
};

// Attention fusion over a whole conversation. Row i carries the acoustic and
// lexical vectors of utterance i; both are projected to d, scored by
// w_F^T tanh(W_F u), and mixed with the softmax of the two scores.
inline FusionOutput at_fusion_sequence(Var acoustic, Var lexical, const AtFusionParams<Var>& p,
                                       Activation projection = Activation::none) {
  if (acoustic.rows() != lexical.rows()) {
    throw DimensionError("at_fusion: " + std::to_string(acoustic.rows()) +
                         " acoustic rows vs " + std::to_string(lexical.rows()) + " lexical rows");
  }
  const Var a = dense_forward(acoustic, p.acoustic, projection);
  const Var t = dense_forward(lexical, p.lexical, projection);
  if (a.cols() != t.cols() || p.fuse_matrix.rows() != a.cols() ||
      p.fuse_vector.rows() != a.cols()) {
    throw DimensionError("at_fusion: projected dims " + std::to_string(a.cols()) + "/" +
                         std::to_string(t.cols()) + " do not match W_F " +
                         p.fuse_matrix.value().shape_string());
  }
  // (W_F a_i)^T == a_i^T W_F^T, so the row layout multiplies by W_F^T.
  const Var fuse_t = transpose(p.fuse_matrix);
  const Var score_a = matmul(tanh(matmul(a, fuse_t)), p.fuse_vector);
  const Var score_t = matmul(tanh(matmul(t, fuse_t)), p.fuse_vector);
  const Var alpha = softmax_rows(concat(score_a, score_t, Axis::cols));
  const Var fused = add(scale_rows(a, slice_cols(alpha, 0, 1)), scale_rows(t, slice_cols(alpha, 1, 1)));
  return {fused, alpha};
}

// Single-utterance form; a_i and t_i may be rows or columns. Returns f_i as
// a 1 x d row and alpha as 1 x 2.
inline FusionOutput at_fusion_forward(Var a_i, Var t_i, const AtFusionParams<Var>& p,
                                      Activation projection = Activation::none) {
  if (a_i.cols() == 1 && a_i.rows() != 1) a_i = transpose(a_i);
  if (t_i.cols() == 1 && t_i.rows() != 1) t_i = transpose(t_i);
  if (a_i.rows() != 1 || t_i.rows() != 1) {
    throw DimensionError("at_fusion_forward: expected vectors, got " +
                         a_i.value().shape_string() + " and " + t_i.value().shape_string());
  }
  return at_fusion_sequence(a_i, t_i, p, projection);
}

namespace detail {

inline Var gru_step_projected(Var input_update, Var input_reset, Var input_candidate, Var h_prev,
                              const GruCellParams<Var>& p) {
  const Var z = sigmoid(add(input_update, matmul(h_prev, p.hidden_update)));
  const Var r = sigmoid(add(input_reset, matmul(h_prev, p.hidden_reset)));
  const Var candidate = tanh(add(input_candidate, matmul(mul(r, h_prev), p.hidden_candidate)));
  return add(mul(z, h_prev), mul(one_minus(z), candidate));
}

inline void check_gru(const GruCellParams<Var>& p, std::size_t input_dim) {
  const std::size_t hidden = p.hidden_update.cols();
  if (p.input_update.rows() != input_dim || p.input_update.cols() != hidden ||
      p.hidden_update.rows() != hidden) {
    throw DimensionError("gru: input dim " + std::to_string(input_dim) +
                         " does not match parameters " + p.input_update.value().shape_string() +
                         " / " + p.hidden_update.value().shape_string());
  }
}

}  // namespace detail

// x_t: 1 x in, h_prev: 1 x H -> h_t: 1 x H.
inline Var gru_cell_step(Var x_t, Var h_prev, const GruCellParams<Var>& p) {
  detail::check_gru(p, x_t.cols());
  if (x_t.rows() != 1 || h_prev.rows() != 1 || h_prev.cols() != p.hidden_update.cols()) {
    throw DimensionError("gru_cell_step: x " + x_t.value().shape_string() + ", h " +
                         h_prev.value().shape_string());
  }
  return detail::gru_step_projected(add_bias(matmul(x_t, p.input_update), p.bias_update),
                                    add_bias(matmul(x_t, p.input_reset), p.bias_reset),
                                    add_bias(matmul(x_t, p.input_candidate), p.bias_candidate),
                                    h_prev, p);
}

// Runs one GRU over the rows of `inputs` from a zero state. With `reverse`
// the sequence is read last-to-first; row t of the result is always the
// state at position t.
inline Var gru_sequence(Var inputs, const GruCellParams<Var>& p, bool reverse) {
  const std::size_t length = inputs.rows();
  if (length == 0) throw DimensionError("gru_sequence: empty sequence");
  detail::check_gru(p, inputs.cols());
  const Var xu = add_bias(matmul(inputs, p.input_update), p.bias_update);
  const Var xr = add_bias(matmul(inputs, p.input_reset), p.bias_reset);
  const Var xc = add_bias(matmul(inputs, p.input_candidate), p.bias_candidate);
  Var h = inputs.tape().constant(Tensor(1, p.hidden_update.cols()));
  std::vector<Var> states(length);
  for (std::size_t k = 0; k < length; ++k) {
    const std::size_t t = reverse ? length - 1 - k : k;
    h = detail::gru_step_projected(slice_rows(xu, t, 1), slice_rows(xr, t, 1),
                                   slice_rows(xc, t, 1), h, p);
    states[t] = h;
  }
  return concat(std::span<const Var>(states), Axis::rows);
}

// Row t of the result is [forward state at t, backward state at t].
inline Var bigru_forward(Var sequence, const GruCellParams<Var>& forward,
                         const GruCellParams<Var>& backward) {
  if (sequence.rows() == 0) throw DimensionError("bigru: empty sequence");
  const std::size_t d = sequence.cols();
  if (d % 2 != 0) throw DimensionError("bigru: model dim " + std::to_string(d) + " is odd");
  if (forward.hidden_update.cols() != d / 2 || backward.hidden_update.cols() != d / 2) {
    throw DimensionError("bigru: hidden sizes " + std::to_string(forward.hidden_update.cols()) +
                         "/" + std::to_string(backward.hidden_update.cols()) +
                         " must both equal d/2 = " + std::to_string(d / 2));
  }
  return concat(gru_sequence(sequence, forward, false), gru_sequence(sequence, backward, true),
                Axis::cols);
}

struct AttentionOptions {
  // Divide scores by sqrt(d/h). Off by default: scores are raw inner products.
  bool scaled = false;
};

struct AttentionOutput {
  Var values;                // L x d, heads concatenated column-wise
  std::vector<Var> weights;  // one L x L row-stochastic matrix per head
};

// Multi-head self-attention: head_i = softmax((H Wq_i)(H Wk_i)^T) (H Wv_i),
// with no output projection after concatenation.
inline AttentionOutput self_attention_forward(Var states, const AttentionParams<Var>& p,
                                              AttentionOptions options = {}) {
  const std::size_t d = states.cols();
  const std::size_t heads = p.heads();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("self_attention: model dim " + std::to_string(d) +
                         " not divisible by " + std::to_string(heads) + " heads");
  }
  if (p.key.size() != heads || p.value.size() != heads) {
    throw DimensionError("self_attention: unequal query/key/value head counts");
  }
  const std::size_t head_dim = d / heads;
  AttentionOutput out;
  std::vector<Var> head_values;
  for (std::size_t i = 0; i < heads; ++i) {
    for (const Var* w : {&p.query[i], &p.key[i], &p.value[i]}) {
      if (w->rows() != d || w->cols() != head_dim) {
        throw DimensionError("self_attention: head projection " + w->value().shape_string() +
                             " expected [" + std::to_string(d) + "x" + std::to_string(head_dim) +
                             "]");
      }
    }
    const Var q = matmul(states, p.query[i]);
    const Var k = matmul(states, p.key[i]);
    const Var v = matmul(states, p.value[i]);
    Var scores = matmul(q, transpose(k));
    if (options.scaled) scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(head_dim)));
    const Var weights = softmax_rows(scores);
    out.weights.push_back(weights);
    head_values.push_back(matmul(weights, v));
  }
  out.values = concat(std::span<const Var>(head_values), Axis::cols);
  return out;
}

}  // namespace dann

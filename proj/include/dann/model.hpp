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

// The domain-adversarial emotion model: attention fusion and SA-GRU encoder,
// an emotion head, and a speaker (domain) head behind gradient reversal.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dann/data.hpp"
#include "dann/layers.hpp"
#include "dann/tensor.hpp"

namespace dann {

struct ModelConfig {
  std::size_t acoustic_dim = 6373;
  std::size_t lexical_dim = 1024;
  std::size_t model_dim = 100;
  std::size_t heads = 4;
  std::size_t emotion_classes = 4;
  std::size_t domain_classes = 10;
  double lambda = 1.0;
  bool domain_branch = true;
  bool scaled_attention = false;
  Activation projection = Activation::none;
  // Hidden widths of the classifier heads (tanh); empty = single dense layer.
  std::vector<std::size_t> head_hidden;

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("ModelConfig: " + what); };
    if (acoustic_dim == 0 || lexical_dim == 0) fail("feature dims must be positive");
    if (model_dim == 0 || model_dim % 2 != 0) fail("model_dim must be positive and even");
    if (heads == 0 || model_dim % heads != 0) fail("model_dim must be divisible by heads");
    if (emotion_classes < 1) fail("emotion_classes must be positive");
    if (domain_branch && domain_classes < 1) fail("domain_classes must be positive");
    if (!(lambda >= 0.0)) fail("lambda must be non-negative");
    for (std::size_t h : head_hidden) {
      if (h == 0) fail("head_hidden widths must be positive");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct DannParams {
  AtFusionParams<T> fusion;
  GruCellParams<T> gru_forward;
  GruCellParams<T> gru_backward;
  AttentionParams<T> attention;
  std::vector<DenseParams<T>> emotion_head;
  std::vector<DenseParams<T>> domain_head;  // empty without a domain branch

  template <class F>
  void each(std::string_view prefix, F&& f) { apply(*this, prefix, f); }
  template <class F>
  void each(std::string_view prefix, F&& f) const { apply(*this, prefix, f); }

  template <class F>
  auto map(F&& f) const {
    using U = std::remove_cvref_t<std::invoke_result_t<F&, const T&>>;
    DannParams<U> out{fusion.map(f), gru_forward.map(f), gru_backward.map(f), attention.map(f),
                      {}, {}};
    for (const auto& layer : emotion_head) out.emotion_head.push_back(layer.map(f));
    for (const auto& layer : domain_head) out.domain_head.push_back(layer.map(f));
    return out;
  }

 private:
  template <class Self, class F>
  static void apply(Self& self, std::string_view prefix, F& f) {
    self.fusion.each(detail::join_name(prefix, "fusion"), f);
    self.gru_forward.each(detail::join_name(prefix, "gru_forward"), f);
    self.gru_backward.each(detail::join_name(prefix, "gru_backward"), f);
    self.attention.each(detail::join_name(prefix, "attention"), f);
    for (std::size_t i = 0; i < self.emotion_head.size(); ++i) {
      self.emotion_head[i].each(detail::join_name(prefix, "emotion_head" + std::to_string(i)), f);
    }
    for (std::size_t i = 0; i < self.domain_head.size(); ++i) {
      self.domain_head[i].each(detail::join_name(prefix, "domain_head" + std::to_string(i)), f);
    }
  }
};

namespace detail {

inline std::vector<DenseParams<Tensor>> head_shape(std::size_t in,
                                                   const std::vector<std::size_t>& hidden,
                                                   std::size_t classes) {
  std::vector<DenseParams<Tensor>> layers;
  for (std::size_t width : hidden) {
    layers.push_back(dense_shape(in, width));
    in = width;
  }
  layers.push_back(dense_shape(in, classes));
  return layers;
}

}  // namespace detail

class DannModel {
 public:
  DannModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
    config_.validate();
    const std::size_t d = config_.model_dim;
    params_.fusion = at_fusion_shape(config_.acoustic_dim, config_.lexical_dim, d);
    params_.gru_forward = gru_shape(d, d / 2);
    params_.gru_backward = gru_shape(d, d / 2);
    params_.attention = attention_shape(d, config_.heads);
    params_.emotion_head = detail::head_shape(d, config_.head_hidden, config_.emotion_classes);
    if (config_.domain_branch) {
      params_.domain_head = detail::head_shape(d, config_.head_hidden, config_.domain_classes);
    }
    initialize(params_, "", seed_);
  }

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  double lambda() const { return config_.lambda; }
  bool has_domain_branch() const { return config_.domain_branch; }
  void set_lambda(double lambda) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be non-negative");
    config_.lambda = lambda;
  }

  DannParams<Tensor>& params() { return params_; }
  const DannParams<Tensor>& params() const { return params_; }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    params_.each("", [&out](const std::string&, Tensor& t, bool) { out.push_back(&t); });
    return out;
  }
  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out;
    params_.each("", [&out](const std::string& name, const Tensor&, bool) { out.push_back(name); });
    return out;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    params_.each("", [&n](const std::string&, const Tensor& t, bool) { n += t.size(); });
    return n;
  }

  // Same encoder and emotion head, no domain branch.
  DannModel without_domain_branch() const {
    DannModel out = *this;
    out.config_.domain_branch = false;
    out.config_.lambda = 0.0;
    out.params_.domain_head.clear();
    return out;
  }

  friend bool operator==(const DannModel& a, const DannModel& b) {
    if (!(a.config_ == b.config_) || a.seed_ != b.seed_) return false;
    std::vector<const Tensor*> pa, pb;
    a.params_.each("", [&pa](const std::string&, const Tensor& t, bool) { pa.push_back(&t); });
    b.params_.each("", [&pb](const std::string&, const Tensor& t, bool) { pb.push_back(&t); });
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (!(*pa[i] == *pb[i])) return false;
    }
    return true;
  }

 private:
  ModelConfig config_;
  std::uint64_t seed_;
  DannParams<Tensor> params_;
};

// Model parameters bound onto one tape.
struct BoundModel {
  DannParams<Var> vars;
  std::vector<Var> flat;     // order of DannModel::parameters()
  std::vector<Var> weights;  // L2-penalised subset
};

inline BoundModel bind(Tape& tape, const DannModel& model, bool trainable = true) {
  BoundModel b;
  b.vars = trainable ? bind_params(tape, model.params()) : bind_constants(tape, model.params());
  b.vars.each("", [&b](const std::string&, const Var& v, bool is_weight) {
    b.flat.push_back(v);
    if (is_weight) b.weights.push_back(v);
  });
  return b;
}

// Rebinds a model's structure onto caller-supplied Vars, one per parameter
// in DannModel::parameters() order.
inline BoundModel bind_vars(const DannModel& model, std::span<const Var> flat) {
  std::map<const Tensor*, std::size_t> slot;
  model.params().each("", [&slot](const std::string&, const Tensor& t, bool) {
    slot.emplace(&t, slot.size());
  });
  if (flat.size() != slot.size()) {
    throw DimensionError("bind_vars: " + std::to_string(flat.size()) + " vars for " +
                         std::to_string(slot.size()) + " parameters");
  }
  BoundModel b;
  b.vars = model.params().map([&](const Tensor& t) { return flat[slot.at(&t)]; });
  b.vars.each("", [&b](const std::string&, const Var& v, bool is_weight) {
    b.flat.push_back(v);
    if (is_weight) b.weights.push_back(v);
  });
  return b;
}

inline Tensor conversation_features(const Conversation& conv, bool acoustic) {
  const std::size_t dim =
      acoustic ? conv.utterances.front().acoustic.size() : conv.utterances.front().lexical.size();
  Tensor out(conv.utterances.size(), dim);
  for (std::size_t i = 0; i < conv.utterances.size(); ++i) {
    const auto& src = acoustic ? conv.utterances[i].acoustic : conv.utterances[i].lexical;
    if (src.size() != dim) {
      throw DimensionError("conversation " + conv.id + ": utterance " + std::to_string(i) +
                           " has " + std::to_string(src.size()) + " features, expected " +
                           std::to_string(dim));
    }
    std::copy(src.begin(), src.end(), &out(i, 0));
  }
  return out;
}

struct EncoderOutput {
  Var fused;         // F, L x d
  Var fusion_alpha;  // L x 2
  Var states;        // H, L x d
  Var context;       // R, L x d
};

inline EncoderOutput encode_conversation(Tape& tape, const BoundModel& bound,
                                         const ModelConfig& config, const Conversation& conv) {
  if (conv.utterances.empty()) {
    throw DimensionError("encode_conversation: conversation " + conv.id + " is empty");
  }
  const Tensor acoustic = conversation_features(conv, true);
  const Tensor lexical = conversation_features(conv, false);
  if (acoustic.cols() != config.acoustic_dim || lexical.cols() != config.lexical_dim) {
    throw DimensionError("encode_conversation: features " + std::to_string(acoustic.cols()) + "/" +
                         std::to_string(lexical.cols()) + " do not match model dims " +
                         std::to_string(config.acoustic_dim) + "/" +
                         std::to_string(config.lexical_dim));
  }
  const FusionOutput fusion = at_fusion_sequence(tape.constant(acoustic), tape.constant(lexical),
                                                 bound.vars.fusion, config.projection);
  const Var states = bigru_forward(fusion.fused, bound.vars.gru_forward, bound.vars.gru_backward);
  const AttentionOutput attention =
      self_attention_forward(states, bound.vars.attention, {config.scaled_attention});
  return {fusion.fused, fusion.weights, states, attention.values};
}

// Evaluates R without recording gradients.
inline Tensor encode_conversation(const DannModel& model, const Conversation& conv) {
  Tape tape;
  const BoundModel bound = bind(tape, model, false);
  return encode_conversation(tape, bound, model.config(), conv).context.value();
}

inline Var head_logits(Var x, const std::vector<DenseParams<Var>>& layers) {
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) x = dense_forward(x, layers[i], Activation::tanh);
  return dense_forward(x, layers.back(), Activation::none);
}

inline Var emotion_logits(Var context, const BoundModel& bound) {
  return head_logits(context, bound.vars.emotion_head);
}

inline Var emotion_probs(Var context, const BoundModel& bound) {
  return softmax_rows(emotion_logits(context, bound));
}

inline Var domain_logits(Var context, const BoundModel& bound, double lambda) {
  if (bound.vars.domain_head.empty()) throw std::logic_error("domain_logits: model has no domain branch");
  return head_logits(grl(context, GrlConfig{lambda}), bound.vars.domain_head);
}

inline Var domain_probs(Var context, const BoundModel& bound, double lambda) {
  return softmax_rows(domain_logits(context, bound, lambda));
}

struct LossBreakdown {
  double emotion_loss = 0.0;  // L_y, mean over the n labelled utterances
  double domain_loss = 0.0;   // L_d, mean over all n + m utterances
  double l2 = 0.0;
  double lambda = 0.0;
  double total = 0.0;  // L_y - lambda * L_d + l2
  std::size_t labeled = 0;    // n
  std::size_t unlabeled = 0;  // m

  double recomputed_total() const { return emotion_loss - lambda * domain_loss + l2; }
};

struct LossGraph {
  LossBreakdown breakdown;
  // L_y + L_d + l2 with L_d reached through gradient reversal: the domain head
  // descends on L_d while the encoder receives -lambda * dL_d/dR.
  Var objective;
};

inline LossGraph combined_loss(Tape& tape, const BoundModel& bound, const DannModel& model,
                               std::span<const Conversation* const> labeled,
                               std::span<const Conversation* const> unlabeled,
                               const SpeakerIndex& speakers, double l2_weight) {
  const ModelConfig& cfg = model.config();
  const bool adversarial = model.has_domain_branch();
  std::size_t n = 0;
  std::size_t m = 0;
  Var emotion_sum, domain_sum;
  auto accumulate = [](Var& total, Var term) { total = total.valid() ? add(total, term) : term; };
  auto domain_labels = [&speakers](const Conversation& conv) {
    std::vector<int> labels;
    for (const auto& u : conv.utterances) {
      auto id = speakers.find(u.speaker);
      if (!id) throw std::invalid_argument("combined_loss: no domain label for speaker \"" + u.speaker + "\"");
      labels.push_back(*id);
    }
    return labels;
  };

  for (const Conversation* conv : labeled) {
    std::vector<int> emotions;
    for (const auto& u : conv->utterances) {
      if (!u.emotion) {
        throw std::invalid_argument("combined_loss: labelled conversation " + conv->id +
                                    " has an unlabelled utterance");
      }
      emotions.push_back(*u.emotion);
    }
    const std::vector<int> domains = adversarial ? domain_labels(*conv) : std::vector<int>{};
    const Var context = encode_conversation(tape, bound, cfg, *conv).context;
    if (adversarial) {
      accumulate(domain_sum, cross_entropy_sum(domain_logits(context, bound, cfg.lambda), domains));
    }
    accumulate(emotion_sum, cross_entropy_sum(emotion_logits(context, bound), emotions));
    n += emotions.size();
  }
  if (n == 0) throw std::invalid_argument("combined_loss: no labelled utterances");

  if (adversarial) {
    for (const Conversation* conv : unlabeled) {
      const std::vector<int> domains = domain_labels(*conv);
      const Var context = encode_conversation(tape, bound, cfg, *conv).context;
      accumulate(domain_sum, cross_entropy_sum(domain_logits(context, bound, cfg.lambda), domains));
      m += domains.size();
    }
  } else {
    for (const Conversation* conv : unlabeled) m += conv->utterances.size();
  }

  LossGraph out;
  const Var emotion_loss = scale(emotion_sum, 1.0 / static_cast<double>(n));
  const Var penalty = l2_penalty(bound.weights, l2_weight);
  out.breakdown.emotion_loss = emotion_loss.value().item();
  out.breakdown.l2 = penalty.value().item();
  out.breakdown.lambda = cfg.lambda;
  out.breakdown.labeled = n;
  out.breakdown.unlabeled = m;
  if (adversarial) {
    const Var domain_loss = scale(domain_sum, 1.0 / static_cast<double>(n + m));
    out.breakdown.domain_loss = domain_loss.value().item();
    out.objective = add(add(emotion_loss, domain_loss), penalty);
  } else {
    out.objective = add(emotion_loss, penalty);
  }
  out.breakdown.total = out.breakdown.recomputed_total();
  return out;
}

// Argmax per row; ties go to the lowest index.
inline std::vector<int> argmax_rows(const Tensor& scores) {
  std::vector<int> out(scores.rows(), 0);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.cols(); ++j) {
      if (scores(i, j) > scores(i, best)) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

inline Tensor emotion_probabilities(const DannModel& model, const Conversation& conv) {
  Tape tape;
  const BoundModel bound = bind(tape, model, false);
  const Var context = encode_conversation(tape, bound, model.config(), conv).context;
  return emotion_probs(context, bound).value();
}

inline std::vector<int> predict(const DannModel& model, const Conversation& conv) {
  return argmax_rows(emotion_probabilities(model, conv));
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON with every parameter array, the config and the seed.
// Doubles are written in shortest round-trip form, so save/load is bit-exact.

inline constexpr int kCheckpointVersion = 1;

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::tanh:
      return "tanh";
    case Activation::sigmoid:
      return "sigmoid";
    case Activation::none:
      break;
  }
  return "none";
}

inline Activation parse_activation(const std::string& name) {
  if (name == "none") return Activation::none;
  if (name == "tanh") return Activation::tanh;
  if (name == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation \"" + name + "\"");
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"acoustic_dim", c.acoustic_dim},
          {"lexical_dim", c.lexical_dim},
          {"model_dim", c.model_dim},
          {"heads", c.heads},
          {"emotion_classes", c.emotion_classes},
          {"domain_classes", c.domain_classes},
          {"lambda", c.lambda},
          {"domain_branch", c.domain_branch},
          {"scaled_attention", c.scaled_attention},
          {"projection", activation_name(c.projection)},
          {"head_hidden", c.head_hidden}};
}

// Missing keys keep the values already in `base`.
inline ModelConfig config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  auto take = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  take("acoustic_dim", base.acoustic_dim);
  take("lexical_dim", base.lexical_dim);
  take("model_dim", base.model_dim);
  take("heads", base.heads);
  take("emotion_classes", base.emotion_classes);
  take("domain_classes", base.domain_classes);
  take("lambda", base.lambda);
  take("domain_branch", base.domain_branch);
  take("scaled_attention", base.scaled_attention);
  take("head_hidden", base.head_hidden);
  if (j.contains("projection")) base.projection = parse_activation(j.at("projection").get<std::string>());
  return base;
}

inline std::string checkpoint_string(const DannModel& model) {
  nlohmann::json params = nlohmann::json::array();
  model.params().each("", [&params](const std::string& name, const Tensor& t, bool) {
    params.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"data", t.values()}});
  });
  const nlohmann::json j{{"format", "dann-checkpoint"},
                         {"version", kCheckpointVersion},
                         {"seed", model.seed()},
                         {"config", config_to_json(model.config())},
                         {"parameters", params}};
  return j.dump() + "\n";
}

inline DannModel model_from_checkpoint_string(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  if (j.value("format", "") != "dann-checkpoint") throw std::invalid_argument("not a dann checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw std::invalid_argument("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  }
  DannModel model(config_from_json(j.at("config")), j.at("seed").get<std::uint64_t>());
  const auto& params = j.at("parameters");
  std::size_t index = 0;
  model.params().each("", [&](const std::string& name, Tensor& t, bool) {
    if (index >= params.size()) throw std::invalid_argument("checkpoint is missing " + name);
    const auto& p = params.at(index++);
    if (p.at("name").get<std::string>() != name) {
      throw std::invalid_argument("checkpoint parameter " + p.at("name").get<std::string>() +
                                  " where " + name + " was expected");
    }
    Tensor loaded(p.at("rows").get<std::size_t>(), p.at("cols").get<std::size_t>(),
                  p.at("data").get<std::vector<double>>());
    if (!loaded.same_shape(t)) {
      throw DimensionError("checkpoint " + name + " has shape " + loaded.shape_string() +
                           ", model expects " + t.shape_string());
    }
    t = std::move(loaded);
  });
  if (index != params.size()) throw std::invalid_argument("checkpoint has extra parameters");
  return model;
}

inline void save_checkpoint(const DannModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << checkpoint_string(model);
  if (!out) throw std::runtime_error("write failed for checkpoint " + path);
}

inline DannModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return model_from_checkpoint_string(buffer.str());
}

}  // namespace dann

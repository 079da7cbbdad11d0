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

// JSON configuration schemas for the command-line tool, and atomic file
// output. Unknown keys are rejected so a typo never silently falls back to a
// default.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include <unistd.h>

#include "json.hpp"

#include "dann/data.hpp"
#include "dann/model.hpp"
#include "dann/train.hpp"

namespace dann {

// Malformed or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void require_keys(const nlohmann::json& j, const std::string& where,
                         std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  const std::set<std::string> known(allowed.begin(), allowed.end());
  for (const auto& item : j.items()) {
    if (!known.contains(item.key())) throw ConfigError(where + ": unknown key \"" + item.key() + "\"");
  }
}

template <class T>
void read_key(const nlohmann::json& j, const std::string& where, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + ": key \"" + key + "\" has the wrong type");
  }
}

}  // namespace detail

inline SynthConfig synth_config_from_json(const nlohmann::json& j, std::uint64_t seed) {
  const std::string where = "synthetic config";
  detail::require_keys(j, where,
                       {"sessions", "speakers_per_session", "conversations_per_session",
                        "min_utterances", "max_utterances", "emotion_classes", "acoustic_dim",
                        "lexical_dim", "emotion_signal_strength", "speaker_shift_strength",
                        "noise_std", "stickiness", "speaker_subspace_dim"});
  SynthConfig c;
  detail::read_key(j, where, "sessions", c.sessions);
  detail::read_key(j, where, "speakers_per_session", c.speakers_per_session);
  detail::read_key(j, where, "conversations_per_session", c.conversations_per_session);
  detail::read_key(j, where, "min_utterances", c.min_utterances);
  detail::read_key(j, where, "max_utterances", c.max_utterances);
  detail::read_key(j, where, "emotion_classes", c.emotion_classes);
  detail::read_key(j, where, "acoustic_dim", c.acoustic_dim);
  detail::read_key(j, where, "lexical_dim", c.lexical_dim);
  detail::read_key(j, where, "emotion_signal_strength", c.emotion_signal_strength);
  detail::read_key(j, where, "speaker_shift_strength", c.speaker_shift_strength);
  detail::read_key(j, where, "noise_std", c.noise_std);
  detail::read_key(j, where, "stickiness", c.stickiness);
  detail::read_key(j, where, "speaker_subspace_dim", c.speaker_subspace_dim);
  c.seed = seed;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, std::uint64_t seed) {
  const std::string where = "train config";
  detail::require_keys(j, where,
                       {"epochs", "batch_size", "learning_rate", "l2_weight", "lambda", "log_interval"});
  TrainConfig c;
  detail::read_key(j, where, "epochs", c.epochs);
  detail::read_key(j, where, "batch_size", c.batch_size);
  detail::read_key(j, where, "learning_rate", c.learning_rate);
  detail::read_key(j, where, "l2_weight", c.l2_weight);
  detail::read_key(j, where, "lambda", c.lambda);
  detail::read_key(j, where, "log_interval", c.log_interval);
  c.seed = seed;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

// Architecture keys only; feature dims and speaker count come from the corpus.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  const std::string where = "model config";
  detail::require_keys(j, where, {"model_dim", "heads", "emotion_classes", "scaled_attention",
                                  "projection", "head_hidden"});
  try {
    return config_from_json(j);
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + ": a key has the wrong type");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

// Run seeds are base + 1 .. base + count.
inline std::vector<std::uint64_t> derive_seeds(std::uint64_t base, int count) {
  if (count < 1) throw ConfigError("seeds must be a positive count");
  std::vector<std::uint64_t> out;
  for (int i = 1; i <= count; ++i) out.push_back(base + static_cast<std::uint64_t>(i));
  return out;
}

// Shared by experiment and sweep configs.
inline ExperimentSpec experiment_spec_from_json(const nlohmann::json& j, std::uint64_t seed,
                                                const std::string& where) {
  ExperimentSpec spec;
  detail::read_key(j, where, "settings", spec.settings);
  detail::read_key(j, where, "lambdas", spec.lambdas);
  int seeds = 20;
  detail::read_key(j, where, "seeds", seeds);
  spec.seeds = derive_seeds(seed, seeds);
  if (j.contains("train")) spec.train = train_config_from_json(j.at("train"), seed);
  if (j.contains("model")) spec.model = model_config_from_json(j.at("model"));
  detail::read_key(j, where, "eval_session", spec.eval_session);
  detail::read_key(j, where, "threads", spec.threads);
  try {
    spec.validate();
    spec.model.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return spec;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// Writes via a sibling temporary file and a rename, so readers never see a
// partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  const std::filesystem::path tmp =
      path.string() + ".tmp." + std::to_string(static_cast<long>(::getpid()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw std::runtime_error("write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw std::runtime_error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

}  // namespace dann

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

// Conversations, JSONL corpora, session splits, accuracy, and the synthetic
// multi-speaker corpus generator.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dann/random.hpp"

namespace dann {

struct Utterance {
  std::vector<double> acoustic;
  std::vector<double> lexical;
  std::optional<int> emotion;
  std::string speaker;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Conversation {
  std::string id;
  int session = 1;
  std::string speaker;  // default for utterances without their own speaker
  std::vector<Utterance> utterances;

  std::size_t length() const { return utterances.size(); }
  friend bool operator==(const Conversation&, const Conversation&) = default;
};

struct Corpus {
  std::vector<Conversation> conversations;

  std::size_t size() const { return conversations.size(); }
  bool empty() const { return conversations.empty(); }

  std::size_t utterance_count() const {
    std::size_t n = 0;
    for (const auto& c : conversations) n += c.utterances.size();
    return n;
  }
  std::set<int> sessions() const {
    std::set<int> out;
    for (const auto& c : conversations) out.insert(c.session);
    return out;
  }
  std::set<std::string> speakers() const {
    std::set<std::string> out;
    for (const auto& c : conversations)
      for (const auto& u : c.utterances) out.insert(u.speaker);
    return out;
  }
  std::size_t acoustic_dim() const {
    return empty() ? 0 : conversations.front().utterances.front().acoustic.size();
  }
  std::size_t lexical_dim() const {
    return empty() ? 0 : conversations.front().utterances.front().lexical.size();
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// Malformed corpus input. `line` is 1-based, 0 when not tied to a line.
class CorpusError : public std::runtime_error {
 public:
  CorpusError(const std::string& message, std::size_t line, std::string field)
      : std::runtime_error(format(message, line, field)), line_(line), field_(std::move(field)) {}

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  static std::string format(const std::string& message, std::size_t line,
                            const std::string& field) {
    std::string out;
    if (line > 0) out += "line " + std::to_string(line) + ": ";
    if (!field.empty()) out += "field \"" + field + "\": ";
    return out + message;
  }

  std::size_t line_;
  std::string field_;
};

struct CorpusSchema {
  std::size_t emotion_classes = 4;
  // Required feature sizes; 0 means "whatever the first utterance has".
  std::size_t acoustic_dim = 0;
  std::size_t lexical_dim = 0;
};

// Throws CorpusError on the first violation. Dimensions not fixed by the
// schema are taken from the first utterance.
inline void validate_conversation(const Conversation& c, const CorpusSchema& schema,
                                  std::size_t& acoustic_dim, std::size_t& lexical_dim,
                                  std::size_t line = 0) {
  if (c.utterances.empty()) throw CorpusError("conversation has no utterances", line, "utterances");
  if (c.session < 1) throw CorpusError("session must be a positive integer", line, "session");
  for (const Utterance& u : c.utterances) {
    if (acoustic_dim == 0) acoustic_dim = u.acoustic.size();
    if (lexical_dim == 0) lexical_dim = u.lexical.size();
    if (u.acoustic.empty() || u.acoustic.size() != acoustic_dim) {
      throw CorpusError("expected " + std::to_string(acoustic_dim) + " values, got " +
                            std::to_string(u.acoustic.size()),
                        line, "acoustic");
    }
    if (u.lexical.empty() || u.lexical.size() != lexical_dim) {
      throw CorpusError("expected " + std::to_string(lexical_dim) + " values, got " +
                            std::to_string(u.lexical.size()),
                        line, "lexical");
    }
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(u.acoustic.begin(), u.acoustic.end(), finite)) {
      throw CorpusError("non-finite value", line, "acoustic");
    }
    if (!std::all_of(u.lexical.begin(), u.lexical.end(), finite)) {
      throw CorpusError("non-finite value", line, "lexical");
    }
    if (u.emotion && (*u.emotion < 0 || *u.emotion >= static_cast<int>(schema.emotion_classes))) {
      throw CorpusError("label " + std::to_string(*u.emotion) + " outside [0, " +
                            std::to_string(schema.emotion_classes) + ")",
                        line, "emotion");
    }
    if (u.speaker.empty()) throw CorpusError("missing speaker id", line, "speaker");
  }
}

namespace detail {

inline std::vector<double> read_features(const nlohmann::json& j, const char* field,
                                         std::size_t line) {
  if (!j.contains(field)) throw CorpusError("missing", line, field);
  const auto& arr = j.at(field);
  if (!arr.is_array()) throw CorpusError("expected an array of numbers", line, field);
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw CorpusError("expected an array of numbers", line, field);
    out.push_back(v.get<double>());
  }
  return out;
}

inline Conversation conversation_from_json(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object()) throw CorpusError("expected a JSON object", line, "");
  Conversation c;
  if (!j.contains("id") || !j.at("id").is_string()) throw CorpusError("expected a string", line, "id");
  c.id = j.at("id").get<std::string>();
  if (!j.contains("session") || !j.at("session").is_number_integer()) {
    throw CorpusError("expected an integer", line, "session");
  }
  c.session = j.at("session").get<int>();
  if (!j.contains("speaker") || !j.at("speaker").is_string()) {
    throw CorpusError("expected a string", line, "speaker");
  }
  c.speaker = j.at("speaker").get<std::string>();
  if (!j.contains("utterances") || !j.at("utterances").is_array()) {
    throw CorpusError("expected an array", line, "utterances");
  }
  for (const auto& uj : j.at("utterances")) {
    if (!uj.is_object()) throw CorpusError("expected an object", line, "utterances");
    Utterance u;
    u.acoustic = read_features(uj, "acoustic", line);
    u.lexical = read_features(uj, "lexical", line);
    if (uj.contains("emotion") && !uj.at("emotion").is_null()) {
      if (!uj.at("emotion").is_number_integer()) {
        throw CorpusError("expected an integer or null", line, "emotion");
      }
      u.emotion = uj.at("emotion").get<int>();
    }
    u.speaker = c.speaker;
    if (uj.contains("speaker")) {
      if (!uj.at("speaker").is_string()) throw CorpusError("expected a string", line, "speaker");
      u.speaker = uj.at("speaker").get<std::string>();
    }
    c.utterances.push_back(std::move(u));
  }
  return c;
}

inline nlohmann::json conversation_to_json(const Conversation& c) {
  nlohmann::json utterances = nlohmann::json::array();
  for (const Utterance& u : c.utterances) {
    nlohmann::json uj;
    uj["acoustic"] = u.acoustic;
    uj["lexical"] = u.lexical;
    uj["emotion"] = u.emotion ? nlohmann::json(*u.emotion) : nlohmann::json(nullptr);
    if (u.speaker != c.speaker) uj["speaker"] = u.speaker;
    utterances.push_back(std::move(uj));
  }
  return nlohmann::json{
      {"id", c.id}, {"session", c.session}, {"speaker", c.speaker}, {"utterances", utterances}};
}

}  // namespace detail

// One conversation object per line; blank lines are skipped.
inline Corpus read_corpus(std::istream& in, const CorpusSchema& schema = {}) {
  Corpus corpus;
  std::size_t acoustic_dim = schema.acoustic_dim;
  std::size_t lexical_dim = schema.lexical_dim;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      // Includes numbers outside double range, which fail during parsing.
      throw CorpusError(std::string("JSON parse error: ") + e.what(), line, "");
    }
    Conversation c = detail::conversation_from_json(j, line);
    validate_conversation(c, schema, acoustic_dim, lexical_dim, line);
    corpus.conversations.push_back(std::move(c));
  }
  return corpus;
}

inline Corpus load_corpus(const std::string& path, const CorpusSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open " + path, 0, "");
  return read_corpus(in, schema);
}

inline void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const Conversation& c : corpus.conversations) {
    out << detail::conversation_to_json(c).dump() << '\n';
  }
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot write " + path, 0, "");
  write_corpus(out, corpus);
  if (!out) throw CorpusError("write failed for " + path, 0, "");
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  std::string name;
  std::set<int> train_sessions;
  std::set<int> test_sessions;
};

// "TS_123" -> train {1,2,3}, test = every other session in `all_sessions`.
inline SplitSpec parse_setting(std::string_view name, const std::set<int>& all_sessions) {
  if (name.substr(0, 3) != "TS_" || name.size() == 3) {
    throw std::invalid_argument("setting \"" + std::string(name) + "\" is not of the form TS_<digits>");
  }
  SplitSpec spec{std::string(name), {}, {}};
  for (char ch : name.substr(3)) {
    if (ch < '1' || ch > '9') {
      throw std::invalid_argument("setting \"" + std::string(name) + "\" has a non-digit session");
    }
    const int session = ch - '0';
    if (!all_sessions.contains(session)) {
      throw std::invalid_argument("setting \"" + std::string(name) + "\" names session " +
                                  std::to_string(session) + " absent from the corpus");
    }
    spec.train_sessions.insert(session);
  }
  for (int s : all_sessions) {
    if (!spec.train_sessions.contains(s)) spec.test_sessions.insert(s);
  }
  if (spec.test_sessions.empty()) {
    throw std::invalid_argument("setting \"" + std::string(name) + "\" leaves no session outside training");
  }
  return spec;
}

struct CorpusSplit {
  Corpus train;
  Corpus test;
};

inline Corpus select_sessions(const Corpus& corpus, const std::set<int>& sessions) {
  Corpus out;
  for (const auto& c : corpus.conversations) {
    if (sessions.contains(c.session)) out.conversations.push_back(c);
  }
  return out;
}

// Conversations in neither session set are dropped.
inline CorpusSplit split_by_sessions(const Corpus& corpus, const SplitSpec& spec) {
  if (spec.train_sessions.empty()) throw std::invalid_argument(spec.name + ": no training sessions");
  if (spec.test_sessions.empty()) throw std::invalid_argument(spec.name + ": no test sessions");
  for (int s : spec.train_sessions) {
    if (spec.test_sessions.contains(s)) {
      throw std::invalid_argument(spec.name + ": session " + std::to_string(s) +
                                  " is in both train and test");
    }
  }
  CorpusSplit split{select_sessions(corpus, spec.train_sessions),
                    select_sessions(corpus, spec.test_sessions)};
  const auto train_speakers = split.train.speakers();
  for (const auto& speaker : split.test.speakers()) {
    if (train_speakers.contains(speaker)) {
      throw std::invalid_argument(spec.name + ": speaker " + speaker +
                                  " appears in both train and test sessions");
    }
  }
  return split;
}

// Emotion labels removed; what the domain branch is allowed to see.
inline Corpus strip_emotions(Corpus corpus) {
  for (auto& c : corpus.conversations)
    for (auto& u : c.utterances) u.emotion.reset();
  return corpus;
}

// Dense ids for speaker strings, in sorted order.
class SpeakerIndex {
 public:
  SpeakerIndex() = default;
  explicit SpeakerIndex(const std::set<std::string>& speakers) {
    for (const auto& s : speakers) {
      ids_.emplace(s, static_cast<int>(names_.size()));
      names_.push_back(s);
    }
  }
  explicit SpeakerIndex(const Corpus& corpus) : SpeakerIndex(corpus.speakers()) {}

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<int> find(const std::string& speaker) const {
    auto it = ids_.find(speaker);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }
  int at(const std::string& speaker) const {
    auto id = find(speaker);
    if (!id) throw std::out_of_range("no domain label for speaker \"" + speaker + "\"");
    return *id;
  }

 private:
  std::map<std::string, int> ids_;
  std::vector<std::string> names_;
};

// Overall accuracy in percent.
inline double weighted_accuracy(std::span<const int> predictions, std::span<const int> golds) {
  if (predictions.size() != golds.size()) {
    throw std::invalid_argument("weighted_accuracy: " + std::to_string(predictions.size()) +
                                " predictions vs " + std::to_string(golds.size()) + " labels");
  }
  if (golds.empty()) throw std::invalid_argument("weighted_accuracy: no labels");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) correct += predictions[i] == golds[i] ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(golds.size());
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SynthConfig {
  int sessions = 5;
  int speakers_per_session = 2;
  int conversations_per_session = 10;
  int min_utterances = 8;
  int max_utterances = 14;
  int emotion_classes = 4;
  std::size_t acoustic_dim = 64;
  std::size_t lexical_dim = 32;
  double emotion_signal_strength = 1.0;
  double speaker_shift_strength = 2.0;
  double noise_std = 1.0;
  double stickiness = 0.8;
  // Speaker offsets are drawn inside a shared random subspace of this rank
  // per modality; 0 draws them in the full feature space.
  std::size_t speaker_subspace_dim = 0;
  std::uint64_t seed = 0;

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("SynthConfig: " + what); };
    if (sessions < 1 || sessions > 9) fail("sessions must be in [1, 9]");
    if (speakers_per_session < 2) fail("speakers_per_session must be at least 2");
    if (conversations_per_session < 1) fail("conversations_per_session must be positive");
    if (min_utterances < 1 || max_utterances < min_utterances) fail("bad utterance range");
    if (emotion_classes < 2) fail("emotion_classes must be at least 2");
    if (acoustic_dim == 0 || lexical_dim == 0) fail("feature dims must be positive");
    if (!(emotion_signal_strength >= 0.0)) fail("emotion_signal_strength must be >= 0");
    if (!(speaker_shift_strength >= 0.0)) fail("speaker_shift_strength must be >= 0");
    if (!(noise_std >= 0.0)) fail("noise_std must be >= 0");
    if (!(stickiness >= 0.0 && stickiness <= 1.0)) fail("stickiness must be in [0, 1]");
  }
};

inline std::string synth_speaker_name(int session, int k) {
  return "s" + std::to_string(session) + "_" + std::to_string(k);
}

// Each emotion has a fixed random mean per modality and each speaker a fixed
// random offset per modality. An utterance is
//   signal * mean[emotion] + shift * offset[speaker] + noise * N(0, I).
// Emotions follow a sticky Markov chain within a conversation; turns
// alternate between a pair of the session's speakers.
inline Corpus generate_synthetic_corpus(const SynthConfig& cfg) {
  cfg.validate();
  const auto classes = static_cast<std::size_t>(cfg.emotion_classes);
  auto draw_vectors = [](std::size_t count, std::size_t dim, Rng& rng) {
    std::vector<std::vector<double>> out(count, std::vector<double>(dim));
    for (auto& v : out)
      for (double& x : v) x = rng.normal();
    return out;
  };

  Rng mean_rng(mix_seed(cfg.seed, 1));
  const auto acoustic_means = draw_vectors(classes, cfg.acoustic_dim, mean_rng);
  const auto lexical_means = draw_vectors(classes, cfg.lexical_dim, mean_rng);

  const auto speakers = static_cast<std::size_t>(cfg.sessions * cfg.speakers_per_session);
  Rng speaker_rng(mix_seed(cfg.seed, 2));
  auto draw_offsets = [&](std::size_t dim) {
    if (cfg.speaker_subspace_dim == 0) return draw_vectors(speakers, dim, speaker_rng);
    // Unit-variance coordinates on a random basis scaled so each offset
    // keeps the same expected squared norm as the full-rank case.
    const std::size_t rank = cfg.speaker_subspace_dim;
    const auto basis = draw_vectors(rank, dim, speaker_rng);
    const auto coords = draw_vectors(speakers, rank, speaker_rng);
    const double norm = 1.0 / std::sqrt(static_cast<double>(rank));
    std::vector<std::vector<double>> out(speakers, std::vector<double>(dim, 0.0));
    for (std::size_t s = 0; s < speakers; ++s)
      for (std::size_t r = 0; r < rank; ++r)
        for (std::size_t k = 0; k < dim; ++k) out[s][k] += norm * coords[s][r] * basis[r][k];
    return out;
  };
  const auto acoustic_offsets = draw_offsets(cfg.acoustic_dim);
  const auto lexical_offsets = draw_offsets(cfg.lexical_dim);

  Rng rng(mix_seed(cfg.seed, 3));
  Corpus corpus;
  for (int session = 1; session <= cfg.sessions; ++session) {
    for (int ci = 0; ci < cfg.conversations_per_session; ++ci) {
      Conversation conv;
      conv.session = session;
      conv.id = "s" + std::to_string(session) + "_c" + std::to_string(ci);

      const auto per = static_cast<std::size_t>(cfg.speakers_per_session);
      std::size_t first = rng.uniform_index(per);
      std::size_t second = rng.uniform_index(per - 1);
      if (second >= first) ++second;
      const std::size_t pair[2] = {first, second};
      const std::size_t starter = rng.uniform_index(2);
      const std::size_t length = static_cast<std::size_t>(cfg.min_utterances) +
                                 rng.uniform_index(static_cast<std::size_t>(
                                     cfg.max_utterances - cfg.min_utterances + 1));

      std::size_t emotion = rng.uniform_index(classes);
      for (std::size_t t = 0; t < length; ++t) {
        if (t > 0 && rng.uniform() >= cfg.stickiness) {
          std::size_t next = rng.uniform_index(classes - 1);
          if (next >= emotion) ++next;
          emotion = next;
        }
        const std::size_t local = pair[(starter + t) % 2];
        const std::size_t speaker = static_cast<std::size_t>(session - 1) * per + local;
        Utterance u;
        u.speaker = synth_speaker_name(session, static_cast<int>(local));
        u.emotion = static_cast<int>(emotion);
        u.acoustic.resize(cfg.acoustic_dim);
        u.lexical.resize(cfg.lexical_dim);
        for (std::size_t k = 0; k < cfg.acoustic_dim; ++k) {
          u.acoustic[k] = cfg.emotion_signal_strength * acoustic_means[emotion][k] +
                          cfg.speaker_shift_strength * acoustic_offsets[speaker][k] +
                          cfg.noise_std * rng.normal();
        }
        for (std::size_t k = 0; k < cfg.lexical_dim; ++k) {
          u.lexical[k] = cfg.emotion_signal_strength * lexical_means[emotion][k] +
                         cfg.speaker_shift_strength * lexical_offsets[speaker][k] +
                         cfg.noise_std * rng.normal();
        }
        conv.utterances.push_back(std::move(u));
      }
      conv.speaker = conv.utterances.front().speaker;
      corpus.conversations.push_back(std::move(conv));
    }
  }
  return corpus;
}

}  // namespace dann

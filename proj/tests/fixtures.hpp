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

// Fixtures shared by the unit and acceptance tests.

#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "dann/data.hpp"
#include "dann/random.hpp"

namespace dann::testing {

// Utterance and dialogue counts per session of the IEMOCAP release.
inline constexpr std::array<std::size_t, 5> kSessionUtterances{1085, 1023, 1151, 1031, 1241};
inline constexpr std::array<std::size_t, 5> kSessionDialogues{28, 30, 32, 30, 31};

// A corpus with IEMOCAP's session layout: one speaker pair per session,
// utterances spread as evenly as possible over the session's dialogues.
// Features are tiny random vectors; only the counts matter.
inline Corpus iemocap_shaped_corpus(std::uint64_t seed = 1) {
  Rng rng(seed);
  Corpus corpus;
  for (std::size_t s = 0; s < kSessionUtterances.size(); ++s) {
    const int session = static_cast<int>(s + 1);
    const std::size_t dialogues = kSessionDialogues[s];
    for (std::size_t d = 0; d < dialogues; ++d) {
      const std::size_t length = kSessionUtterances[s] / dialogues + (d < kSessionUtterances[s] % dialogues ? 1 : 0);
      Conversation c;
      c.id = "Ses0" + std::to_string(session) + "_" + std::to_string(d);
      c.session = session;
      c.speaker = "Ses0" + std::to_string(session) + "F";
      for (std::size_t i = 0; i < length; ++i) {
        Utterance u;
        u.acoustic = {rng.normal(), rng.normal()};
        u.lexical = {rng.normal()};
        u.emotion = static_cast<int>(rng.uniform_index(4));
        u.speaker = "Ses0" + std::to_string(session) + (i % 2 == 0 ? "F" : "M");
        c.utterances.push_back(std::move(u));
      }
      corpus.conversations.push_back(std::move(c));
    }
  }
  return corpus;
}

}  // namespace dann::testing

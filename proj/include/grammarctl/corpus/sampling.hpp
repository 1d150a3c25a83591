// Copyright 2026 The grammarctl Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/corpus/dialogue.hpp"

namespace grammarctl::corpus {

inline constexpr std::size_t kSnippetTurns = 4;

struct DialogueSnippet {
  std::vector<Turn> context;  // exactly kSnippetTurns turns
  Speaker next_speaker = Speaker::A;
  std::string dialogue_id;
  std::size_t start = 0;
  std::optional<Turn> reference;  // the turn that actually followed, when known

  bool operator==(const DialogueSnippet&) const = default;
};

inline DialogueSnippet make_snippet(const Dialogue& d, std::size_t start) {
  if (start + kSnippetTurns > d.turns.size())
    throw PreconditionError("dialogue '" + d.id + "' is too short for a snippet at " + std::to_string(start));
  DialogueSnippet s;
  s.context.assign(d.turns.begin() + static_cast<std::ptrdiff_t>(start),
                   d.turns.begin() + static_cast<std::ptrdiff_t>(start + kSnippetTurns));
  s.next_speaker = other(s.context.back().speaker);
  s.dialogue_id = d.id;
  s.start = start;
  if (start + kSnippetTurns < d.turns.size()) s.reference = d.turns[start + kSnippetTurns];
  return s;
}

// Every (dialogue, start) pair that leaves a following turn after the
// four-turn context.
inline std::vector<std::pair<std::size_t, std::size_t>> snippet_positions(std::span<const Dialogue> dialogues) {
  std::vector<std::pair<std::size_t, std::size_t>> positions;
  for (std::size_t d = 0; d < dialogues.size(); ++d) {
    const auto n = dialogues[d].turns.size();
    if (n < kSnippetTurns + 1) continue;
    for (std::size_t s = 0; s + kSnippetTurns < n; ++s) positions.emplace_back(d, s);
  }
  return positions;
}

// Draws `n` distinct snippet positions uniformly; windows from one dialogue
// may overlap.
inline std::vector<DialogueSnippet> sample_snippets(std::span<const Dialogue> dialogues, std::size_t n,
                                                    std::uint64_t seed) {
  if (n == 0) return {};
  auto positions = snippet_positions(dialogues);
  if (positions.size() < n)
    throw PreconditionError("requested " + std::to_string(n) + " snippets but only " +
                            std::to_string(positions.size()) + " positions in dialogues with >= 5 turns (short by " +
                            std::to_string(n - positions.size()) + ")");
  std::mt19937_64 rng(seed);
  std::vector<DialogueSnippet> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, positions.size() - 1);
    std::swap(positions[i], positions[pick(rng)]);
    out.push_back(make_snippet(dialogues[positions[i].first], positions[i].second));
  }
  return out;
}

inline nlohmann::json to_json(const DialogueSnippet& s) {
  nlohmann::json ctx = nlohmann::json::array();
  for (const auto& t : s.context) ctx.push_back({{"speaker", to_string(t.speaker)}, {"text", t.text}});
  nlohmann::json j = {{"dialogue_id", s.dialogue_id},
                      {"start", s.start},
                      {"next_speaker", to_string(s.next_speaker)},
                      {"context", std::move(ctx)}};
  if (s.reference) j["reference"] = s.reference->text;
  return j;
}

inline DialogueSnippet snippet_from_json(const nlohmann::json& j) {
  DialogueSnippet s;
  s.dialogue_id = j.value("dialogue_id", "");
  s.start = j.value("start", std::size_t{0});
  s.next_speaker = parse_speaker(j.at("next_speaker").get<std::string>());
  for (const auto& t : j.at("context"))
    s.context.push_back({parse_speaker(t.at("speaker").get<std::string>()), t.at("text").get<std::string>(), {}});
  if (j.contains("reference") && j["reference"].is_string())
    s.reference = Turn{s.next_speaker, j["reference"].get<std::string>(), {}};
  return s;
}

}  // namespace grammarctl::corpus

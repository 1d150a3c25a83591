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

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "grammarctl/core/errors.hpp"

namespace grammarctl {

// CEFR proficiency levels; the enumerator order is the proficiency order.
enum class CefrLevel : std::uint8_t { A1, A2, B1, B2, C1, C2 };

inline constexpr std::array<CefrLevel, 6> kAllLevels = {CefrLevel::A1, CefrLevel::A2, CefrLevel::B1,
                                                        CefrLevel::B2, CefrLevel::C1, CefrLevel::C2};

inline constexpr std::string_view to_string(CefrLevel level) {
  constexpr std::array<std::string_view, 6> names = {"A1", "A2", "B1", "B2", "C1", "C2"};
  return names[static_cast<std::size_t>(level)];
}

inline std::optional<CefrLevel> try_parse_level(std::string_view token) {
  if (token.size() != 2) return std::nullopt;
  const char letter = (token[0] >= 'a' && token[0] <= 'z') ? static_cast<char>(token[0] - 32) : token[0];
  for (CefrLevel level : kAllLevels) {
    if (letter == to_string(level)[0] && token[1] == to_string(level)[1]) return level;
  }
  return std::nullopt;
}

inline CefrLevel parse_level(std::string_view token) {
  if (auto level = try_parse_level(token)) return *level;
  throw ValidationError("unknown CEFR level '" + std::string(token) + "'");
}

// Descriptions of overall oral interaction per level; used when simulating
// learners at a given proficiency.
inline constexpr std::string_view level_description(CefrLevel level) {
  switch (level) {
    case CefrLevel::A1:
      return "Can interact in a simple way but communication is totally dependent on repetition at a "
             "slower rate, rephrasing and repair. Can ask and answer simple questions, initiate and respond "
             "to simple statements in areas of immediate need or on very familiar topics.";
    case CefrLevel::A2:
      return "Can interact with reasonable ease in structured situations and short conversations, "
             "provided the other person helps if necessary. Can manage simple, routine exchanges without "
             "undue effort; can ask and answer questions and exchange ideas and information on familiar "
             "topics in predictable everyday situations.";
    case CefrLevel::B1:
      return "Can communicate with some confidence on familiar routine and non-routine matters related "
             "to their interests and professional field. Can exchange, check and confirm information, deal "
             "with less routine situations and explain why something is a problem. Can express thoughts on "
             "more abstract, cultural topics such as films, books, music, etc.";
    case CefrLevel::B2:
      return "Can interact with a degree of fluency and spontaneity that makes regular interaction, and "
             "sustained relationships with users of the target language, quite possible without imposing "
             "strain on either party. Can highlight the personal significance of events and experiences, "
             "and account for and sustain views clearly by providing relevant explanations and arguments.";
    case CefrLevel::C1:
      return "Can express themselves fluently and spontaneously, almost effortlessly. Has a good command "
             "of a broad lexical repertoire allowing gaps to be readily overcome with circumlocutions. There "
             "is little obvious searching for expressions or avoidance strategies; only a conceptually "
             "difficult subject can hinder a natural, smooth flow of language.";
    case CefrLevel::C2:
      return "Has a good command of idiomatic expressions and colloquialisms with awareness of "
             "connotative levels of meaning. Can convey finer shades of meaning precisely by using, with "
             "reasonable accuracy, a wide range of modification devices. Can backtrack and restructure "
             "around a difficulty so smoothly that the interlocutor is hardly aware of it.";
  }
  return {};
}

}  // namespace grammarctl

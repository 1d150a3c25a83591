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
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"
#include "grammarctl/core/types.hpp"

namespace grammarctl::corpus {

enum class Source : std::uint8_t { DailyDialog, DialogSum, WizardOfWikipedia, TopicalChat, CmuDog, Normalized, Synthetic };

inline std::string_view to_string(Source s) {
  switch (s) {
    case Source::DailyDialog: return "dailydialog";
    case Source::DialogSum: return "dialogsum";
    case Source::WizardOfWikipedia: return "wow";
    case Source::TopicalChat: return "topicalchat";
    case Source::CmuDog: return "cmudog";
    case Source::Normalized: return "normalized";
    case Source::Synthetic: return "synthetic";
  }
  return {};
}

inline Source parse_source(std::string_view s) {
  for (auto src : {Source::DailyDialog, Source::DialogSum, Source::WizardOfWikipedia, Source::TopicalChat, Source::CmuDog,
                   Source::Normalized, Source::Synthetic})
    if (text::iequals(s, to_string(src))) return src;
  throw LookupError("no corpus adapter named '" + std::string(s) + "'");
}

struct Turn {
  Speaker speaker = Speaker::A;
  std::string text;
  std::optional<SkillSet> skills;  // filled by labeling

  bool operator==(const Turn&) const = default;
};

struct Dialogue {
  std::string id;
  Source source = Source::Normalized;
  std::vector<Turn> turns;

  bool operator==(const Dialogue&) const = default;
};

// >= 2 non-empty turns with strictly alternating speakers.
inline void validate(const Dialogue& d) {
  if (d.turns.size() < 2) throw ValidationError("dialogue '" + d.id + "' has fewer than 2 turns");
  for (std::size_t i = 0; i < d.turns.size(); ++i) {
    if (text::trim(d.turns[i].text).empty())
      throw ValidationError("dialogue '" + d.id + "' has an empty turn at " + std::to_string(i));
    if (i && d.turns[i].speaker == d.turns[i - 1].speaker)
      throw ValidationError("dialogue '" + d.id + "' does not alternate speakers at turn " + std::to_string(i));
  }
}

inline nlohmann::json to_json(const Dialogue& d) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& t : d.turns) {
    nlohmann::json jt = {{"speaker", to_string(t.speaker)}, {"text", t.text}};
    jt["skills"] = t.skills ? nlohmann::json(*t.skills) : nlohmann::json(nullptr);
    turns.push_back(std::move(jt));
  }
  return {{"id", d.id}, {"source", to_string(d.source)}, {"turns", std::move(turns)}};
}

inline Dialogue dialogue_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("turns") || !j["turns"].is_array())
    throw ParseError("dialogue record needs a 'turns' array");
  Dialogue d;
  d.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump()) : std::string();
  d.source = j.contains("source") && j["source"].is_string() ? parse_source(j["source"].get<std::string>())
                                                              : Source::Normalized;
  for (const auto& jt : j["turns"]) {
    if (!jt.is_object() || !jt.contains("speaker") || !jt.contains("text") || !jt["text"].is_string())
      throw ParseError("turn record needs 'speaker' and 'text'");
    Turn t;
    t.speaker = parse_speaker(jt["speaker"].get<std::string>());
    t.text = jt["text"].get<std::string>();
    if (jt.contains("skills") && jt["skills"].is_array()) t.skills = jt["skills"].get<SkillSet>();
    d.turns.push_back(std::move(t));
  }
  validate(d);
  return d;
}

struct CorpusStats {
  std::size_t dialogues = 0;
  double mean_turns = 0.0;
  double mean_words_per_turn = 0.0;
};

inline CorpusStats compute_stats(std::span<const Dialogue> dialogues) {
  CorpusStats st;
  st.dialogues = dialogues.size();
  std::size_t turns = 0, words = 0;
  for (const auto& d : dialogues) {
    turns += d.turns.size();
    for (const auto& t : d.turns) words += text::word_count(t.text);
  }
  if (st.dialogues) st.mean_turns = static_cast<double>(turns) / static_cast<double>(st.dialogues);
  if (turns) st.mean_words_per_turn = static_cast<double>(words) / static_cast<double>(turns);
  return st;
}

}  // namespace grammarctl::corpus

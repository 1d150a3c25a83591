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

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/corpus/dialogue.hpp"
#include "grammarctl/corpus/labeling.hpp"
#include "grammarctl/corpus/sampling.hpp"
#include "grammarctl/detector/detector.hpp"
#include "grammarctl/egp/constraints.hpp"
#include "grammarctl/egp/prompts.hpp"
#include "grammarctl/llm/chat.hpp"
#include "grammarctl/llm/logit_model.hpp"

namespace grammarctl::control {

inline constexpr std::size_t kDemonstrationCap = 500;

struct FinetuneExample {
  egp::Prompt prompt;  // explicit-constraint template listing `skill_ids`
  std::string completion;
  std::vector<SkillId> skill_ids;

  bool operator==(const FinetuneExample&) const = default;
};

inline nlohmann::json to_json(const FinetuneExample& e) {
  return {{"system", e.prompt.system}, {"prompt", e.prompt.user}, {"completion", e.completion}, {"skill_ids", e.skill_ids}};
}

inline FinetuneExample finetune_example_from_json(const nlohmann::json& j) {
  try {
    FinetuneExample e;
    e.prompt.system = j.value("system", std::string());
    e.prompt.user = j.at("prompt").get<std::string>();
    e.completion = j.at("completion").get<std::string>();
    e.skill_ids = j.at("skill_ids").get<std::vector<SkillId>>();
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("bad fine-tuning record: ") + ex.what());
  }
}

struct FinetuneDataset {
  std::vector<FinetuneExample> examples;
  std::map<SkillId, std::size_t> per_skill;
  std::size_t dropped_on_recheck = 0;  // skill labels the detector did not confirm on the full turn
};

// One demonstration per (four-turn context, next turn) whose next turn holds
// at least one skill with a detector and with room under `cap`. Positions
// are visited in a seeded random order so capped skills get a random sample.
// Each listed skill is re-detected on the completion before it is kept.
inline FinetuneDataset build_finetune_dataset(std::span<const corpus::Dialogue> dialogues,
                                              const detector::DetectorSet& detectors, const egp::SkillRepository& repo,
                                              std::size_t cap = kDemonstrationCap, std::uint64_t seed = 1) {
  auto positions = corpus::snippet_positions(dialogues);
  std::mt19937_64 rng(seed);
  std::shuffle(positions.begin(), positions.end(), rng);
  FinetuneDataset out;
  for (const auto& [d, start] : positions) {
    const auto snippet = corpus::make_snippet(dialogues[d], start);
    const auto& next = *snippet.reference;
    if (!next.skills) throw PreconditionError("dialogue '" + dialogues[d].id + "' is not labeled");
    std::vector<SkillId> listed;
    for (auto id : *next.skills) {
      auto det = detectors.find(id);
      if (det == detectors.end() || out.per_skill[id] >= cap || !repo.find(id)) continue;
      if (!corpus::detect_in_turn(*det->second, next.text)) {
        ++out.dropped_on_recheck;
        continue;
      }
      listed.push_back(id);
      if (listed.size() == egp::kMaxExplicitSkills) break;
    }
    if (listed.empty()) continue;
    for (auto id : listed) ++out.per_skill[id];
    auto prompt = egp::verbalize(egp::ConstraintSet::explicit_skills(listed), repo, snippet.next_speaker, snippet.context);
    out.examples.push_back({std::move(prompt), next.text, std::move(listed)});
  }
  for (auto it = out.per_skill.begin(); it != out.per_skill.end();)
    it = it->second == 0 ? out.per_skill.erase(it) : std::next(it);
  return out;
}

inline void write_jsonl(const std::filesystem::path& path, std::span<const FinetuneExample> examples) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  for (const auto& e : examples) out << to_json(e).dump() << '\n';
}

inline std::vector<FinetuneExample> read_finetune_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open " + path.string());
  std::vector<FinetuneExample> out;
  std::size_t row = 0;
  for (std::string line; std::getline(in, line);) {
    ++row;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(finetune_example_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), row);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), row);
    }
  }
  return out;
}

// The same prompt text the local generators condition on.
inline std::string local_prompt_text(const egp::Prompt& p) {
  const auto messages = llm::to_messages(p);
  return llm::flatten_messages(messages);
}

inline std::vector<llm::LmExample> to_lm_examples(std::span<const FinetuneExample> data, const llm::Vocabulary& vocab) {
  std::vector<llm::LmExample> out;
  out.reserve(data.size());
  for (const auto& e : data) out.push_back(llm::make_example(vocab, local_prompt_text(e.prompt), e.completion));
  return out;
}

// (unconstrained prompt over up to four preceding turns, turn) for every
// turn after the first; the plain next-turn data a local model starts from.
inline std::vector<std::pair<egp::Prompt, std::string>> pretraining_pairs(std::span<const corpus::Dialogue> dialogues) {
  std::vector<std::pair<egp::Prompt, std::string>> out;
  for (const auto& d : dialogues)
    for (std::size_t i = 1; i < d.turns.size(); ++i) {
      const auto from = i > corpus::kSnippetTurns ? i - corpus::kSnippetTurns : 0;
      std::span<const corpus::Turn> ctx(d.turns.data() + from, i - from);
      out.emplace_back(egp::unconstrained_prompt(d.turns[i].speaker, ctx), d.turns[i].text);
    }
  return out;
}

// Texts a local model's vocabulary should cover: dialogue turns, prompt
// templates and the skill descriptions that constraint prompts quote.
inline std::vector<std::string> vocabulary_texts(std::span<const corpus::Dialogue> dialogues,
                                                 const egp::SkillRepository& repo) {
  std::vector<std::string> texts;
  for (const auto& [p, r] : pretraining_pairs(dialogues)) {
    texts.push_back(local_prompt_text(p));
    texts.push_back(r);
  }
  for (const auto& s : repo.skills()) {
    texts.push_back(s.subcategory + " " + s.guideword + " " + s.can_do);
    for (const auto& e : s.examples) texts.push_back(e);
  }
  const std::vector<corpus::Turn> none{{Speaker::A, "x", std::nullopt}};
  if (!repo.skills().empty()) {
    const auto& first = repo.skills().front();
    texts.push_back(
        local_prompt_text(egp::verbalize(egp::ConstraintSet::explicit_skills({first.id}), repo, Speaker::B, none)));
    texts.push_back(local_prompt_text(egp::verbalize(
        egp::ConstraintSet::categorical({{first.subcategory, first.level}}), repo, Speaker::B, none)));
  }
  return texts;
}

}  // namespace grammarctl::control

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

#include <span>
#include <string>
#include <vector>

#include "grammarctl/core/cefr.hpp"
#include "grammarctl/core/errors.hpp"
#include "grammarctl/corpus/dialogue.hpp"
#include "grammarctl/egp/constraints.hpp"
#include "grammarctl/egp/repository.hpp"

namespace grammarctl::egp {

// A rendered prompt: system message plus user message.
struct Prompt {
  std::string system;
  std::string user;

  bool operator==(const Prompt&) const = default;
};

struct PromptOptions {
  // The categorical template carries an unbalanced ")" after the level;
  // setting this drops it.
  bool fix_template_typo = false;
};

inline std::string format_dialog(std::span<const corpus::Turn> turns) {
  std::string out = "Dialog:";
  for (const auto& t : turns) {
    out += '\n';
    out += to_string(t.speaker);
    out += ": ";
    out += t.text;
  }
  return out;
}

inline std::string response_system_message(Speaker next) {
  return "Only output " + std::string(to_string(next)) + "'s response.";
}

inline Prompt verbalize_explicit(std::span<const GrammarSkill* const> skills, Speaker next,
                                 std::span<const corpus::Turn> dialogue) {
  if (skills.empty() || skills.size() > kMaxExplicitSkills)
    throw PreconditionError("explicit verbalization needs 1-6 skills, got " + std::to_string(skills.size()));
  std::string user = "Given the dialog, write a possible next turn of " + std::string(to_string(next)) +
                     " that includes all of these grammatical items:";
  for (const auto* s : skills) {
    user += "\n- " + s->subcategory + " - " + s->guideword + ": " + s->can_do + " (CEFR " +
            std::string(to_string(s->level)) + ")";
  }
  user += "\n\n" + format_dialog(dialogue);
  return {response_system_message(next), std::move(user)};
}

inline Prompt verbalize_explicit(const ConstraintSet& c, const SkillRepository& repo, Speaker next,
                                 std::span<const corpus::Turn> dialogue) {
  if (!c.is_explicit()) throw PreconditionError("constraint set is not explicit");
  std::vector<const GrammarSkill*> skills;
  for (auto id : c.skills()) skills.push_back(&repo.at(id));
  return verbalize_explicit(skills, next, dialogue);
}

struct CategoricalPrompt {
  Prompt prompt;
  std::vector<std::string> warnings;
};

// Guidewords within a bullet are joined with "; " because guidewords
// themselves may contain commas.
inline CategoricalPrompt verbalize_categorical(std::span<const CategoryLevel> pairs, const SkillRepository& repo,
                                               Speaker next, std::span<const corpus::Turn> dialogue,
                                               const PromptOptions& options = {}) {
  if (pairs.empty() || pairs.size() > kMaxCategoryPairs)
    throw PreconditionError("categorical verbalization needs 1-3 pairs, got " + std::to_string(pairs.size()));
  CategoricalPrompt out;
  std::string user = "Given the dialog, write a possible next turn of " + std::string(to_string(next)) +
                     " that preferably uses the following grammar patterns in the response:";
  for (const auto& p : pairs) {
    const std::string name = repo.canonical_subcategory(p.subcategory);
    std::string guidewords;
    for (const auto* s : repo.by_subcategory(p.subcategory)) {
      if (s->level != p.level) continue;
      if (!guidewords.empty()) guidewords += "; ";
      guidewords += s->guideword;
    }
    if (guidewords.empty())
      out.warnings.push_back("no skills in '" + name + "' at level " + std::string(to_string(p.level)));
    user += "\n- " + name + " on CEFR level " + std::string(to_string(p.level)) +
            (options.fix_template_typo ? ":" : "):") + (guidewords.empty() ? "" : " " + guidewords);
  }
  user += "\n\n" + format_dialog(dialogue);
  out.prompt = {response_system_message(next), std::move(user)};
  return out;
}

// Dispatches on the constraint kind. Warnings from categorical expansion are
// appended to `warnings` when given.
inline Prompt verbalize(const ConstraintSet& c, const SkillRepository& repo, Speaker next,
                        std::span<const corpus::Turn> dialogue, const PromptOptions& options = {},
                        std::vector<std::string>* warnings = nullptr) {
  if (c.is_explicit()) return verbalize_explicit(c, repo, next, dialogue);
  auto r = verbalize_categorical(c.pairs(), repo, next, dialogue, options);
  if (warnings) warnings->insert(warnings->end(), r.warnings.begin(), r.warnings.end());
  return r.prompt;
}

// Prompt for a plain next turn with no grammar constraint.
inline Prompt unconstrained_prompt(Speaker next, std::span<const corpus::Turn> dialogue) {
  return {response_system_message(next),
          "Given the dialog, write a possible next turn of " + std::string(to_string(next)) + ":\n" +
              format_dialog(dialogue)};
}

// Learner simulation. Without a level the prompt is the unconstrained one.
inline Prompt learner_prompt(Speaker next, std::span<const corpus::Turn> dialogue, std::optional<CefrLevel> level) {
  if (!level) return unconstrained_prompt(next, dialogue);
  const std::string who(to_string(next));
  const std::string lvl(to_string(*level));
  return {"Only output " + who + "'s response using language on CEFR level " + lvl +
              ". This level is described as: " + std::string(level_description(*level)),
          "Given the dialog, write a possible next turn of " + who + " that an English learner on CEFR level " + lvl +
              " could produce:\n" + format_dialog(dialogue)};
}

}  // namespace grammarctl::egp

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

#include <random>
#include <string>
#include <vector>

#include "grammarctl/analysis/cooccurrence.hpp"
#include "grammarctl/corpus/dialogue.hpp"

namespace grammarctl::testing {

// Labeled dialogues over skills 1..n_skills where every skill appears
// independently at `background`, except g_pre (at `pre_rate`) and g_post,
// which appears at `planted` in turns exposed to g_pre. The generator keeps
// its own exposure bookkeeping so the counts can be checked.
// Dialogues are long on purpose: opening turns can never be exposed, and
// with short dialogues that position effect leaks the planted g_post rate
// into every (x, g_post) pair.
struct PlantedCorpus {
  std::vector<corpus::Dialogue> dialogues;
  SkillId g_pre = 1;
  SkillId g_post = 2;
  std::size_t exposed = 0, exposed_with_post = 0;
  std::size_t unexposed = 0, unexposed_with_post = 0;
};

inline PlantedCorpus planted_corpus(std::uint64_t seed, std::size_t dialogues = 60, std::size_t turns = 100,
                                    SkillId n_skills = 8, double pre_rate = 0.15, double background = 0.05,
                                    double planted = 0.30) {
  PlantedCorpus out;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution bg(background), pre(pre_rate), plant(planted);
  for (std::size_t i = 0; i < dialogues; ++i) {
    corpus::Dialogue d{"p" + std::to_string(i), corpus::Source::Synthetic, {}};
    // remaining exposed turns for each speaker
    std::size_t window[2] = {0, 0};
    for (std::size_t t = 0; t < turns; ++t) {
      const auto who = t % 2 ? Speaker::B : Speaker::A;
      const auto me = static_cast<std::size_t>(who);
      const bool exposed = window[me] > 0;
      if (exposed) --window[me];
      SkillSet skills;
      for (SkillId s = 1; s <= n_skills; ++s) {
        bool on;
        if (s == out.g_pre)
          on = pre(rng);
        else if (s == out.g_post)
          on = exposed ? plant(rng) : bg(rng);
        else
          on = bg(rng);
        if (on) skills.insert(s);
      }
      const bool has_post = skills.count(out.g_post) > 0;
      (exposed ? out.exposed : out.unexposed) += 1;
      (exposed ? out.exposed_with_post : out.unexposed_with_post) += has_post;
      if (skills.count(out.g_pre)) window[1 - me] = analysis::kExposureWindow;
      d.turns.push_back({who, "turn " + std::to_string(t) + ".", std::move(skills)});
    }
    out.dialogues.push_back(std::move(d));
  }
  return out;
}

}  // namespace grammarctl::testing

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

#include <memory>
#include <vector>

#include "grammarctl/control/finetune_data.hpp"
#include "grammarctl/llm/logit_model.hpp"
#include "support/fixtures.hpp"
#include "support/synthetic.hpp"

namespace grammarctl::testing {

// A small next-turn model pretrained on synthetic dialogues; shared by every
// test in a binary because training takes a few seconds.
struct LmFixture {
  std::vector<corpus::Dialogue> dialogues;  // training dialogues
  std::vector<corpus::Dialogue> held_out;   // never seen in training
  std::shared_ptr<llm::TinyLM> lm;
};

inline LmFixture make_lm_fixture(std::size_t dialogues = 160, std::uint64_t seed = 11) {
  LmFixture f;
  f.dialogues = synthetic_dialogues(dialogues, seed);
  f.held_out = synthetic_dialogues(40, seed + 1000);
  auto vocab = llm::Vocabulary::build(control::vocabulary_texts(f.dialogues, fixture_repo()));
  std::vector<llm::LmExample> data;
  for (const auto& [p, r] : control::pretraining_pairs(f.dialogues))
    data.push_back(llm::make_example(vocab, control::local_prompt_text(p), r));
  f.lm = std::make_shared<llm::TinyLM>("tiny-lm", std::move(vocab), llm::TinyLmShape{}, 512, seed);
  llm::LmTrainOptions opt;
  opt.seed = seed;
  llm::train_lm(*f.lm, data, opt);
  return f;
}

inline const LmFixture& lm_fixture() {
  static const LmFixture f = make_lm_fixture();
  return f;
}

}  // namespace grammarctl::testing

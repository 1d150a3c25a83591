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
#include <array>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "grammarctl/corpus/sampling.hpp"
#include "grammarctl/egp/constraints.hpp"

namespace grammarctl::eval {

// Explicit constraint sizes: one to three subcategories with one or two
// skills each.
inline constexpr std::array<std::size_t, 5> kTask1Sizes = {1, 2, 3, 4, 6};

struct TestCase {
  corpus::DialogueSnippet snippet;
  egp::ConstraintSet constraints;
  bool augmented = false;  // the snippet's true next turn already satisfies the constraints
};

inline nlohmann::json to_json(const TestCase& c) {
  return {{"snippet", corpus::to_json(c.snippet)}, {"constraints", egp::to_json(c.constraints)}, {"augmented", c.augmented}};
}

inline TestCase test_case_from_json(const nlohmann::json& j) {
  try {
    return {corpus::snippet_from_json(j.at("snippet")), egp::constraints_from_json(j.at("constraints")),
            j.value("augmented", false)};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad test case: ") + e.what());
  }
}

struct SuiteOptions {
  std::size_t snippets = 100;
  std::uint64_t seed = 1;
  bool augment = true;
  // Skills eligible for constraints (those with a detector); empty means all.
  SkillSet pool;
};

namespace detail {

inline std::map<std::string, std::vector<SkillId>> pool_by_subcategory(const egp::SkillRepository& repo,
                                                                       const SkillSet& pool) {
  std::map<std::string, std::vector<SkillId>> out;
  for (const auto& s : repo.skills())
    if (pool.empty() || pool.count(s.id)) out[s.subcategory].push_back(s.id);
  return out;
}

template <class T>
std::vector<T> pick_distinct(std::vector<T> from, std::size_t n, std::mt19937_64& rng) {
  std::shuffle(from.begin(), from.end(), rng);
  from.resize(std::min(n, from.size()));
  return from;
}

// (subcategories, skills per subcategory) for an explicit set of `size`.
inline std::pair<std::size_t, std::size_t> shape_for(std::size_t size, std::mt19937_64& rng) {
  switch (size) {
    case 1: return {1, 1};
    case 2: return (rng() & 1) ? std::pair<std::size_t, std::size_t>{1, 2} : std::pair<std::size_t, std::size_t>{2, 1};
    case 3: return {3, 1};
    case 4: return {2, 2};
    case 6: return {3, 2};
    default: throw ValidationError("constraint size " + std::to_string(size) + " is not one of 1, 2, 3, 4, 6");
  }
}

inline std::optional<egp::ConstraintSet> sample_explicit(const std::map<std::string, std::vector<SkillId>>& by_sub,
                                                         std::size_t size, std::mt19937_64& rng) {
  const auto [subs, per] = shape_for(size, rng);
  std::vector<std::string> eligible;
  for (const auto& [name, ids] : by_sub)
    if (ids.size() >= per) eligible.push_back(name);
  if (eligible.size() < subs) return std::nullopt;
  std::vector<SkillId> ids;
  for (const auto& name : pick_distinct(eligible, subs, rng))
    for (auto id : pick_distinct(by_sub.at(name), per, rng)) ids.push_back(id);
  return egp::ConstraintSet::explicit_skills(std::move(ids));
}

}  // namespace detail

// Every sampled snippet gets one explicit set of each size. With `augment`,
// each set is also paired with a labeled snippet whose true next turn holds
// all of its skills, when one exists.
inline std::vector<TestCase> build_task1_suite(std::span<const corpus::Dialogue> corpus, const egp::SkillRepository& repo,
                                               const SuiteOptions& opt = {}) {
  std::vector<TestCase> out;
  if (opt.snippets == 0) return out;
  const auto by_sub = detail::pool_by_subcategory(repo, opt.pool);
  const auto snippets = corpus::sample_snippets(corpus, opt.snippets, opt.seed);
  std::mt19937_64 rng(opt.seed ^ 0x7461736b31ULL);

  // skill -> snippet positions whose next turn carries it
  std::map<SkillId, std::vector<std::pair<std::size_t, std::size_t>>> carrying;
  if (opt.augment) {
    auto positions = corpus::snippet_positions(corpus);
    std::shuffle(positions.begin(), positions.end(), rng);
    for (const auto& [d, start] : positions) {
      const auto& next = corpus[d].turns[start + corpus::kSnippetTurns];
      if (next.skills)
        for (auto id : *next.skills) carrying[id].emplace_back(d, start);
    }
  }
  std::set<std::pair<std::size_t, std::size_t>> used;

  for (const auto& s : snippets) {
    for (auto size : kTask1Sizes) {
      auto c = detail::sample_explicit(by_sub, size, rng);
      if (!c) continue;
      out.push_back({s, *c, false});
      if (!opt.augment) continue;
      auto it = carrying.find(c->skills().front());
      if (it == carrying.end()) continue;
      for (const auto& pos : it->second) {
        const auto& skills = *corpus[pos.first].turns[pos.second + corpus::kSnippetTurns].skills;
        const bool all = std::all_of(c->skills().begin(), c->skills().end(), [&](SkillId id) { return skills.count(id); });
        if (!all || used.count(pos)) continue;
        used.insert(pos);
        out.push_back({corpus::make_snippet(corpus[pos.first], pos.second), *c, true});
        break;
      }
    }
  }
  return out;
}

// Three cases per snippet with one, two and three (subcategory, level)
// pairs. Levels are drawn among those at which the subcategory has an
// eligible skill.
inline std::vector<TestCase> build_task2_suite(std::span<const corpus::Dialogue> corpus, const egp::SkillRepository& repo,
                                               SuiteOptions opt = {}) {
  std::vector<TestCase> out;
  if (opt.snippets == 0) return out;
  std::map<std::string, std::set<CefrLevel>> levels;
  for (const auto& s : repo.skills())
    if (opt.pool.empty() || opt.pool.count(s.id)) levels[s.subcategory].insert(s.level);
  if (levels.size() < egp::kMaxCategoryPairs)
    throw PreconditionError("task-2 suite needs at least 3 subcategories with eligible skills, found " +
                            std::to_string(levels.size()));
  std::vector<std::string> subs;
  for (const auto& [name, _] : levels) subs.push_back(name);
  const auto snippets = corpus::sample_snippets(corpus, opt.snippets, opt.seed);
  std::mt19937_64 rng(opt.seed ^ 0x7461736b32ULL);
  for (const auto& s : snippets) {
    for (std::size_t n = 1; n <= egp::kMaxCategoryPairs; ++n) {
      std::vector<egp::CategoryLevel> pairs;
      for (const auto& name : detail::pick_distinct(subs, n, rng)) {
        std::vector<CefrLevel> lv(levels[name].begin(), levels[name].end());
        pairs.push_back({name, lv[std::uniform_int_distribution<std::size_t>(0, lv.size() - 1)(rng)]});
      }
      out.push_back({s, egp::ConstraintSet::categorical(std::move(pairs)), false});
    }
  }
  return out;
}

}  // namespace grammarctl::eval

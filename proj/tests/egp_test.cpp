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

#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>
#include <string>

#include "grammarctl/egp/constraints.hpp"
#include "grammarctl/egp/prompts.hpp"
#include "grammarctl/egp/repository.hpp"
#include "support/fixtures.hpp"

namespace grammarctl::egp {
namespace {

using corpus::Turn;

std::vector<Turn> four_turns() {
  return {{Speaker::A, "Hi, how was your trip?", {}},
          {Speaker::B, "Great, we saw the old town.", {}},
          {Speaker::A, "Did you like the hotel?", {}},
          {Speaker::B, "It was fine.", {}}};
}

TEST(Repository, LoadsFixtureAndTableOneRow) {
  const auto& repo = testing::fixture_repo();
  EXPECT_EQ(repo.size(), 53u);
  const auto& s = repo.at(3);
  EXPECT_EQ(s.super_category, "Adjectives");
  EXPECT_EQ(s.subcategory, "superlatives");
  EXPECT_EQ(s.guideword, "FORM/USE: WITH 'IN' + NOUN");
  EXPECT_EQ(s.level, CefrLevel::A2);
  EXPECT_EQ(s.type, SkillType::FormUse);
  ASSERT_FALSE(s.examples.empty());
  EXPECT_EQ(s.examples.front(), "It's the biggest room in the house.");
}

TEST(Repository, EmptyFileIsEmptyRepository) {
  std::istringstream in("");
  EXPECT_TRUE(SkillRepository::parse(in).empty());
}

TEST(Repository, RejectsUnknownLevel) {
  std::istringstream in(std::string(kTsvHeader) + "\n1\tX\tY\tG\tCan do\tD1\tFORM\tEx.\n");
  EXPECT_THROW(SkillRepository::parse(in), ValidationError);
}

TEST(Repository, MalformedRowNamesRowNumber) {
  std::istringstream in(std::string(kTsvHeader) + "\n1\tX\tY\tG\tCan do\tA1\tFORM\tEx.\n2\tX\tY\n");
  try {
    SkillRepository::parse(in);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), 3u);
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos);
  }
}

TEST(Repository, RejectsDuplicateIdsAndMissingExamples) {
  std::istringstream dup(std::string(kTsvHeader) + "\n1\tX\tY\tG\tC\tA1\tFORM\tE\n1\tX\tY\tG\tC\tA2\tUSE\tE\n");
  EXPECT_THROW(SkillRepository::parse(dup), ValidationError);
  std::istringstream none(std::string(kTsvHeader) + "\n1\tX\tY\tG\tC\tA1\tFORM\t\n");
  EXPECT_THROW(SkillRepository::parse(none), ValidationError);
}

TEST(Repository, TsvRoundTrip) {
  std::ostringstream out;
  testing::fixture_repo().write_tsv(out);
  std::istringstream in(out.str());
  auto again = SkillRepository::parse(in);
  ASSERT_EQ(again.size(), testing::fixture_repo().size());
  for (const auto& s : testing::fixture_repo().skills()) {
    const auto& t = again.at(s.id);
    EXPECT_EQ(t.can_do, s.can_do);
    EXPECT_EQ(t.examples, s.examples);
  }
}

TEST(ConstraintSet, EnforcesSizeAndUniqueness) {
  EXPECT_THROW(ConstraintSet::explicit_skills({}), ValidationError);
  EXPECT_THROW(ConstraintSet::explicit_skills({1, 2, 3, 4, 5, 6, 7}), ValidationError);
  EXPECT_THROW(ConstraintSet::explicit_skills({1, 1}), ValidationError);
  EXPECT_NO_THROW(ConstraintSet::explicit_skills({1, 2, 3, 4, 5, 6}));
  EXPECT_THROW(ConstraintSet::categorical({}), ValidationError);
  EXPECT_THROW(ConstraintSet::categorical({{"would", CefrLevel::A1}, {"Would", CefrLevel::B1}}), ValidationError);
  EXPECT_THROW(ConstraintSet::categorical(
                   {{"a", CefrLevel::A1}, {"b", CefrLevel::A1}, {"c", CefrLevel::A1}, {"d", CefrLevel::A1}}),
               ValidationError);
}

TEST(ConstraintSet, JsonRoundTripAndKey) {
  auto e = ConstraintSet::explicit_skills({5, 2});
  EXPECT_EQ(constraints_from_json(to_json(e)), e);
  EXPECT_EQ(e.key(), ConstraintSet::explicit_skills({2, 5}).key());
  auto c = ConstraintSet::categorical({{"would", CefrLevel::B1}});
  EXPECT_EQ(constraints_from_json(to_json(c)), c);
  EXPECT_NE(c.key(), e.key());
  EXPECT_THROW(constraints_from_json(nlohmann::json::object()), ValidationError);
}

TEST(ExpandCategorical, WouldB1HasElevenSkills) {
  auto r = expand_categorical(std::vector<CategoryLevel>{{"would", CefrLevel::B1}}, testing::fixture_repo());
  EXPECT_EQ(r.skills.size(), 11u);
  EXPECT_TRUE(r.warnings.empty());
  for (auto id : r.skills) EXPECT_EQ(testing::fixture_repo().at(id).level, CefrLevel::B1);
  // Matching is case-insensitive.
  EXPECT_EQ(expand_categorical(std::vector<CategoryLevel>{{"WOULD", CefrLevel::B1}}, testing::fixture_repo()).skills,
            r.skills);
}

TEST(ExpandCategorical, UnknownSubcategoryAndEmptyIntersection) {
  EXPECT_THROW(expand_categorical(std::vector<CategoryLevel>{{"passives", CefrLevel::B1}}, testing::fixture_repo()),
               LookupError);
  SkillRepository small({{1, "S", "sub", "G", "C", CefrLevel::A1, SkillType::Form, {"e"}}});
  auto r = expand_categorical(std::vector<CategoryLevel>{{"sub", CefrLevel::C2}}, small);
  EXPECT_TRUE(r.skills.empty());
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(ExpandCategorical, DisjointPairsGiveSumOfSizes) {
  const auto& repo = testing::fixture_repo();
  // Oracle: enumerate the rows directly.
  auto count = [&](const std::string& sub, CefrLevel lvl) {
    std::size_t n = 0;
    for (const auto& s : repo.skills()) n += (s.subcategory == sub && s.level == lvl);
    return n;
  };
  auto r = expand_categorical(std::vector<CategoryLevel>{{"would", CefrLevel::B1}, {"negation", CefrLevel::A1}}, repo);
  EXPECT_EQ(r.skills.size(), count("would", CefrLevel::B1) + count("negation", CefrLevel::A1));
  EXPECT_EQ(r.skills.size(), 14u);
}

// Property: adding skills to a repository never removes ids from an expansion.
TEST(ExpandCategorical, MonotoneInRepositoryContents) {
  const auto& full = testing::fixture_repo().skills();
  std::mt19937 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<GrammarSkill> subset, superset;
    for (const auto& s : full) {
      const bool in_sub = rng() % 2 == 0;
      if (in_sub) subset.push_back(s);
      if (in_sub || rng() % 2 == 0) superset.push_back(s);
    }
    SkillRepository a(subset), b(superset);
    for (const auto* sub : {"would", "negation", "superlatives"}) {
      if (!a.has_subcategory(sub)) continue;
      for (auto lvl : kAllLevels) {
        auto ra = expand_categorical(std::vector<CategoryLevel>{{sub, lvl}}, a).skills;
        auto rb = expand_categorical(std::vector<CategoryLevel>{{sub, lvl}}, b).skills;
        for (auto id : ra) ASSERT_TRUE(rb.count(id));
      }
    }
  }
}

TEST(Verbalize, ExplicitOneSkillMatchesTemplate) {
  const auto& repo = testing::fixture_repo();
  auto turns = four_turns();
  auto p = verbalize_explicit(ConstraintSet::explicit_skills({3}), repo, Speaker::A, turns);
  EXPECT_EQ(p.system, "Only output A's response.");
  EXPECT_EQ(p.user,
            "Given the dialog, write a possible next turn of A that includes all of these grammatical items:\n"
            "- superlatives - FORM/USE: WITH 'IN' + NOUN: Can use a superlative adjective followed by 'in' and a "
            "singular place noun. (CEFR A2)\n"
            "\n"
            "Dialog:\n"
            "A: Hi, how was your trip?\n"
            "B: Great, we saw the old town.\n"
            "A: Did you like the hotel?\n"
            "B: It was fine.");
}

TEST(Verbalize, ExplicitSixSkillsInInputOrder) {
  const auto& repo = testing::fixture_repo();
  auto turns = four_turns();
  std::vector<SkillId> ids = {40, 3, 22, 13, 51, 7};
  auto p = verbalize_explicit(ConstraintSet::explicit_skills(ids), repo, Speaker::A, turns);
  std::string expected =
      "Given the dialog, write a possible next turn of A that includes all of these grammatical items:\n";
  for (auto id : ids) {
    const auto& s = repo.at(id);
    expected += "- " + s.subcategory + " - " + s.guideword + ": " + s.can_do + " (CEFR " +
                std::string(to_string(s.level)) + ")\n";
  }
  expected += "\n" + format_dialog(turns);
  EXPECT_EQ(p.user, expected);
}

TEST(Verbalize, ZeroSkillsViolatesPrecondition) {
  auto turns = four_turns();
  std::vector<const GrammarSkill*> none;
  EXPECT_THROW(verbalize_explicit(none, Speaker::A, turns), PreconditionError);
}

TEST(Verbalize, CategoricalListsGuidewords) {
  const auto& repo = testing::fixture_repo();
  auto turns = four_turns();
  auto r = verbalize_categorical(std::vector<CategoryLevel>{{"would", CefrLevel::A1}}, repo, Speaker::A, turns);
  EXPECT_TRUE(r.warnings.empty());
  EXPECT_EQ(r.prompt.user,
            "Given the dialog, write a possible next turn of A that preferably uses the following grammar patterns in "
            "the response:\n"
            "- would on CEFR level A1): FORM: AFFIRMATIVE WITH 'LIKE'; USE: INVITATIONS WITH 'LIKE'; USE: WISHES AND "
            "PREFERENCES WITH 'LIKE'\n\n" +
                format_dialog(turns));
  auto fixed = verbalize_categorical(std::vector<CategoryLevel>{{"would", CefrLevel::A1}}, repo, Speaker::A, turns,
                                     {.fix_template_typo = true});
  EXPECT_NE(fixed.prompt.user.find("- would on CEFR level A1: FORM"), std::string::npos);
}

TEST(Verbalize, CategoricalEmptyExpansionWarnsAndThreePairsGiveThreeBullets) {
  SkillRepository small({{1, "S", "sub", "G", "C", CefrLevel::A1, SkillType::Form, {"e"}}});
  auto turns = four_turns();
  auto r = verbalize_categorical(std::vector<CategoryLevel>{{"sub", CefrLevel::B2}}, small, Speaker::A, turns);
  EXPECT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.prompt.user.find("- sub on CEFR level B2):\n"), std::string::npos);

  auto three = verbalize_categorical(
      std::vector<CategoryLevel>{{"would", CefrLevel::B1}, {"negation", CefrLevel::A2}, {"superlatives", CefrLevel::C1}},
      testing::fixture_repo(), Speaker::B, turns);
  std::size_t bullets = 0;
  for (const auto& line : text::split(three.prompt.user, '\n')) bullets += line.rfind("- ", 0) == 0;
  EXPECT_EQ(bullets, 3u);
  EXPECT_THROW(verbalize_categorical(std::vector<CategoryLevel>{{"nope", CefrLevel::A1}}, testing::fixture_repo(),
                                     Speaker::A, turns),
               LookupError);
}

// Properties: verbalization is deterministic, injective over distinct sets,
// and every listed skill is recoverable from the prompt text.
TEST(Verbalize, DeterministicInjectiveAndRecoverable) {
  const auto& repo = testing::fixture_repo();
  auto turns = four_turns();
  std::mt19937 rng(11);
  std::map<std::string, std::string> prompt_to_set;
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<SkillId> ids;
    const std::size_t n = 1 + rng() % 6;
    while (ids.size() < n) {
      SkillId id = static_cast<SkillId>(1 + rng() % 53);
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
    }
    auto cs = ConstraintSet::explicit_skills(ids);
    auto p = verbalize_explicit(cs, repo, Speaker::B, turns);
    ASSERT_EQ(p, verbalize_explicit(cs, repo, Speaker::B, turns));
    std::string listed;
    for (auto id : ids) listed += std::to_string(id) + ",";
    auto [it, inserted] = prompt_to_set.emplace(p.user, listed);
    if (!inserted) ASSERT_EQ(it->second, listed);

    std::vector<SkillId> recovered;
    for (const auto& line : text::split(p.user, '\n')) {
      if (line.rfind("- ", 0) != 0) continue;
      for (const auto& s : repo.skills()) {
        std::string expect = "- " + s.subcategory + " - " + s.guideword + ": " + s.can_do + " (CEFR " +
                             std::string(to_string(s.level)) + ")";
        if (line == expect) {
          recovered.push_back(s.id);
          break;
        }
      }
    }
    ASSERT_EQ(recovered, ids);
  }
}

TEST(Verbalize, LearnerPromptCarriesLevelDescription) {
  auto turns = four_turns();
  auto p = learner_prompt(Speaker::A, turns, CefrLevel::B1);
  EXPECT_NE(p.system.find(std::string(level_description(CefrLevel::B1))), std::string::npos);
  EXPECT_NE(p.user.find("an English learner on CEFR level B1 could produce:\nDialog:"), std::string::npos);
  EXPECT_EQ(p.system.rfind("Only output A's response using language on CEFR level B1.", 0), 0u);
  auto u = learner_prompt(Speaker::A, turns, std::nullopt);
  EXPECT_EQ(u.system, "Only output A's response.");
  EXPECT_EQ(u.user.find("CEFR"), std::string::npos);
}

}  // namespace
}  // namespace grammarctl::egp

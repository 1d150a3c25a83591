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

#include <cmath>
#include <random>

#include "grammarctl/analysis/cooccurrence.hpp"
#include "grammarctl/analysis/fisher.hpp"
#include "grammarctl/analysis/intervention.hpp"
#include "grammarctl/eval/metrics.hpp"
#include "grammarctl/eval/report.hpp"
#include "grammarctl/eval/suites.hpp"
#include "support/fixtures.hpp"
#include "support/planted.hpp"
#include "support/synthetic.hpp"

namespace gc = grammarctl;
using gc::testing::fixture_repo;

namespace {

gc::control::GenerationRecord record(gc::egp::ConstraintSet c, std::string response, gc::SkillSet detections,
                                     double latency = 1.0) {
  gc::control::GenerationRecord r{{}, std::move(c)};
  r.response = std::move(response);
  r.detections = std::move(detections);
  r.word_count = gc::text::word_count(r.response);
  r.latency_seconds = latency;
  return r;
}

gc::egp::ConstraintSet cat(std::vector<std::pair<std::string, gc::CefrLevel>> pairs) {
  std::vector<gc::egp::CategoryLevel> v;
  for (auto& [s, l] : pairs) v.push_back({s, l});
  return gc::egp::ConstraintSet::categorical(std::move(v));
}

}  // namespace

// ------------------------------------------------------------------- metrics

TEST(Satisfaction, TaskOneRatio) {
  const auto c = gc::egp::ConstraintSet::explicit_skills({1, 13, 36});
  EXPECT_NEAR(gc::eval::satisfaction_task1(c, {1, 36, 50}), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(gc::eval::satisfaction_task1(c, {}), 0.0);
  EXPECT_EQ(gc::eval::satisfaction_task1(record(c, "", {})), 0.0);
  EXPECT_THROW(gc::eval::satisfaction_task1(cat({{"would", gc::CefrLevel::B1}}), {}), gc::PreconditionError);
}

TEST(Satisfaction, TaskOneTakesOnlyMultiplesOfOneOverNAndIsMonotone) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 6;
    std::vector<gc::SkillId> ids;
    while (ids.size() < n) {
      const auto id = static_cast<gc::SkillId>(1 + rng() % 53);
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
    }
    const auto c = gc::egp::ConstraintSet::explicit_skills(ids);
    gc::SkillSet det;
    for (int k = 0; k < 5; ++k) det.insert(static_cast<gc::SkillId>(1 + rng() % 53));
    const double s = gc::eval::satisfaction_task1(c, det);
    EXPECT_NEAR(s * static_cast<double>(n), std::round(s * static_cast<double>(n)), 1e-9);
    auto more = det;
    more.insert(static_cast<gc::SkillId>(1 + rng() % 53));
    EXPECT_GE(gc::eval::satisfaction_task1(c, more), s);
    const auto c2 = cat({{"superlatives", gc::kAllLevels[rng() % 6]}, {"negation", gc::kAllLevels[rng() % 6]}});
    const auto a = gc::eval::satisfaction_task2(c2, det, fixture_repo());
    const auto b = gc::eval::satisfaction_task2(c2, more, fixture_repo());
    EXPECT_GE(b.satisfied, a.satisfied);
    EXPECT_GE(b.overshoot, a.overshoot);
  }
}

TEST(Satisfaction, TaskTwoExactLevelAndOvershoot) {
  const auto& repo = fixture_repo();
  EXPECT_EQ(gc::eval::satisfaction_task2(cat({{"would", gc::CefrLevel::B1}}), {22}, repo), (gc::eval::Task2Score{1, 0}));
  EXPECT_EQ(gc::eval::satisfaction_task2(cat({{"superlatives", gc::CefrLevel::A2}}), {5}, repo),
            (gc::eval::Task2Score{0, 1}));
  // superlatives@A2 met by 3; would@B1 met by 22 with 33 (B2) above it and
  // 13 (A1) below; negation@A1 unmet; 2 is A2 and adds nothing.
  const auto c = cat({{"superlatives", gc::CefrLevel::A2}, {"would", gc::CefrLevel::B1}, {"negation", gc::CefrLevel::A1}});
  EXPECT_EQ(gc::eval::satisfaction_task2(c, {2, 3, 13, 22, 33}, repo), (gc::eval::Task2Score{2, 1}));
}

TEST(Distinct2, HandCases) {
  const std::vector<std::vector<std::string>> g1 = {{"the cat sat", "the cat ran"}};
  EXPECT_DOUBLE_EQ(gc::eval::distinct_2(g1), 0.75);
  const std::vector<std::vector<std::string>> g2 = {{"a b c", "a b c", "a b c"}};
  EXPECT_DOUBLE_EQ(gc::eval::distinct_2(g2), 1.0 / 3.0);
  const std::vector<std::vector<std::string>> g3 = {{"The cat, sat!", "the CAT sat"}};
  EXPECT_DOUBLE_EQ(gc::eval::distinct_2(g3), 0.5);
  const std::vector<std::vector<std::string>> unique = {{"one two three four", "five six"}};
  EXPECT_DOUBLE_EQ(gc::eval::distinct_2(unique), 1.0);
  std::vector<std::string> warnings;
  const std::vector<std::vector<std::string>> tiny = {{"hello"}};
  EXPECT_EQ(gc::eval::distinct_2(tiny, &warnings), 0.0);
  EXPECT_EQ(warnings.size(), 1u);
  const std::vector<std::vector<std::string>> mixed = {{"the cat sat", "the cat ran"}, {"a b c", "a b c", "a b c"}};
  EXPECT_DOUBLE_EQ(gc::eval::distinct_2(mixed), (0.75 + 1.0 / 3.0) / 2.0);
}

TEST(Speed, WordsPerMinute) {
  EXPECT_DOUBLE_EQ(gc::eval::speed_wpm(55, 2.0), 1650.0);
  EXPECT_DOUBLE_EQ(gc::eval::speed_wpm(0, 3.0), 0.0);
  EXPECT_THROW(gc::eval::speed_wpm(10, 0.0), gc::PreconditionError);
}

TEST(Quality, StubJudgeAndMissingVerdicts) {
  const auto c = gc::egp::ConstraintSet::explicit_skills({22});
  std::vector<gc::control::GenerationRecord> records = {record(c, "I would go.", {22}), record(c, "Fine.", {})};
  gc::llm::QualityJudge five(std::make_shared<gc::llm::StubChatModel>("j", "5"));
  for (const auto& [d, m] : gc::eval::run_quality(records, five)) {
    EXPECT_DOUBLE_EQ(m.mean, 5.0);
    EXPECT_EQ(m.scored, 2u);
  }
  auto picky = std::make_shared<gc::llm::StubChatModel>("j", "no idea");
  picky->add(gc::llm::judge_messages({}, "I would go.", gc::llm::QualityDimension::Relevance).back().content, "4");
  gc::llm::QualityJudge judge(picky);
  const auto q = gc::eval::run_quality(records, judge);
  EXPECT_EQ(q.at(gc::llm::QualityDimension::Relevance).scored, 1u);
  EXPECT_EQ(q.at(gc::llm::QualityDimension::Relevance).missing, 1u);
  EXPECT_DOUBLE_EQ(q.at(gc::llm::QualityDimension::Relevance).mean, 4.0);
  EXPECT_EQ(q.at(gc::llm::QualityDimension::Appropriateness).scored, 0u);
}

// -------------------------------------------------------------------- suites

namespace {

const std::vector<gc::corpus::Dialogue>& labeled_corpus() {
  static const auto corpus = [] {
    gc::detector::DetectorSet dets = {
        {22, std::make_shared<gc::detector::PatternDetector>(R"(\bwould\b)")},
        {44, std::make_shared<gc::detector::PatternDetector>(R"(\b(cannot|can't)\b)")},
        {3, std::make_shared<gc::detector::PatternDetector>(R"(\bthe \w+est\b)")},
        {45, std::make_shared<gc::detector::PatternDetector>(R"(\b(wouldn't|would not)\b)")}};
    return gc::corpus::label_corpus(gc::testing::synthetic_dialogues(250, 21), dets);
  }();
  return corpus;
}

}  // namespace

TEST(Suites, TaskOneSizesDeterminismAndAugmentation) {
  gc::eval::SuiteOptions opt;
  opt.snippets = 40;
  opt.seed = 5;
  opt.pool = {3, 22, 44, 45, 2, 16, 13, 36};
  const auto a = gc::eval::build_task1_suite(labeled_corpus(), fixture_repo(), opt);
  const auto b = gc::eval::build_task1_suite(labeled_corpus(), fixture_repo(), opt);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].snippet, b[i].snippet);
    EXPECT_EQ(a[i].constraints, b[i].constraints);
  }
  std::set<std::size_t> sizes;
  std::size_t augmented = 0;
  for (const auto& c : a) {
    sizes.insert(c.constraints.size());
    for (auto id : c.constraints.skills()) EXPECT_TRUE(opt.pool.count(id));
    if (!c.augmented) continue;
    ++augmented;
    ASSERT_TRUE(c.snippet.reference && c.snippet.reference->skills);
    EXPECT_DOUBLE_EQ(gc::eval::satisfaction_task1(c.constraints, *c.snippet.reference->skills), 1.0);
  }
  EXPECT_EQ(sizes, (std::set<std::size_t>{1, 2, 3, 4, 6}));
  EXPECT_GT(augmented, 0u);
  EXPECT_EQ(a.size() - augmented, 40u * 5u);
}

TEST(Suites, TaskTwoSizeAndDeterminism) {
  gc::eval::SuiteOptions opt;
  opt.snippets = 500;
  const auto a = gc::eval::build_task2_suite(labeled_corpus(), fixture_repo(), opt);
  EXPECT_EQ(a.size(), 1500u);
  const auto b = gc::eval::build_task2_suite(labeled_corpus(), fixture_repo(), opt);
  for (std::size_t i = 0; i < a.size(); i += 97) EXPECT_EQ(a[i].constraints, b[i].constraints);
  for (const auto& c : a) {
    EXPECT_FALSE(c.constraints.is_explicit());
    for (const auto& p : c.constraints.pairs())
      EXPECT_FALSE(fixture_repo().filter(p.subcategory, p.level).empty());
  }
  opt.snippets = 0;
  EXPECT_TRUE(gc::eval::build_task2_suite(labeled_corpus(), fixture_repo(), opt).empty());
  const auto j = gc::eval::to_json(a[7]);
  EXPECT_EQ(gc::eval::test_case_from_json(j).constraints, a[7].constraints);
}

// -------------------------------------------------------------------- report

TEST(Report, MeanIsCaseWeightedAndRatesBounded) {
  std::vector<gc::control::GenerationRecord> rs;
  const auto one = gc::egp::ConstraintSet::explicit_skills({22});
  const auto two = gc::egp::ConstraintSet::explicit_skills({22, 44});
  rs.push_back(record(one, "I would.", {22}, 0.5));
  rs.push_back(record(one, "No.", {}, 0.5));
  rs.push_back(record(one, "I would go.", {22}, 0.5));
  rs.push_back(record(two, "I would go but cannot.", {22, 44}, 2.0));
  auto failed = record(two, "", {});
  failed.failed = true;
  rs.push_back(failed);
  for (auto& r : rs) r.strategy = gc::control::Strategy::Decode;
  gc::detector::DetectorSet audit = {{22, std::make_shared<gc::detector::PatternDetector>(R"(\bgo\b)")}};
  gc::eval::SummaryOptions opt;
  opt.detector_provenance = "pattern fixtures";
  opt.audit = &audit;
  const auto rep = gc::eval::summarize(rs, fixture_repo(), opt);
  double weighted = 0.0;
  std::size_t n = 0;
  for (const auto& [size, cell] : rep.task1) {
    weighted += cell.mean * static_cast<double>(cell.cases);
    n += cell.cases;
    EXPECT_GE(cell.mean, 0.0);
    EXPECT_LE(cell.mean, 1.0);
  }
  EXPECT_NEAR(*rep.task1_mean, weighted / static_cast<double>(n), 1e-12);
  EXPECT_NEAR(*rep.task1_mean, (1 + 0 + 1 + 1 + 0) / 5.0, 1e-12);
  EXPECT_NEAR(*rep.audit_task1_mean, (0 + 0 + 1 + 0.5 + 0) / 5.0, 1e-12);
  EXPECT_EQ(rep.failed, 1u);
  EXPECT_EQ(rep.per_skill.at(44).requested, 2u);
  EXPECT_EQ(rep.per_skill.at(44).satisfied, 1u);
  EXPECT_GT(*rep.speed_wpm, 0.0);

  gc::eval::EvaluationReport er{"task1", {rep}};
  const auto j = gc::eval::to_json(er);
  EXPECT_EQ(j["strategies"][0]["detector_provenance"], "pattern fixtures");
  const auto table = gc::eval::render_table(er);
  EXPECT_NE(table.find("decode"), std::string::npos);
  EXPECT_NE(table.find("60.0"), std::string::npos);
  const auto csv = gc::eval::per_skill_csv(er);
  EXPECT_NE(csv.find("decode,44,2,1,0.500000"), std::string::npos);
}

TEST(Report, TaskTwoSummary) {
  std::vector<gc::control::GenerationRecord> rs;
  rs.push_back(record(cat({{"would", gc::CefrLevel::B1}, {"negation", gc::CefrLevel::A1}}), "x", {22, 45}));
  rs.push_back(record(cat({{"superlatives", gc::CefrLevel::A2}}), "x", {3}));
  const auto rep = gc::eval::summarize(rs, fixture_repo());
  ASSERT_TRUE(rep.task2);
  EXPECT_EQ(rep.task2->pairs, 3u);
  EXPECT_EQ(rep.task2->satisfied_pairs, 2u);
  EXPECT_DOUBLE_EQ(rep.task2->category_rate(), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(rep.task2->overshoot_rate(), 0.5);
  EXPECT_FALSE(rep.task1_mean);
}

// -------------------------------------------------------------------- fisher

namespace {

// Exact hypergeometric probabilities from integer binomials.
double choose(unsigned n, unsigned k) {
  double r = 1;
  for (unsigned i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

double brute_force_p(unsigned a, unsigned b, unsigned c, unsigned d) {
  const unsigned r1 = a + b, r2 = c + d, c1 = a + c, n = r1 + r2;
  const double total = choose(n, c1);
  auto prob = [&](unsigned x) { return choose(r1, x) * choose(r2, c1 - x) / total; };
  const double obs = prob(a);
  double p = 0;
  for (unsigned x = 0; x <= std::min(r1, c1); ++x) {
    if (c1 - x > r2) continue;
    const double px = prob(x);
    if (px <= obs * (1 + 1e-7)) p += px;
  }
  return std::min(1.0, p);
}

}  // namespace

TEST(Fisher, ExhaustiveAgreementUpToTotal24) {
  std::size_t tables = 0;
  for (unsigned n = 1; n <= 24; ++n)
    for (unsigned a = 0; a <= n; ++a)
      for (unsigned b = 0; a + b <= n; ++b)
        for (unsigned c = 0; a + b + c <= n; ++c) {
          const unsigned d = n - a - b - c;
          const auto r = gc::analysis::fisher_exact({a, b, c, d});
          ASSERT_NEAR(r.p_value, brute_force_p(a, b, c, d), 1e-9) << a << ' ' << b << ' ' << c << ' ' << d;
          ++tables;
        }
  EXPECT_GT(tables, 20000u);
}

TEST(Fisher, KnownTables) {
  EXPECT_NEAR(gc::analysis::fisher_exact({5, 5, 5, 5}).p_value, 1.0, 1e-12);
  EXPECT_NEAR(gc::analysis::fisher_exact({10, 0, 0, 10}).p_value, 2.0 / 184756.0, 1e-15);
  const auto z = gc::analysis::fisher_exact({0, 0, 0, 0});
  EXPECT_TRUE(z.undefined);
  EXPECT_TRUE(std::isnan(z.odds_ratio));
  EXPECT_DOUBLE_EQ(gc::analysis::fisher_exact({2, 3, 4, 5}).odds_ratio, 10.0 / 12.0);
  EXPECT_DOUBLE_EQ(gc::analysis::fisher_exact({10, 0, 0, 10}).odds_ratio, 10.5 * 10.5 / 0.25);
}

// ------------------------------------------------------------- co-occurrence

namespace {

gc::corpus::Dialogue labeled(std::string id, std::vector<gc::SkillSet> skills) {
  gc::corpus::Dialogue d{std::move(id), gc::corpus::Source::Synthetic, {}};
  for (std::size_t i = 0; i < skills.size(); ++i)
    d.turns.push_back({i % 2 ? gc::Speaker::B : gc::Speaker::A, "t.", std::move(skills[i])});
  return d;
}

const gc::analysis::CoOccurrencePair& find(const std::vector<gc::analysis::CoOccurrencePair>& v, gc::SkillId a,
                                           gc::SkillId b) {
  return *std::find_if(v.begin(), v.end(), [&](const auto& p) { return p.g_pre == a && p.g_post == b; });
}

}  // namespace

TEST(CoOccurrence, WindowCoversNextTwoOtherSpeakerTurns) {
  const std::vector<gc::corpus::Dialogue> corpus = {labeled("d", {{1}, {2}, {}, {2}})};
  const auto pairs = gc::analysis::count_adjacency(corpus);
  const auto& p = find(pairs, 1, 2);
  EXPECT_EQ(p.exposure_with, 2u);
  EXPECT_EQ(p.count_with, 2u);
  EXPECT_EQ(p.exposure_without, 2u);
  EXPECT_EQ(p.count_without, 0u);
  // a third B turn falls outside the window
  const std::vector<gc::corpus::Dialogue> longer = {labeled("d", {{1}, {}, {}, {}, {}, {2}})};
  EXPECT_EQ(find(gc::analysis::count_adjacency(longer), 1, 2).count_with, 0u);
}

TEST(CoOccurrence, WindowsStopAtDialogueEnd) {
  const std::vector<gc::corpus::Dialogue> corpus = {labeled("x", {{}, {1}}), labeled("y", {{2}, {}})};
  const auto& p = find(gc::analysis::count_adjacency(corpus), 1, 2);
  EXPECT_EQ(p.exposure_with, 0u);
  EXPECT_EQ(p.exposure_without, 4u);
  EXPECT_EQ(p.count_without, 1u);
}

TEST(CoOccurrence, AbsentPreSkillGivesControlOnlyCounts) {
  const std::vector<gc::corpus::Dialogue> corpus = {labeled("x", {{}, {2}, {}, {2}})};
  const auto& p = find(gc::analysis::count_adjacency(corpus, {1, 2}), 1, 2);
  EXPECT_EQ(p.exposure_with, 0u);
  EXPECT_EQ(p.count_without, 2u);
  const auto rep = gc::analysis::test_all_pairs(gc::analysis::count_adjacency(corpus, {1, 2}));
  EXPECT_FALSE(find(rep.pairs, 1, 2).tested);
}

TEST(CoOccurrence, UnlabeledCorpusIsRejected) {
  auto d = labeled("x", {{}, {}});
  d.turns[1].skills.reset();
  const std::vector<gc::corpus::Dialogue> corpus = {d};
  EXPECT_THROW(gc::analysis::count_adjacency(corpus), gc::PreconditionError);
}

TEST(CoOccurrence, PlantedCountsMatchGeneratorBookkeeping) {
  const auto planted = gc::testing::planted_corpus(3);
  const auto& p = find(gc::analysis::count_adjacency(planted.dialogues), planted.g_pre, planted.g_post);
  EXPECT_EQ(p.exposure_with, planted.exposed);
  EXPECT_EQ(p.count_with, planted.exposed_with_post);
  EXPECT_EQ(p.exposure_without, planted.unexposed);
  EXPECT_EQ(p.count_without, planted.unexposed_with_post);
  EXPECT_GE(p.exposure_with, 500u);
}

TEST(CoOccurrence, BonferroniAndSummaryAgree) {
  const auto planted = gc::testing::planted_corpus(4);
  const auto rep = gc::analysis::test_all_pairs(gc::analysis::count_adjacency(planted.dialogues));
  EXPECT_EQ(rep.summary.tests, 64u);
  EXPECT_DOUBLE_EQ(rep.summary.threshold, 0.05 / 64);
  std::size_t sig = 0;
  for (const auto& p : rep.pairs) {
    EXPECT_GE(p.p_value, 0.0);
    EXPECT_LE(p.p_value, 1.0);
    EXPECT_EQ(p.significant, p.p_value < rep.summary.threshold);
    sig += p.significant;
  }
  EXPECT_EQ(sig, rep.summary.significant);
  EXPECT_TRUE(find(rep.pairs, planted.g_pre, planted.g_post).significant);
  EXPECT_NE(gc::analysis::pairs_csv(rep.pairs).find("1,2,"), std::string::npos);

  gc::analysis::CoOccurrencePair single;
  single.exposure_with = 10;
  single.exposure_without = 10;
  EXPECT_DOUBLE_EQ(gc::analysis::test_all_pairs({single}).summary.threshold, 0.05);
}

// --------------------------------------------------------------- intervention

TEST(LearnerSimulation, PromptVariants) {
  auto stub = std::make_shared<gc::llm::StubChatModel>("learner", "I like it.");
  const std::vector<gc::corpus::Turn> d = {{gc::Speaker::A, "Hi.", std::nullopt}, {gc::Speaker::B, "Hello.", std::nullopt}};
  EXPECT_EQ(gc::analysis::simulate_learner_turn(*stub, d, gc::CefrLevel::A2), "I like it.");
  const auto p = gc::egp::learner_prompt(gc::Speaker::A, d, gc::CefrLevel::A2);
  EXPECT_NE(p.system.find(std::string(gc::level_description(gc::CefrLevel::A2))), std::string::npos);
  EXPECT_EQ(gc::egp::learner_prompt(gc::Speaker::A, d, std::nullopt).user,
            gc::egp::unconstrained_prompt(gc::Speaker::A, d).user);
}

namespace {

// Replies with "cannot" at `after_pre` when the bot's last line used
// "would", else at `otherwise`.
class EchoLearner final : public gc::llm::ChatModel {
 public:
  EchoLearner(double after_pre, double otherwise, std::uint64_t seed)
      : after_pre_(after_pre), otherwise_(otherwise), rng_(seed) {}
  std::string id() const override { return "echo-learner"; }
  std::string complete(std::span<const gc::llm::ChatMessage> m, const gc::llm::ChatParams&) override {
    const auto& user = m.back().content;
    const auto last = user.substr(user.rfind('\n') + 1);
    const bool pre = std::regex_search(last, std::regex(R"(\bwould\b)"));
    return std::bernoulli_distribution(pre ? after_pre_ : otherwise_)(rng_) ? "I cannot agree." : "Sounds fine.";
  }

 private:
  double after_pre_, otherwise_;
  std::mt19937_64 rng_;
};

gc::analysis::BotTurn coin_bot(std::uint64_t seed, double steer_rate = 0.7) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  return [rng, steer_rate](const gc::corpus::DialogueSnippet&, std::optional<gc::SkillId> pre) -> std::string {
    const double p = pre ? steer_rate : 0.3;
    return std::bernoulli_distribution(p)(*rng) ? "I would like that." : "We went home.";
  };
}

const gc::detector::DetectorSet& pair_detectors() {
  static const gc::detector::DetectorSet d = {
      {22, std::make_shared<gc::detector::PatternDetector>(R"(\bwould\b)")},
      {44, std::make_shared<gc::detector::PatternDetector>(R"(\bcannot\b)")}};
  return d;
}

}  // namespace

TEST(Intervention, ConstructedExtremeIsSignificant) {
  EchoLearner learner(1.0, 0.0, 1);
  const std::vector<std::pair<gc::SkillId, gc::SkillId>> pairs = {{22, 44}};
  const auto corpus = gc::testing::synthetic_dialogues(30, 2);
  gc::analysis::InterventionOptions opt;
  opt.levels = {std::nullopt, gc::CefrLevel::A2};
  const auto rs = gc::analysis::run_intervention(pairs, corpus, coin_bot(1), learner, fixture_repo(), pair_detectors(), opt);
  ASSERT_EQ(rs.size(), 2u);
  for (const auto& r : rs) {
    EXPECT_FALSE(r.skipped);
    EXPECT_EQ(r.kept_treatment, 100u);
    EXPECT_EQ(r.kept_control, 100u);
    EXPECT_DOUBLE_EQ(r.rate_treatment(), 1.0);
    EXPECT_DOUBLE_EQ(r.rate_control(), 0.0);
    EXPECT_TRUE(r.significant);
    EXPECT_TRUE(std::isfinite(r.fisher.odds_ratio));
    for (const auto& t : r.treatment_turns) EXPECT_TRUE(gc::corpus::detect_in_turn(*pair_detectors().at(22), t));
  }
  EXPECT_FALSE(rs[0].too_difficult);
  EXPECT_TRUE(rs[1].too_difficult);  // 44 is B1
  const auto grid = gc::analysis::intervention_grid(rs);
  EXPECT_NE(grid.find("unconditional"), std::string::npos);
  EXPECT_NE(grid.find("*"), std::string::npos);
  EXPECT_NE(gc::analysis::intervention_csv(rs).find("22,44,unconditional,100,100,1.000000,0.000000"), std::string::npos);
}

TEST(Intervention, LowSuccessRateSkipsThePair) {
  EchoLearner learner(1.0, 0.0, 1);
  const std::vector<std::pair<gc::SkillId, gc::SkillId>> pairs = {{22, 44}};
  const auto corpus = gc::testing::synthetic_dialogues(30, 2);
  gc::analysis::InterventionOptions opt;
  opt.n = 20;
  const auto rs =
      gc::analysis::run_intervention(pairs, corpus, coin_bot(1, 0.02), learner, fixture_repo(), pair_detectors(), opt);
  ASSERT_EQ(rs.size(), 1u);
  EXPECT_TRUE(rs[0].skipped);
  EXPECT_FALSE(rs[0].significant);
  EXPECT_EQ(rs[0].attempts_treatment, 200u);
  EXPECT_NE(rs[0].diagnostic.find("within 200 attempts"), std::string::npos);
}

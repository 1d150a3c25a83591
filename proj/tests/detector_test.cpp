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

#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "grammarctl/detector/bundle.hpp"
#include "grammarctl/detector/curation.hpp"
#include "grammarctl/detector/evaluation.hpp"
#include "grammarctl/detector/training.hpp"
#include "support/fixtures.hpp"
#include "support/synthetic.hpp"
#include "support/temp_dir.hpp"

namespace grammarctl::detector {
namespace {

using testing::kSuperlativePattern;
using testing::kWouldNotPattern;
using testing::regex_label;

const std::string kTableOne = "It's the biggest room in the house.";

TrainOptions small_options() {
  TrainOptions o;
  o.shape = HeadShape{320, 64, 32};
  o.max_epochs = 12;
  return o;
}

// One superlative detector shared by several tests; training is the slow part.
struct Trained {
  std::vector<std::string> train, test;
  TrainReport report;
  Trained() {
    testing::SentenceGenerator gen(21);
    auto all = gen.sentences(900);
    train.assign(all.begin(), all.begin() + 700);
    test.assign(all.begin() + 700, all.end());
    report = train_detector(testing::regex_training_set(3, kSuperlativePattern, train), HashingEncoder::shared(),
                            small_options());
  }
};
const Trained& trained() {
  static const Trained t;
  return t;
}

TEST(Scoring, ZeroHeadGivesOneHalfEverywhere) {
  auto enc = HashingEncoder::shared();
  DetectorModel m(1, enc, MlpHead::zeros(default_head_shape(*enc)));
  auto scores = m.score_tokens(kTableOne);
  ASSERT_EQ(scores.size(), 9u);
  for (const auto& s : scores) EXPECT_EQ(s.probability, 0.5);
  EXPECT_FALSE(m.detect(kTableOne));
  EXPECT_THROW(m.score_tokens("   "), PreconditionError);
}

TEST(Scoring, DefaultHeadIsNearTargetSize) {
  auto enc = HashingEncoder::shared();
  const auto n = MlpHead::zeros(default_head_shape(*enc)).parameter_count();
  EXPECT_GT(n, 280000u);
  EXPECT_LT(n, 360000u);
}

TEST(Scoring, ScoresAreByteStableAcrossInstances) {
  EncoderConfig cfg;
  HashingEncoder a(cfg), b(cfg);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  auto head = MlpHead::random({static_cast<int>(a.output_dim()), 32, 16}, 5);
  DetectorModel m1(1, std::make_shared<HashingEncoder>(cfg), head), m2(1, std::make_shared<HashingEncoder>(cfg), head);
  auto s1 = m1.score_tokens(kTableOne), s2 = m2.score_tokens(kTableOne);
  for (std::size_t i = 0; i < s1.size(); ++i) EXPECT_EQ(s1[i].probability, s2[i].probability);
}

TEST(Detect, MaxPoolingOverTokenScores) {
  auto mk = [](std::vector<double> ps) {
    std::vector<TokenScore> out;
    for (double p : ps) out.push_back({text::Token{"t", 0, 1}, p});
    return out;
  };
  EXPECT_TRUE(detect_from_scores(mk({0.2, 0.7, 0.4})));
  EXPECT_FALSE(detect_from_scores(mk({0.2, 0.5, 0.4})));
  EXPECT_THROW(detect_from_scores(mk({})), PreconditionError);
  auto spans = spans_from_scores(4, mk({0.9, 0.8, 0.1, 0.6}));
  ASSERT_EQ(spans.size(), 2u);
  EXPECT_EQ(spans[0].token_end, 2u);
  EXPECT_DOUBLE_EQ(spans[0].probability, 0.9);
  EXPECT_EQ(spans[1].token_begin, 3u);
}

TEST(Detect, PatternDetectorRejectsBadRegex) {
  EXPECT_THROW(PatternDetector("(unclosed"), ValidationError);
  PatternDetector p(std::string{kWouldNotPattern});
  EXPECT_TRUE(p.detect("I wouldn't go."));
  EXPECT_FALSE(p.detect("I would go."));
}

// detect(r) must equal an independent max-over-scores recomputation.
TEST(Detect, EqualsRecomputedMaxPoolingOnTrainedModel) {
  const auto& t = trained();
  testing::SentenceGenerator gen(99);
  for (const auto& s : gen.sentences(200)) {
    auto scores = t.report.model->score_tokens(s);
    double best = 0;
    for (const auto& sc : scores) best = std::max(best, sc.probability);
    ASSERT_EQ(t.report.model->detect(s), best > 0.5) << s;
  }
}

TEST(Training, TableOneSentenceDetectedAndSurvivesConcatenation) {
  const auto& m = *trained().report.model;
  EXPECT_GT(max_probability(m.score_tokens(kTableOne)), 0.5);
  EXPECT_TRUE(m.detect(kTableOne));
  EXPECT_TRUE(m.detect(std::string("We arrived late. ") + kTableOne + " Anyway, we slept well."));
  EXPECT_FALSE(m.detect("My biggest room was small."));
  EXPECT_FALSE(m.detect("It was a big room in the house."));
}

TEST(Training, HeldOutAgreementWithRegexOracle) {
  const auto& t = trained();
  Confusion c;
  for (const auto& s : t.test) c.add(t.report.model->detect(s), regex_label(kSuperlativePattern, s));
  ASSERT_TRUE(c.precision());
  EXPECT_GE(*c.precision(), 0.9);
  EXPECT_GE(*c.recall(), 0.7);
  ASSERT_TRUE(t.report.validation_precision);
  EXPECT_EQ(t.report.folds.size(), 5u);
  EXPECT_EQ(t.report.model->metrics().validation_precision, t.report.validation_precision);
}

TEST(Training, EncoderIsNeverModified) {
  auto enc = HashingEncoder::shared();
  const auto before = enc->fingerprint();
  testing::SentenceGenerator gen(4);
  auto set = testing::regex_training_set(9, kWouldNotPattern, gen.sentences(300));
  auto o = small_options();
  o.max_epochs = 2;
  train_detector(set, enc, o);
  EXPECT_EQ(enc->fingerprint(), before);
}

TEST(Training, RejectsConflictsSingleClassAndTooFewPositives) {
  auto enc = HashingEncoder::shared();
  SkillTrainingSet conflict{1, {"a b", "c d"}, {"c d"}, Provenance::Manual};
  EXPECT_THROW(train_detector(conflict, enc), ValidationError);
  SkillTrainingSet single{1, std::vector<std::string>(12, "x"), {}, Provenance::Manual};
  for (int i = 0; i < 12; ++i) single.positives[static_cast<std::size_t>(i)] = "sentence " + std::to_string(i);
  EXPECT_THROW(train_detector(single, enc), ValidationError);
  SkillTrainingSet few{1, {"one", "two"}, {"three"}, Provenance::Manual};
  EXPECT_THROW(train_detector(few, enc), PreconditionError);
  EXPECT_THROW(validate(SkillTrainingSet{1, {}, {"n"}, Provenance::Manual}), ValidationError);
}

// Property: folds are disjoint and cover every example.
TEST(Training, FoldsPartitionTheExamples) {
  std::mt19937 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<bool> labels(5 + rng() % 200);
    for (auto&& l : labels) l = rng() % 3 == 0;
    const std::size_t k = 2 + rng() % 6;
    auto folds = make_folds(labels, k, trial);
    ASSERT_EQ(folds.size(), k);
    std::vector<int> hits(labels.size(), 0);
    for (const auto& f : folds)
      for (auto i : f) ++hits[i];
    for (int h : hits) ASSERT_EQ(h, 1);
  }
}

TEST(Bundle, RoundTripAndReproducibleManifest) {
  testing::TempDir dir;
  auto model = trained().report.model;
  model->set_test_precision(0.85);
  ModelSet set{{3, model}};
  save_bundle(dir.path() / "a", set);
  save_bundle(dir.path() / "b", set);
  EXPECT_EQ(testing::read_file(dir.path() / "a" / "manifest.json"),
            testing::read_file(dir.path() / "b" / "manifest.json"));
  EXPECT_EQ(testing::read_file(dir.path() / "a" / "skill_3.bin"), testing::read_file(dir.path() / "b" / "skill_3.bin"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "a" / "manifest.meta.json"));
  auto loaded = load_bundle(dir.path() / "a");
  ASSERT_EQ(loaded.size(), 1u);
  EXPECT_TRUE(loaded.at(3)->head() == model->head());
  EXPECT_EQ(loaded.at(3)->metrics(), model->metrics());
  EXPECT_TRUE(loaded.at(3)->deployable());
  auto s1 = model->score_tokens(kTableOne), s2 = loaded.at(3)->score_tokens(kTableOne);
  for (std::size_t i = 0; i < s1.size(); ++i) EXPECT_EQ(s1[i].probability, s2[i].probability);
  EXPECT_THROW(load_bundle(dir.path() / "missing"), LookupError);
  std::istringstream junk("nope");
  EXPECT_THROW(MlpHead::load(junk), ParseError);
}

TEST(Deployability, GateKeepsExactlyPrecisionAtLeastPointEight) {
  auto enc = HashingEncoder::shared();
  ModelSet models;
  const double precisions[] = {0.79, 0.80, 0.95, -1};
  for (int i = 0; i < 4; ++i) {
    auto m = std::make_shared<DetectorModel>(i, enc, MlpHead::zeros({320, 4, 2}));
    if (precisions[i] >= 0) m->set_test_precision(precisions[i]);
    models[i] = m;
  }
  auto kept = filter_deployable(models);
  EXPECT_EQ(kept.size(), 2u);
  EXPECT_TRUE(kept.count(1) && kept.count(2));
}

// ------------------------------------------------------------- curation

const egp::GrammarSkill& table_one_skill() { return testing::fixture_repo().at(3); }

TEST(CurateSynthetic, FixedStubYieldsSevenHundredFifty) {
  llm::StubChatModel stub("gen", "YES: It's the biggest room in the house.\nNO: It is a big room.\n"
                                 "yes: They are the cheapest shoes in the shop.\nsomething else\nNO: We like shoes.");
  auto r = curate_synthetic(table_one_skill(), stub);
  EXPECT_EQ(r.set.positives.size() + r.set.negatives.size(), kSyntheticExamples);
  EXPECT_EQ(r.set.provenance, Provenance::Synthetic);
  EXPECT_EQ(r.set.skill, 3);
  EXPECT_NO_THROW(validate(r.set));
}

TEST(CurateSynthetic, ClientFailureCarriesPartialSetAndResumes) {
  testing::TempDir dir;
  int calls = 0;
  llm::FunctionChatModel flaky("flaky", [&](auto, const auto&) -> std::string {
    if (++calls == 4) throw llm::TransportError("connection reset");
    return "YES: the best one " + std::to_string(calls) + "\nNO: a good one " + std::to_string(calls);
  });
  SyntheticOptions opt;
  opt.total = 20;
  opt.batch = 2;
  opt.partial_path = dir.path() / "partial.json";
  try {
    curate_synthetic(table_one_skill(), flaky, opt);
    FAIL();
  } catch (const CurationInterrupted& e) {
    EXPECT_EQ(e.partial().positives.size() + e.partial().negatives.size(), 6u);
    std::string token;
    auto saved = load_training_set(*opt.partial_path, &token);
    EXPECT_EQ(token, e.resume_token());
    opt.resume_from = saved;
    opt.resume_batch = parse_resume_batch(token);
    EXPECT_EQ(opt.resume_batch, 3u);
    auto done = curate_synthetic(table_one_skill(), flaky, opt);
    EXPECT_EQ(done.set.positives.size() + done.set.negatives.size(), 20u);
    EXPECT_EQ(done.set.positives.front(), saved.positives.front());
  }
}

TEST(CurateSynthetic, AugmentationIsSupersetAndWarnsWithoutOthers) {
  SkillTrainingSet own{1, {"p1", "p2"}, {"n1", "n2"}, Provenance::Synthetic};
  std::vector<SkillTrainingSet> others = {{2, {"q1", "q2", "q3", "p1"}, {}, Provenance::Synthetic}};
  auto a = augment_negatives(own, others, 7, 10);
  std::set<std::string> neg(a.set.negatives.begin(), a.set.negatives.end());
  for (const auto& n : own.negatives) EXPECT_TRUE(neg.count(n));
  EXPECT_EQ(a.added, 3u);
  EXPECT_FALSE(neg.count("p1"));
  EXPECT_NO_THROW(validate(a.set));
  auto none = augment_negatives(own, {}, 7);
  EXPECT_EQ(none.set.negatives, own.negatives);
  EXPECT_EQ(none.warnings.size(), 1u);
}

struct CurationCorpus {
  std::vector<std::string> sentences;
  CurationCorpus() {
    testing::SentenceGenerator gen(31);
    sentences = gen.sentences(1500);
  }
};
const std::vector<std::string>& curation_corpus() {
  static const CurationCorpus c;
  return c.sentences;
}

CurationOptions fast_curation() {
  CurationOptions o;
  o.train = small_options();
  o.train.max_epochs = 8;
  return o;
}

TEST(CurateManual, OracleAnnotatorConvergesWithinFiveIterations) {
  AnnotationStore store;
  FunctionAnnotator oracle("oracle", [](const std::string& s, SkillId) { return regex_label(kWouldNotPattern, s); });
  std::vector<std::string> regexes = {std::string(kWouldNotPattern)};
  auto r = curate_manual(7, curation_corpus(), regexes, store, oracle, HashingEncoder::shared(), fast_curation());
  EXPECT_EQ(r.status, CurationStatus::Converged);
  EXPECT_GE(r.iterations, 1u);
  EXPECT_LE(r.iterations, 5u);
  ASSERT_TRUE(r.best_precision);
  EXPECT_GE(*r.best_precision, 0.8);
  EXPECT_GE(r.set.positives.size(), kPreliminaryPositives);
  // Every label is persisted.
  EXPECT_EQ(store.records_for(7).size(), r.set.positives.size() + r.set.negatives.size());
}

TEST(CurateManual, ZeroMatchRegexSuspendsAskingForNewRegex) {
  testing::TempDir dir;
  AnnotationStore store;
  FunctionAnnotator oracle("oracle", [](const std::string&, SkillId) { return true; });
  auto opt = fast_curation();
  opt.state_file = dir.path() / "state.json";
  std::vector<std::string> regexes = {"zzzqqq"};
  auto r = curate_manual(7, curation_corpus(), regexes, store, oracle, HashingEncoder::shared(), opt);
  EXPECT_EQ(r.status, CurationStatus::NeedsRegex);
  EXPECT_EQ(oracle.answered(), 0u);
  auto state = nlohmann::json::parse(testing::read_file(*opt.state_file));
  EXPECT_EQ(state["status"], "needs-regex");
  EXPECT_THROW(curate_manual(7, curation_corpus(), {}, store, oracle, HashingEncoder::shared(), opt), PreconditionError);
}

TEST(CurateManual, ExhaustedAnnotatorSuspendsWithStateFile) {
  testing::TempDir dir;
  AnnotationStore store(dir.path() / "labels.jsonl");
  FunctionAnnotator limited(
      "human", [](const std::string& s, SkillId) { return regex_label(kWouldNotPattern, s); }, 30);
  auto opt = fast_curation();
  opt.state_file = dir.path() / "state.json";
  std::vector<std::string> regexes = {std::string(kWouldNotPattern)};
  auto r = curate_manual(7, curation_corpus(), regexes, store, limited, HashingEncoder::shared(), opt);
  EXPECT_EQ(r.status, CurationStatus::Suspended);
  EXPECT_TRUE(std::filesystem::exists(*opt.state_file));
  // Reopening the store replays the 30 labels, so a resumed run asks for new ones only.
  AnnotationStore reopened(dir.path() / "labels.jsonl");
  EXPECT_EQ(reopened.size(), 30u);
}

TEST(CurateManual, FiveNonImprovingRoundsStall) {
  AnnotationStore store;
  // Only regex candidates from the first batch are ever confirmed, so every
  // mined candidate is judged false and precision never improves.
  std::set<std::string> confirmed;
  for (const auto& s : curation_corpus())
    if (regex_label(kWouldNotPattern, s) && confirmed.size() < 60) confirmed.insert(s);
  FunctionAnnotator stingy("human", [&](const std::string& s, SkillId) { return confirmed.count(s) > 0; });
  auto opt = fast_curation();
  opt.candidates_per_iteration = 400;
  std::vector<std::string> regexes = {std::string(kWouldNotPattern)};
  auto r = curate_manual(7, curation_corpus(), regexes, store, stingy, HashingEncoder::shared(), opt);
  EXPECT_EQ(r.status, CurationStatus::Stalled);
  EXPECT_LE(r.iterations, 1 + kStallIterations);
}

std::shared_ptr<llm::FunctionChatModel> oracle_llm(std::vector<std::string> regex_replies) {
  auto idx = std::make_shared<std::size_t>(0);
  return std::make_shared<llm::FunctionChatModel>(
      "oracle-llm", [regex_replies, idx](std::span<const llm::ChatMessage> m, const llm::ChatParams&) -> std::string {
        const auto& user = m.back().content;
        if (user.find("regular expression") != std::string::npos)
          return regex_replies[std::min((*idx)++, regex_replies.size() - 1)];
        auto at = user.find("Sentence: ");
        return regex_label(kWouldNotPattern, user.substr(at + 10)) ? "YES" : "No.";
      });
}

TEST(CurateAutomatized, OracleStubReproducesManualCuration) {
  AnnotationStore manual_store, auto_store;
  FunctionAnnotator oracle("oracle", [](const std::string& s, SkillId) { return regex_label(kWouldNotPattern, s); });
  std::vector<std::string> regexes = {std::string(kWouldNotPattern)};
  const auto& skill = testing::fixture_repo().at(7);
  auto manual = curate_manual(7, curation_corpus(), regexes, manual_store, oracle, HashingEncoder::shared(),
                              fast_curation());
  auto client = oracle_llm({std::string(kWouldNotPattern)});
  AutomatizedOptions ao;
  ao.loop = fast_curation();
  auto automatic = curate_automatized(skill, *client, curation_corpus(), auto_store, HashingEncoder::shared(), ao);
  EXPECT_EQ(automatic.curation.status, manual.status);
  EXPECT_EQ(automatic.curation.set.positives, manual.set.positives);
  EXPECT_EQ(automatic.curation.set.negatives, manual.set.negatives);
  EXPECT_EQ(automatic.curation.set.provenance, Provenance::Automatized);
  EXPECT_EQ(automatic.regex_retries, 0u);
}

TEST(CurateAutomatized, InvalidRegexIsSkippedAndCounted) {
  AnnotationStore store;
  const auto& skill = testing::fixture_repo().at(7);
  auto client = oracle_llm({"(would", "[", "zzzqqq"});
  auto r = curate_automatized(skill, *client, curation_corpus(), store, HashingEncoder::shared(), {fast_curation(), 3});
  EXPECT_EQ(r.regex_retries, 2u);
  EXPECT_EQ(r.regexes, std::vector<std::string>{"zzzqqq"});
  EXPECT_EQ(r.curation.status, CurationStatus::NeedsRegex);
  EXPECT_GE(r.curation.warnings.size(), 2u);
}

TEST(CurateAutomatized, ClientFailureInterrupts) {
  AnnotationStore store;
  llm::FunctionChatModel down("down", [](auto, const auto&) -> std::string { throw llm::TransportError("503"); });
  EXPECT_THROW(curate_automatized(testing::fixture_repo().at(7), down, curation_corpus(), store,
                                  HashingEncoder::shared()),
               CurationInterrupted);
}

// ------------------------------------------------------ test precision

TEST(TestPrecision, RatioOfTrueLabelsInSample) {
  AnnotationStore store;
  std::vector<std::string> corpus;
  for (int i = 0; i < 20; ++i) {
    corpus.push_back("I would not go " + std::to_string(i));
    store.put({corpus.back(), 5, i < 18, "human", std::nullopt});
  }
  corpus.push_back("nothing here");
  PatternDetector det("would");
  auto r = evaluate_test_precision(det, 5, corpus, store);
  EXPECT_EQ(r.sampled, 20u);
  ASSERT_TRUE(r.precision);
  EXPECT_DOUBLE_EQ(*r.precision, 0.9);
  EXPECT_FALSE(r.no_support);
}

TEST(TestPrecision, NoDetectionsFlagged) {
  AnnotationStore store;
  std::vector<std::string> corpus = {"a b", "c d"};
  auto r = evaluate_test_precision(PatternDetector("zzz"), 5, corpus, store);
  EXPECT_TRUE(r.no_support);
  EXPECT_FALSE(r.precision);
  EXPECT_EQ(to_json(r)["flag"], "no-support");
}

// Sampled precision against the regex oracle tracks full-corpus precision.
TEST(TestPrecision, TracksOraclePrecisionOverFullCorpus) {
  const auto& t = trained();
  AnnotationStore store;
  FunctionAnnotator oracle("oracle", [](const std::string& s, SkillId) { return regex_label(kSuperlativePattern, s); });
  std::size_t tp = 0, det = 0;
  for (const auto& s : t.test)
    if (t.report.model->detect(s)) ++det, tp += regex_label(kSuperlativePattern, s);
  ASSERT_GT(det, 0u);
  const double full = static_cast<double>(tp) / static_cast<double>(det);
  auto r = evaluate_test_precision(*t.report.model, 3, t.test, store, &oracle);
  ASSERT_TRUE(r.precision);
  EXPECT_NEAR(*r.precision, full, 0.05);

  // A deliberately loose detector: with the whole detection set sampled the
  // estimate is exact.
  PatternDetector loose(R"(\bthe\b)");
  std::size_t ltp = 0, ldet = 0;
  for (const auto& s : t.test)
    if (loose.detect(s)) ++ldet, ltp += regex_label(kSuperlativePattern, s);
  auto lr = evaluate_test_precision(loose, 3, t.test, store, &oracle, t.test.size());
  EXPECT_NEAR(*lr.precision, static_cast<double>(ltp) / static_cast<double>(ldet), 1e-12);
}

TEST(Annotations, OneLabelPerKeyAndJsonlReplay) {
  testing::TempDir dir;
  {
    AnnotationStore s(dir.path() / "a.jsonl");
    s.put({"x", 1, true, "ann1", std::nullopt});
    s.put({"x", 1, false, "ann1", std::string("changed my mind")});
    s.put({"x", 1, true, "ann2", std::nullopt});
    EXPECT_EQ(s.size(), 2u);
  }
  AnnotationStore again(dir.path() / "a.jsonl");
  EXPECT_EQ(again.size(), 2u);
  EXPECT_EQ(again.label("x", 1), false);
  EXPECT_FALSE(again.label("x", 2));
  dir.write("bad.jsonl", "{oops\n");
  EXPECT_THROW(AnnotationStore(dir.path() / "bad.jsonl"), ParseError);
}

}  // namespace
}  // namespace grammarctl::detector

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
#include <optional>
#include <random>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"
#include "grammarctl/detector/annotation.hpp"
#include "grammarctl/detector/training.hpp"
#include "grammarctl/egp/repository.hpp"
#include "grammarctl/llm/chat.hpp"

namespace grammarctl::detector {

inline constexpr std::size_t kSyntheticExamples = 750;
inline constexpr std::size_t kPreliminaryPositives = 50;
inline constexpr double kCurationTargetPrecision = 0.80;
inline constexpr std::size_t kStallIterations = 5;

// Raised when the generation client fails mid-way. The partial set and a
// token to resume from travel with the exception.
class CurationInterrupted : public RuntimeFailure {
 public:
  CurationInterrupted(const std::string& what, SkillTrainingSet partial, std::string resume_token)
      : RuntimeFailure(what), partial_(std::move(partial)), token_(std::move(resume_token)) {}
  const SkillTrainingSet& partial() const { return partial_; }
  const std::string& resume_token() const { return token_; }

 private:
  SkillTrainingSet partial_;
  std::string token_;
};

inline void save_training_set(const std::filesystem::path& path, const SkillTrainingSet& set,
                              const std::string& resume_token = {}) {
  nlohmann::json j = {{"skill_id", set.skill},
                      {"provenance", to_string(set.provenance)},
                      {"positives", set.positives},
                      {"negatives", set.negatives}};
  if (!resume_token.empty()) j["resume_token"] = resume_token;
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw RuntimeFailure("cannot write " + path.string());
}

inline SkillTrainingSet load_training_set(const std::filesystem::path& path, std::string* resume_token = nullptr) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open " + path.string());
  try {
    auto j = nlohmann::json::parse(in);
    SkillTrainingSet s;
    s.skill = j.at("skill_id").get<SkillId>();
    s.provenance = parse_provenance(j.value("provenance", "manual"));
    s.positives = j.at("positives").get<std::vector<std::string>>();
    s.negatives = j.at("negatives").get<std::vector<std::string>>();
    if (resume_token) *resume_token = j.value("resume_token", "");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- synthetic

struct SyntheticOptions {
  std::size_t total = kSyntheticExamples;
  std::size_t batch = 50;
  std::size_t max_failed_batches = 5;  // batches yielding no parseable line
  std::optional<std::filesystem::path> partial_path;
  // Resume: examples gathered so far and the next batch index.
  std::optional<SkillTrainingSet> resume_from;
  std::size_t resume_batch = 0;
};

struct SyntheticCuration {
  SkillTrainingSet set;
  std::vector<std::string> warnings;
  std::size_t batches = 0;
};

inline egp::Prompt synthetic_prompt(const egp::GrammarSkill& skill, std::size_t n, std::size_t batch_index) {
  std::string user = "Grammar skill: " + skill.subcategory + " - " + skill.guideword + " (CEFR " +
                     std::string(to_string(skill.level)) + ")\nCan-do statement: " + skill.can_do + "\nExamples:";
  for (const auto& e : skill.examples) user += "\n- " + e;
  user += "\n\nWrite " + std::to_string(n) +
          " new, varied English sentences. Put each on its own line. Start a line with \"YES: \" when the sentence "
          "uses this grammar skill and with \"NO: \" when it does not. Write about as many YES lines as NO lines. "
          "(batch " + std::to_string(batch_index + 1) + ")";
  return {"You write example sentences for English grammar teaching.", std::move(user)};
}

// Parses "YES: ..." / "NO: ..." lines; other lines are ignored.
inline std::vector<std::pair<bool, std::string>> parse_labeled_lines(std::string_view reply) {
  std::vector<std::pair<bool, std::string>> out;
  for (const auto& raw : text::split(reply, '\n')) {
    auto line = text::trim(raw);
    while (!line.empty() && (line.front() == '-' || line.front() == '*')) line = text::trim(line.substr(1));
    for (auto [tag, label] : {std::pair{std::string_view("YES:"), true}, std::pair{std::string_view("NO:"), false}}) {
      if (line.size() > tag.size() && text::iequals(line.substr(0, tag.size()), tag)) {
        auto body = text::trim(line.substr(tag.size()));
        if (!body.empty()) out.emplace_back(label, std::string(body));
        break;
      }
    }
  }
  return out;
}

inline std::string synthetic_resume_token(SkillId skill, std::size_t batch, std::size_t count) {
  return "synthetic:" + std::to_string(skill) + ":" + std::to_string(batch) + ":" + std::to_string(count);
}

// Next batch index encoded in a resume token.
inline std::size_t parse_resume_batch(const std::string& token) {
  auto parts = text::split(token, ':');
  if (parts.size() != 4 || parts[0] != "synthetic") throw ValidationError("malformed resume token '" + token + "'");
  try {
    return std::stoul(parts[2]);
  } catch (const std::exception&) {
    throw ValidationError("malformed resume token '" + token + "'");
  }
}

// Requests labeled examples from the client in batches until `total` are
// collected. Repeated sentences are kept; a sentence given both labels keeps
// only its first label.
inline SyntheticCuration curate_synthetic(const egp::GrammarSkill& skill, llm::ChatModel& client,
                                          const SyntheticOptions& opt = {}) {
  SyntheticCuration out;
  out.set = opt.resume_from.value_or(SkillTrainingSet{});
  out.set.skill = skill.id;
  out.set.provenance = Provenance::Synthetic;
  std::set<std::string> pos(out.set.positives.begin(), out.set.positives.end());
  std::set<std::string> neg(out.set.negatives.begin(), out.set.negatives.end());
  auto count = [&] { return out.set.positives.size() + out.set.negatives.size(); };

  std::size_t failed = 0;
  for (std::size_t b = opt.resume_batch; count() < opt.total; ++b) {
    const std::size_t want = std::min(opt.batch, opt.total - count());
    std::string reply;
    try {
      reply = client.complete(synthetic_prompt(skill, want, b));
    } catch (const Error& e) {
      auto token = synthetic_resume_token(skill.id, b, count());
      if (opt.partial_path) save_training_set(*opt.partial_path, out.set, token);
      throw CurationInterrupted("synthetic curation for skill " + std::to_string(skill.id) + " stopped after " +
                                    std::to_string(count()) + " examples: " + e.what(),
                                out.set, token);
    }
    ++out.batches;
    auto lines = parse_labeled_lines(reply);
    if (lines.empty()) {
      out.warnings.push_back("batch " + std::to_string(b + 1) + " had no YES/NO lines");
      if (++failed >= opt.max_failed_batches) {
        out.warnings.push_back("gave up after " + std::to_string(failed) + " unusable batches with " +
                               std::to_string(count()) + " examples");
        break;
      }
      continue;
    }
    for (auto& [label, sentence] : lines) {
      if (count() >= opt.total) break;
      if (label ? neg.count(sentence) : pos.count(sentence)) {
        out.warnings.push_back("conflicting labels for \"" + sentence + "\"; first label kept");
        continue;
      }
      (label ? pos : neg).insert(sentence);
      (label ? out.set.positives : out.set.negatives).push_back(std::move(sentence));
    }
  }
  for (const auto& w : out.warnings) spdlog::warn("skill {}: {}", skill.id, w);
  return out;
}

struct Augmentation {
  SkillTrainingSet set;
  std::size_t added = 0;
  std::vector<std::string> warnings;
};

// Adds positives of other skills to the negative pool. Sentences that are
// positives of `set` itself are never added. `limit` caps the additions
// (default: as many as the set has positives).
inline Augmentation augment_negatives(const SkillTrainingSet& set, std::span<const SkillTrainingSet> others,
                                      std::uint64_t seed, std::optional<std::size_t> limit = std::nullopt) {
  Augmentation out{set, 0, {}};
  std::set<std::string> own(set.positives.begin(), set.positives.end());
  std::set<std::string> have(set.negatives.begin(), set.negatives.end());
  std::vector<std::string> pool;
  std::set<std::string> pooled;
  for (const auto& o : others) {
    if (o.skill == set.skill) continue;
    for (const auto& p : o.positives)
      if (!own.count(p) && !have.count(p) && pooled.insert(p).second) pool.push_back(p);
  }
  if (pool.empty()) {
    out.warnings.push_back("no positives of other skills available; negatives of skill " + std::to_string(set.skill) +
                           " not augmented");
    spdlog::warn("{}", out.warnings.back());
    return out;
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  const std::size_t n = std::min(pool.size(), limit.value_or(set.positives.size()));
  out.set.negatives.insert(out.set.negatives.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
  out.added = n;
  return out;
}

// ------------------------------------------------------------ manual loop

enum class CurationStatus : std::uint8_t { Converged, Stalled, Suspended, NeedsRegex };

inline std::string_view to_string(CurationStatus s) {
  switch (s) {
    case CurationStatus::Converged: return "converged";
    case CurationStatus::Stalled: return "stalled";
    case CurationStatus::Suspended: return "suspended";
    case CurationStatus::NeedsRegex: return "needs-regex";
  }
  return "suspended";
}

struct CurationOptions {
  std::size_t candidates_per_iteration = 100;  // regex candidates labeled per round
  std::size_t mined_per_iteration = 40;        // detector hits labeled per round
  std::size_t random_per_iteration = 20;       // unmatched sentences labeled per round
  std::size_t max_iterations = 30;
  std::uint64_t seed = 1;
  TrainOptions train{.folds = 5, .max_epochs = 10};
  std::optional<std::filesystem::path> state_file;
};

struct CurationResult {
  SkillTrainingSet set;
  CurationStatus status = CurationStatus::Suspended;
  std::size_t iterations = 0;           // rounds with a preliminary detector
  std::vector<double> precision_history;
  std::optional<double> best_precision;
  std::vector<std::string> warnings;
  std::shared_ptr<DetectorModel> detector;  // last preliminary detector, if any
};

inline nlohmann::json to_json(const CurationResult& r, std::span<const std::string> regexes) {
  return {{"skill_id", r.set.skill},
          {"status", to_string(r.status)},
          {"iterations", r.iterations},
          {"precision_history", r.precision_history},
          {"best_precision", r.best_precision ? nlohmann::json(*r.best_precision) : nlohmann::json(nullptr)},
          {"positives", r.set.positives.size()},
          {"negatives", r.set.negatives.size()},
          {"regexes", std::vector<std::string>(regexes.begin(), regexes.end())},
          {"warnings", r.warnings}};
}

namespace detail {

inline std::vector<std::regex> compile_all(std::span<const std::string> patterns, std::vector<std::string>& warnings) {
  std::vector<std::regex> out;
  for (const auto& p : patterns) {
    try {
      out.emplace_back(p, std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error& e) {
      warnings.push_back("invalid regex '" + p + "' skipped: " + e.what());
    }
  }
  return out;
}

inline SkillTrainingSet labeled_set(const AnnotationStore& store, SkillId skill, Provenance provenance,
                                    std::span<const std::string> order) {
  SkillTrainingSet s{skill, {}, {}, provenance};
  for (const auto& sentence : order) {
    if (auto l = store.label(sentence, skill)) (*l ? s.positives : s.negatives).push_back(sentence);
  }
  return s;
}

}  // namespace detail

// Iterative annotate-train-mine loop. Labels come from `store` when present
// and from `source` otherwise; every new label is written to the store.
inline CurationResult curate_loop(SkillId skill, std::span<const std::string> corpus,
                                  std::span<const std::string> regexes, AnnotationStore& store,
                                  AnnotationSource& source, std::shared_ptr<const HashingEncoder> encoder,
                                  Provenance provenance, const CurationOptions& opt = {}) {
  CurationResult r;
  r.set = {skill, {}, {}, provenance};
  if (regexes.empty()) throw PreconditionError("manual curation needs at least one candidate regex");
  auto patterns = detail::compile_all(regexes, r.warnings);

  // Deduplicated corpus in a seeded order so label requests are reproducible.
  std::vector<std::string> order;
  {
    std::set<std::string> seen;
    for (const auto& s : corpus)
      if (!text::trim(s).empty() && seen.insert(s).second) order.push_back(s);
    std::mt19937_64 rng(opt.seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::size_t> matched, unmatched;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const bool hit = std::any_of(patterns.begin(), patterns.end(),
                                 [&](const std::regex& re) { return std::regex_search(order[i], re); });
    (hit ? matched : unmatched).push_back(i);
  }

  auto suspend = [&](CurationStatus status, std::string why) {
    r.status = status;
    r.warnings.push_back(std::move(why));
    r.set = detail::labeled_set(store, skill, provenance, order);
    if (opt.state_file) {
      std::ofstream out(*opt.state_file);
      out << to_json(r, regexes).dump(2) << '\n';
    }
    return r;
  };
  if (matched.empty()) return suspend(CurationStatus::NeedsRegex, "no corpus sentence matches the candidate regexes");

  auto positives = [&] {
    std::size_t n = 0;
    for (const auto& rec : store.records_for(skill)) n += rec.label;
    return n;
  };
  auto label = [&](std::size_t i) -> std::optional<bool> { return obtain_label(store, &source, order[i], skill); };

  std::size_t next_match = 0, next_random = 0, stale = 0;
  std::mt19937_64 rng(opt.seed + 17);
  for (std::size_t round = 0; round < opt.max_iterations; ++round) {
    // Bootstrap from regex candidates until enough positives exist.
    if (positives() < kPreliminaryPositives) {
      if (next_match >= matched.size())
        return suspend(CurationStatus::NeedsRegex, "regex candidates exhausted with " + std::to_string(positives()) +
                                                       " positives; a new regex is needed");
      for (std::size_t k = 0; k < opt.candidates_per_iteration && next_match < matched.size(); ++k)
        if (!label(matched[next_match++])) return suspend(CurationStatus::Suspended, "annotation source exhausted");
      for (std::size_t k = 0; k < opt.random_per_iteration && next_random < unmatched.size(); ++k)
        if (!label(unmatched[next_random++])) return suspend(CurationStatus::Suspended, "annotation source exhausted");
      continue;
    }

    auto set = detail::labeled_set(store, skill, provenance, order);
    if (set.negatives.empty()) {
      for (std::size_t k = 0; k < opt.random_per_iteration && next_random < unmatched.size(); ++k)
        if (!label(unmatched[next_random++])) return suspend(CurationStatus::Suspended, "annotation source exhausted");
      set = detail::labeled_set(store, skill, provenance, order);
      if (set.negatives.empty()) return suspend(CurationStatus::Suspended, "no negative examples available");
    }
    auto train = opt.train;
    train.seed = opt.seed + round;
    r.detector = fit_detector(set, encoder, train);
    ++r.iterations;

    // Mine: unlabeled sentences the preliminary detector flags.
    std::vector<std::size_t> mined;
    for (std::size_t i = 0; i < order.size(); ++i)
      if (!store.label(order[i], skill) && r.detector->detect(order[i])) mined.push_back(i);
    std::shuffle(mined.begin(), mined.end(), rng);
    if (mined.size() > opt.mined_per_iteration) mined.resize(opt.mined_per_iteration);
    std::size_t hits = 0, judged = 0;
    for (auto i : mined) {
      auto l = label(i);
      if (!l) return suspend(CurationStatus::Suspended, "annotation source exhausted");
      ++judged;
      hits += *l;
    }
    for (std::size_t k = 0; k < opt.random_per_iteration && next_random < unmatched.size(); ++k)
      if (!label(unmatched[next_random++])) return suspend(CurationStatus::Suspended, "annotation source exhausted");

    if (judged == 0) {
      r.warnings.push_back("round " + std::to_string(r.iterations) + ": preliminary detector found no new candidates");
      if (++stale >= kStallIterations) {
        r.status = CurationStatus::Stalled;
        break;
      }
      continue;
    }
    const double precision = static_cast<double>(hits) / static_cast<double>(judged);
    r.precision_history.push_back(precision);
    if (!r.best_precision || precision > *r.best_precision) {
      r.best_precision = precision;
      stale = 0;
    } else {
      ++stale;
    }
    if (precision >= kCurationTargetPrecision) {
      r.status = CurationStatus::Converged;
      break;
    }
    if (stale >= kStallIterations) {
      r.status = CurationStatus::Stalled;
      break;
    }
  }
  if (r.status == CurationStatus::Suspended && r.iterations > 0) r.status = CurationStatus::Stalled;
  r.set = detail::labeled_set(store, skill, provenance, order);
  if (opt.state_file) {
    std::ofstream out(*opt.state_file);
    out << to_json(r, regexes).dump(2) << '\n';
  }
  return r;
}

inline CurationResult curate_manual(SkillId skill, std::span<const std::string> corpus,
                                    std::span<const std::string> regexes, AnnotationStore& store,
                                    AnnotationSource& annotator, std::shared_ptr<const HashingEncoder> encoder,
                                    const CurationOptions& opt = {}) {
  return curate_loop(skill, corpus, regexes, store, annotator, std::move(encoder), Provenance::Manual, opt);
}

// ------------------------------------------------------- automatized loop

inline egp::Prompt regex_request_prompt(const egp::GrammarSkill& skill) {
  std::string user = "Grammar skill: " + skill.subcategory + " - " + skill.guideword +
                     "\nCan-do statement: " + skill.can_do + "\nExamples:";
  for (const auto& e : skill.examples) user += "\n- " + e;
  user += "\n\nWrite one regular expression (ECMAScript syntax, case-insensitive) that matches sentences likely to "
          "use this grammar skill. Reply with the regular expression only.";
  return {"You help build datasets for grammar detection.", std::move(user)};
}

inline egp::Prompt judgment_prompt(const egp::GrammarSkill& skill, std::string_view sentence) {
  return {"Answer with YES or NO only.",
          "Does the following sentence use the grammar skill \"" + skill.subcategory + " - " + skill.guideword +
              "\" (" + skill.can_do + ")?\nSentence: " + std::string(sentence)};
}

inline std::optional<bool> parse_yes_no(std::string_view reply) {
  auto t = text::to_lower(text::trim(reply));
  if (t.rfind("yes", 0) == 0) return true;
  if (t.rfind("no", 0) == 0) return false;
  return std::nullopt;
}

// Labels sentences by asking a chat model a yes/no question built from the
// skill description. Client failures propagate.
class LlmAnnotator : public AnnotationSource {
 public:
  LlmAnnotator(llm::ChatModel& client, const egp::GrammarSkill& skill) : client_(client), skill_(skill) {}
  std::string name() const override { return "llm:" + client_.id(); }
  std::optional<bool> annotate(const std::string& sentence, SkillId) override {
    for (int attempt = 0; attempt < 2; ++attempt) {
      if (auto v = parse_yes_no(client_.complete(judgment_prompt(skill_, sentence)))) return v;
    }
    ++unparseable_;
    return false;
  }
  std::size_t unparseable() const { return unparseable_; }

 private:
  llm::ChatModel& client_;
  const egp::GrammarSkill& skill_;
  std::size_t unparseable_ = 0;
};

struct AutomatizedOptions {
  CurationOptions loop;
  std::size_t max_regex_attempts = 3;
};

struct AutomatizedResult {
  CurationResult curation;
  std::vector<std::string> regexes;
  std::size_t regex_retries = 0;
};

// Same loop as manual curation; the regex and each yes/no label come from
// the chat model.
inline AutomatizedResult curate_automatized(const egp::GrammarSkill& skill, llm::ChatModel& client,
                                            std::span<const std::string> corpus, AnnotationStore& store,
                                            std::shared_ptr<const HashingEncoder> encoder,
                                            const AutomatizedOptions& opt = {}) {
  AutomatizedResult out;
  std::vector<std::string> warnings;
  for (std::size_t attempt = 0; attempt < opt.max_regex_attempts && out.regexes.empty(); ++attempt) {
    std::string reply;
    try {
      reply = std::string(text::trim(client.complete(regex_request_prompt(skill))));
    } catch (const Error& e) {
      throw CurationInterrupted(std::string("regex request failed: ") + e.what(),
                                SkillTrainingSet{skill.id, {}, {}, Provenance::Automatized}, "");
    }
    if (reply.size() >= 2 && reply.front() == '`' && reply.back() == '`') reply = reply.substr(1, reply.size() - 2);
    try {
      std::regex(reply, std::regex::ECMAScript | std::regex::icase);
      out.regexes.push_back(reply);
    } catch (const std::regex_error& e) {
      ++out.regex_retries;
      warnings.push_back("invalid regex from model skipped: '" + reply + "' (" + e.what() + ")");
      spdlog::warn("skill {}: {}", skill.id, warnings.back());
    }
  }
  if (out.regexes.empty()) {
    out.curation.set = {skill.id, {}, {}, Provenance::Automatized};
    out.curation.status = CurationStatus::NeedsRegex;
    out.curation.warnings = std::move(warnings);
    out.curation.warnings.push_back("no valid regex after " + std::to_string(opt.max_regex_attempts) + " attempts");
    return out;
  }
  LlmAnnotator annotator(client, skill);
  try {
    out.curation = curate_loop(skill.id, corpus, out.regexes, store, annotator, std::move(encoder),
                               Provenance::Automatized, opt.loop);
  } catch (const llm::ChatError& e) {
    auto partial = detail::labeled_set(store, skill.id, Provenance::Automatized, corpus);
    throw CurationInterrupted(std::string("labeling request failed: ") + e.what(), std::move(partial),
                              "automatized:" + std::to_string(skill.id));
  }
  out.curation.warnings.insert(out.curation.warnings.begin(), warnings.begin(), warnings.end());
  return out;
}

}  // namespace grammarctl::detector

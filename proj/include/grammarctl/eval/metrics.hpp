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
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "grammarctl/control/generation.hpp"
#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"
#include "grammarctl/egp/constraints.hpp"
#include "grammarctl/llm/judge.hpp"

namespace grammarctl::eval {

// Share of explicitly requested skills found in the response.
inline double satisfaction_task1(const egp::ConstraintSet& c, const SkillSet& detections) {
  if (!c.is_explicit()) throw PreconditionError("task-1 satisfaction needs explicit constraints");
  std::size_t hit = 0;
  for (auto id : c.skills()) hit += detections.count(id);
  return static_cast<double>(hit) / static_cast<double>(c.skills().size());
}

inline double satisfaction_task1(const control::GenerationRecord& r) {
  return satisfaction_task1(r.constraints, r.detections);
}

struct Task2Score {
  std::size_t satisfied = 0;  // pairs with a detected skill of that subcategory at exactly that level
  std::size_t overshoot = 0;  // detected skills of a constrained subcategory above its level

  bool operator==(const Task2Score&) const = default;
};

inline Task2Score satisfaction_task2(const egp::ConstraintSet& c, const SkillSet& detections,
                                     const egp::SkillRepository& repo) {
  if (c.is_explicit()) throw PreconditionError("task-2 satisfaction needs categorical constraints");
  Task2Score out;
  for (const auto& p : c.pairs()) {
    bool met = false;
    for (auto id : detections) {
      const auto* s = repo.find(id);
      if (!s || !text::iequals(s->subcategory, p.subcategory)) continue;
      if (s->level == p.level) met = true;
      if (s->level > p.level) ++out.overshoot;
    }
    out.satisfied += met;
  }
  return out;
}

inline Task2Score satisfaction_task2(const control::GenerationRecord& r, const egp::SkillRepository& repo) {
  return satisfaction_task2(r.constraints, r.detections, repo);
}

// Unique over total word bigrams, pooled within each group (bigrams never
// span two responses) and averaged over groups. Groups without a bigram
// count as 0 and add a warning.
inline double distinct_2(std::span<const std::vector<std::string>> groups, std::vector<std::string>* warnings = nullptr) {
  if (groups.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw PreconditionError("distinct-2 group " + std::to_string(g) + " has no responses");
    std::set<std::pair<std::string, std::string>> unique;
    std::size_t total = 0;
    for (const auto& r : groups[g]) {
      const auto w = text::normalized_words(r);
      for (std::size_t i = 1; i < w.size(); ++i) {
        unique.emplace(w[i - 1], w[i]);
        ++total;
      }
    }
    if (total == 0) {
      if (warnings) warnings->push_back("distinct-2 group " + std::to_string(g) + " has fewer than 2 tokens; counted as 0");
      continue;
    }
    sum += static_cast<double>(unique.size()) / static_cast<double>(total);
  }
  return sum / static_cast<double>(groups.size());
}

// Responses grouped by constraint set (key order is deterministic).
inline std::vector<std::vector<std::string>> group_by_constraints(std::span<const control::GenerationRecord> records) {
  std::map<std::string, std::vector<std::string>> by_key;
  for (const auto& r : records)
    if (!r.failed) by_key[r.constraints.key()].push_back(r.response);
  std::vector<std::vector<std::string>> out;
  for (auto& [k, v] : by_key) out.push_back(std::move(v));
  return out;
}

inline double speed_wpm(std::size_t words, double latency_seconds) {
  if (!(latency_seconds > 0.0)) throw PreconditionError("unmeasured latency");
  return static_cast<double>(words) / (latency_seconds / 60.0);
}

inline double speed_wpm(const control::GenerationRecord& r) { return speed_wpm(r.word_count, r.latency_seconds); }

struct DimensionMean {
  double mean = 0.0;
  std::size_t scored = 0;
  std::size_t missing = 0;  // records whose verdict could not be obtained
};

using QualityScores = std::map<llm::QualityDimension, DimensionMean>;

// Four judge calls per record; failed verdicts are left out of the mean
// and counted.
inline QualityScores run_quality(std::span<const control::GenerationRecord> records, const llm::QualityJudge& judge) {
  QualityScores out;
  for (auto d : llm::kAllDimensions) out[d];
  for (const auto& r : records) {
    if (r.failed) continue;
    std::vector<corpus::Turn> dialog = r.snippet.context;
    for (auto d : llm::kAllDimensions) {
      auto& m = out[d];
      try {
        const auto v = judge.judge(dialog, r.response, d);
        m.mean += v.score;
        ++m.scored;
      } catch (const std::exception&) {
        ++m.missing;
      }
    }
  }
  for (auto& [d, m] : out)
    if (m.scored) m.mean /= static_cast<double>(m.scored);
  return out;
}

}  // namespace grammarctl::eval

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

#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "grammarctl/analysis/fisher.hpp"
#include "grammarctl/core/errors.hpp"
#include "grammarctl/corpus/dialogue.hpp"

namespace grammarctl::analysis {

// Number of the other speaker's turns after a g_pre turn that count as
// exposed to it.
inline constexpr std::size_t kExposureWindow = 2;

struct CoOccurrencePair {
  SkillId g_pre = 0;
  SkillId g_post = 0;
  std::size_t count_with = 0;      // exposed turns containing g_post
  std::size_t count_without = 0;   // unexposed turns containing g_post
  std::size_t exposure_with = 0;   // turns within the window after an other-speaker g_pre turn
  std::size_t exposure_without = 0;
  double p_value = 1.0;
  double odds_ratio = 0.0;
  double freq_difference = 0.0;
  bool tested = false;
  bool significant = false;

  Table2x2 table() const {
    return {count_with, exposure_with - count_with, count_without, exposure_without - count_without};
  }
};

// Turn-level counts for every ordered pair over `skills` (all labeled
// skills when empty). A turn is exposed to g_pre when it is one of the next
// two turns of its speaker after an other-speaker turn containing g_pre;
// all other turns are unexposed. Windows stay inside a dialogue.
inline std::vector<CoOccurrencePair> count_adjacency(std::span<const corpus::Dialogue> corpus, SkillSet skills = {}) {
  if (skills.empty())
    for (const auto& d : corpus)
      for (const auto& t : d.turns)
        if (t.skills) skills.insert(t.skills->begin(), t.skills->end());
  std::size_t turns = 0;
  std::map<SkillId, std::size_t> total, exposed;
  std::map<std::pair<SkillId, SkillId>, std::size_t> together;
  for (const auto& d : corpus) {
    std::vector<SkillSet> exposure(d.turns.size());
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
      if (!d.turns[i].skills) throw PreconditionError("dialogue '" + d.id + "' is not labeled");
      std::size_t seen = 0;
      for (std::size_t j = i + 1; j < d.turns.size() && seen < kExposureWindow; ++j) {
        if (d.turns[j].speaker == d.turns[i].speaker) continue;
        ++seen;
        for (auto g : *d.turns[i].skills)
          if (skills.count(g)) exposure[j].insert(g);
      }
    }
    for (std::size_t j = 0; j < d.turns.size(); ++j) {
      ++turns;
      for (auto g : *d.turns[j].skills)
        if (skills.count(g)) ++total[g];
      for (auto pre : exposure[j]) {
        ++exposed[pre];
        for (auto post : *d.turns[j].skills)
          if (skills.count(post)) ++together[{pre, post}];
      }
    }
  }
  std::vector<CoOccurrencePair> out;
  for (auto pre : skills)
    for (auto post : skills) {
      CoOccurrencePair p;
      p.g_pre = pre;
      p.g_post = post;
      p.exposure_with = exposed[pre];
      p.exposure_without = turns - p.exposure_with;
      p.count_with = together[{pre, post}];
      p.count_without = total[post] - p.count_with;
      out.push_back(p);
    }
  return out;
}

struct CoOccurrenceSummary {
  std::size_t tests = 0;
  double threshold = 0.05;
  std::size_t significant = 0;
  // The following are over significant pairs.
  double mean_odds_ratio = 0.0;
  double mean_freq_difference = 0.0;
  double share_freq_difference_above_005 = 0.0;
};

struct CoOccurrenceReport {
  std::vector<CoOccurrencePair> pairs;
  CoOccurrenceSummary summary;
};

// Fisher test per pair with both an exposed and an unexposed turn;
// Bonferroni over the tests actually run.
inline CoOccurrenceReport test_all_pairs(std::vector<CoOccurrencePair> pairs, double alpha = 0.05) {
  CoOccurrenceReport rep;
  for (auto& p : pairs) {
    if (p.exposure_with == 0 || p.exposure_without == 0) continue;
    const auto r = fisher_exact(p.table());
    p.tested = true;
    p.p_value = r.p_value;
    p.odds_ratio = r.odds_ratio;
    p.freq_difference = static_cast<double>(p.count_with) / static_cast<double>(p.exposure_with) -
                        static_cast<double>(p.count_without) / static_cast<double>(p.exposure_without);
    ++rep.summary.tests;
  }
  auto& s = rep.summary;
  s.threshold = s.tests ? alpha / static_cast<double>(s.tests) : alpha;
  std::size_t above = 0;
  for (auto& p : pairs) {
    p.significant = p.tested && p.p_value < s.threshold;
    if (!p.significant) continue;
    ++s.significant;
    s.mean_odds_ratio += p.odds_ratio;
    s.mean_freq_difference += p.freq_difference;
    above += p.freq_difference > 0.05;
  }
  if (s.significant) {
    const auto n = static_cast<double>(s.significant);
    s.mean_odds_ratio /= n;
    s.mean_freq_difference /= n;
    s.share_freq_difference_above_005 = static_cast<double>(above) / n;
  }
  rep.pairs = std::move(pairs);
  return rep;
}

inline nlohmann::json to_json(const CoOccurrencePair& p) {
  return {{"g_pre", p.g_pre},
          {"g_post", p.g_post},
          {"count_with", p.count_with},
          {"count_without", p.count_without},
          {"exposure_with", p.exposure_with},
          {"exposure_without", p.exposure_without},
          {"tested", p.tested},
          {"p_value", p.p_value},
          {"odds_ratio", p.odds_ratio},
          {"freq_difference", p.freq_difference},
          {"significant", p.significant}};
}

inline nlohmann::json to_json(const CoOccurrenceSummary& s) {
  return {{"tests", s.tests},
          {"threshold", s.threshold},
          {"significant", s.significant},
          {"mean_odds_ratio", s.mean_odds_ratio},
          {"mean_freq_difference", s.mean_freq_difference},
          {"share_freq_difference_above_0.05", s.share_freq_difference_above_005}};
}

inline std::string pairs_csv(std::span<const CoOccurrencePair> pairs) {
  std::ostringstream out;
  out << "g_pre,g_post,count_with,exposure_with,count_without,exposure_without,p_value,odds_ratio,freq_difference,"
         "significant\n";
  for (const auto& p : pairs) {
    if (!p.tested) continue;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%.6g,%.6g,%.6f", p.p_value, p.odds_ratio, p.freq_difference);
    out << p.g_pre << ',' << p.g_post << ',' << p.count_with << ',' << p.exposure_with << ',' << p.count_without << ','
        << p.exposure_without << ',' << buf << ',' << (p.significant ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace grammarctl::analysis

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
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "grammarctl/control/generation.hpp"
#include "grammarctl/corpus/labeling.hpp"
#include "grammarctl/eval/metrics.hpp"
#include "grammarctl/eval/suites.hpp"

namespace grammarctl::eval {

struct SizeCell {
  std::size_t cases = 0;
  double mean = 0.0;
};

struct SkillCell {
  std::size_t requested = 0;
  std::size_t satisfied = 0;
};

struct Task2Summary {
  std::size_t cases = 0;
  std::size_t pairs = 0;
  std::size_t satisfied_pairs = 0;
  std::size_t overshoot_skills = 0;
  std::size_t cases_with_overshoot = 0;

  double category_rate() const { return pairs ? static_cast<double>(satisfied_pairs) / static_cast<double>(pairs) : 0.0; }
  double overshoot_rate() const {
    return cases ? static_cast<double>(cases_with_overshoot) / static_cast<double>(cases) : 0.0;
  }
};

struct StrategyReport {
  std::string strategy;
  std::string model;
  std::size_t records = 0;
  std::size_t failed = 0;  // counted as unsatisfied
  std::map<std::size_t, SizeCell> task1;
  std::optional<double> task1_mean;
  std::optional<double> audit_task1_mean;
  std::optional<Task2Summary> task2;
  std::optional<QualityScores> quality;
  double distinct_2 = 0.0;
  std::optional<double> speed_wpm;  // mean over records with measured latency and at least one word
  std::map<SkillId, SkillCell> per_skill;
  std::string detector_provenance;
  std::vector<std::string> warnings;
};

struct SummaryOptions {
  std::string detector_provenance;
  const detector::DetectorSet* audit = nullptr;  // disjoint detectors for a second satisfaction figure
  const llm::QualityJudge* judge = nullptr;
};

inline StrategyReport summarize(std::span<const control::GenerationRecord> records, const egp::SkillRepository& repo,
                                const SummaryOptions& opt = {}) {
  StrategyReport rep;
  rep.records = records.size();
  rep.detector_provenance = opt.detector_provenance;
  if (!records.empty()) {
    rep.strategy = std::string(control::to_string(records.front().strategy));
    rep.model = records.front().model;
  }
  double t1_sum = 0.0, audit_sum = 0.0, wpm_sum = 0.0;
  std::size_t t1_n = 0, wpm_n = 0;
  for (const auto& r : records) {
    rep.failed += r.failed;
    if (r.constraints.is_explicit()) {
      const double s = r.failed ? 0.0 : satisfaction_task1(r);
      auto& cell = rep.task1[r.constraints.size()];
      cell.mean += s;
      ++cell.cases;
      t1_sum += s;
      ++t1_n;
      for (auto id : r.constraints.skills()) {
        auto& sc = rep.per_skill[id];
        ++sc.requested;
        sc.satisfied += !r.failed && r.detections.count(id);
      }
      if (opt.audit) {
        const auto audited = r.failed ? SkillSet{} : corpus::detect_skills(r.response, *opt.audit);
        audit_sum += satisfaction_task1(r.constraints, audited);
      }
    } else {
      if (!rep.task2) rep.task2.emplace();
      auto& t2 = *rep.task2;
      ++t2.cases;
      t2.pairs += r.constraints.size();
      if (!r.failed) {
        const auto s = satisfaction_task2(r, repo);
        t2.satisfied_pairs += s.satisfied;
        t2.overshoot_skills += s.overshoot;
        t2.cases_with_overshoot += s.overshoot > 0;
      }
    }
    if (!r.failed && r.latency_seconds > 0.0 && r.word_count > 0) {
      wpm_sum += speed_wpm(r);
      ++wpm_n;
    }
  }
  for (auto& [size, cell] : rep.task1) cell.mean /= static_cast<double>(cell.cases);
  if (t1_n) {
    rep.task1_mean = t1_sum / static_cast<double>(t1_n);
    if (opt.audit) rep.audit_task1_mean = audit_sum / static_cast<double>(t1_n);
  }
  if (wpm_n) rep.speed_wpm = wpm_sum / static_cast<double>(wpm_n);
  const auto groups = group_by_constraints(records);
  rep.distinct_2 = distinct_2(groups, &rep.warnings);
  if (opt.judge) rep.quality = run_quality(records, *opt.judge);
  return rep;
}

inline nlohmann::json to_json(const StrategyReport& r) {
  nlohmann::json j = {{"strategy", r.strategy},
                      {"model", r.model},
                      {"records", r.records},
                      {"failed", r.failed},
                      {"distinct_2", r.distinct_2},
                      {"detector_provenance", r.detector_provenance}};
  if (!r.task1.empty()) {
    nlohmann::json by_size = nlohmann::json::object();
    for (const auto& [size, c] : r.task1) by_size[std::to_string(size)] = {{"cases", c.cases}, {"satisfaction", c.mean}};
    j["task1"] = {{"by_size", by_size}, {"mean", *r.task1_mean}};
    if (r.audit_task1_mean) j["task1"]["audit_mean"] = *r.audit_task1_mean;
    nlohmann::json skills = nlohmann::json::object();
    for (const auto& [id, c] : r.per_skill) skills[std::to_string(id)] = {{"requested", c.requested}, {"satisfied", c.satisfied}};
    j["per_skill"] = skills;
  }
  if (r.task2)
    j["task2"] = {{"cases", r.task2->cases},
                  {"pairs", r.task2->pairs},
                  {"satisfied_pairs", r.task2->satisfied_pairs},
                  {"category_satisfaction", r.task2->category_rate()},
                  {"overshoot_skills", r.task2->overshoot_skills},
                  {"overshoot_rate", r.task2->overshoot_rate()}};
  if (r.quality) {
    nlohmann::json q = nlohmann::json::object();
    for (const auto& [d, m] : *r.quality)
      q[std::string(llm::to_string(d))] = {{"mean", m.mean}, {"scored", m.scored}, {"missing", m.missing}};
    j["quality"] = q;
  }
  j["speed_wpm"] = r.speed_wpm ? nlohmann::json(*r.speed_wpm) : nlohmann::json(nullptr);
  if (!r.warnings.empty()) j["warnings"] = r.warnings;
  return j;
}

struct EvaluationReport {
  std::string task;  // "task1" or "task2"
  std::vector<StrategyReport> strategies;
};

inline nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json s = nlohmann::json::array();
  for (const auto& x : r.strategies) s.push_back(to_json(x));
  return {{"task", r.task}, {"strategies", s}};
}

namespace detail {

inline std::string cell(std::optional<double> v, const char* fmt = "%.1f") {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, fmt, *v);
  return buf;
}

inline std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.insert(0, w - s.size(), ' ');
  return s;
}

}  // namespace detail

// One row per strategy: satisfaction (%) by constraint count and mean,
// judge means, distinct-2 and words per minute.
inline std::string render_table(const EvaluationReport& r) {
  std::ostringstream out;
  std::vector<std::string> head = {"strategy"};
  if (r.task == "task1")
    for (auto n : kTask1Sizes) head.push_back(std::to_string(n));
  else
    head.insert(head.end(), {"cat.sat", "overshoot"});
  head.insert(head.end(), {"mean", "A", "R", "CR", "GC", "dist-2", "wpm"});
  std::vector<std::vector<std::string>> rows;
  for (const auto& s : r.strategies) {
    std::vector<std::string> row = {s.strategy};
    if (r.task == "task1") {
      for (auto n : kTask1Sizes) {
        auto it = s.task1.find(n);
        row.push_back(it == s.task1.end() ? "-" : detail::cell(100.0 * it->second.mean));
      }
      row.push_back(s.task1_mean ? detail::cell(100.0 * *s.task1_mean) : "-");
    } else {
      row.push_back(s.task2 ? detail::cell(100.0 * s.task2->category_rate()) : "-");
      row.push_back(s.task2 ? detail::cell(100.0 * s.task2->overshoot_rate()) : "-");
      row.push_back(s.task2 ? detail::cell(static_cast<double>(s.task2->satisfied_pairs) /
                                               static_cast<double>(std::max<std::size_t>(1, s.task2->cases)),
                                           "%.2f")
                            : "-");
    }
    for (auto d : llm::kAllDimensions) {
      if (s.quality && s.quality->at(d).scored)
        row.push_back(detail::cell(s.quality->at(d).mean, "%.2f"));
      else
        row.push_back("-");
    }
    row.push_back(detail::cell(s.distinct_2, "%.3f"));
    row.push_back(detail::cell(s.speed_wpm, "%.0f"));
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(head.size());
  for (std::size_t c = 0; c < head.size(); ++c) {
    width[c] = head[c].size();
    for (const auto& row : rows) width[c] = std::max(width[c], row[c].size());
  }
  auto line = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        out << row[c] << std::string(width[c] - row[c].size(), ' ');
      } else {
        out << "  " << detail::pad(row[c], width[c]);
      }
    }
    out << '\n';
  };
  line(head);
  for (const auto& row : rows) line(row);
  return out.str();
}

inline std::string per_skill_csv(const EvaluationReport& r) {
  std::ostringstream out;
  out << "strategy,skill_id,requested,satisfied,rate\n";
  for (const auto& s : r.strategies)
    for (const auto& [id, c] : s.per_skill) {
      char rate[32];
      std::snprintf(rate, sizeof rate, "%.6f", static_cast<double>(c.satisfied) / static_cast<double>(c.requested));
      out << s.strategy << ',' << id << ',' << c.requested << ',' << c.satisfied << ',' << rate << '\n';
    }
  return out.str();
}

using Progress = std::function<void(std::size_t done, std::size_t total)>;

inline std::vector<control::GenerationRecord> run_cases(control::Generator& gen, std::span<const TestCase> cases,
                                                        const egp::SkillRepository& repo,
                                                        const detector::DetectorSet& detectors,
                                                        const Progress& progress = {}) {
  std::vector<control::GenerationRecord> out;
  out.reserve(cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) {
    out.push_back(control::generate_record(gen, cases[i].snippet, cases[i].constraints, repo, detectors));
    if (progress) progress(i + 1, cases.size());
  }
  return out;
}

}  // namespace grammarctl::eval

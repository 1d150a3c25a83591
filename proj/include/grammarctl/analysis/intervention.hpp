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

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "grammarctl/analysis/cooccurrence.hpp"
#include "grammarctl/analysis/fisher.hpp"
#include "grammarctl/control/generation.hpp"
#include "grammarctl/corpus/labeling.hpp"
#include "grammarctl/corpus/sampling.hpp"
#include "grammarctl/egp/prompts.hpp"
#include "grammarctl/llm/chat.hpp"

namespace grammarctl::analysis {

// One learner reply to `dialogue` (the last turn is the bot's). Without a
// level the plain next-turn prompt is used.
inline std::string simulate_learner_turn(llm::ChatModel& model, std::span<const corpus::Turn> dialogue,
                                         std::optional<CefrLevel> level, const llm::ChatParams& params = {}) {
  if (dialogue.empty()) throw PreconditionError("learner simulation needs at least the bot turn");
  const auto from = dialogue.size() > corpus::kSnippetTurns ? dialogue.size() - corpus::kSnippetTurns : 0;
  const auto window = dialogue.subspan(from);
  const auto prompt = egp::learner_prompt(other(window.back().speaker), window, level);
  return model.complete(prompt, params);
}

// Produces the bot turn for a snippet, steered towards `g_pre` when given
// and unconstrained otherwise.
using BotTurn = std::function<std::string(const corpus::DialogueSnippet&, std::optional<SkillId> g_pre)>;

// Bot turns from a constrained generator plus a chat model for the
// unconstrained control turns.
inline BotTurn generator_bot(control::Generator& gen, std::shared_ptr<llm::ChatModel> plain) {
  return [&gen, plain = std::move(plain)](const corpus::DialogueSnippet& s, std::optional<SkillId> g_pre) {
    if (!g_pre) return plain->complete(egp::unconstrained_prompt(s.next_speaker, s.context), {});
    return gen.generate(s, egp::ConstraintSet::explicit_skills({*g_pre})).text;
  };
}

struct InterventionOptions {
  std::size_t n = 100;                     // kept generations per condition
  double success_floor = 0.10;             // below this keep rate the pair is skipped
  std::vector<std::optional<CefrLevel>> levels = {std::nullopt};
  double alpha = 0.05;                     // Bonferroni over the tests run
  std::uint64_t seed = 1;
};

struct InterventionResult {
  SkillId g_pre = 0;
  SkillId g_post = 0;
  std::optional<CefrLevel> level;
  std::size_t attempts_treatment = 0;
  std::size_t attempts_control = 0;
  std::size_t kept_treatment = 0;
  std::size_t kept_control = 0;
  std::size_t post_treatment = 0;  // learner replies containing g_post
  std::size_t post_control = 0;
  std::vector<std::string> treatment_turns;  // kept steered bot turns
  FisherResult fisher;
  bool skipped = false;
  bool significant = false;
  bool too_difficult = false;  // g_post is above the simulated learner's level
  std::string diagnostic;

  double rate_treatment() const {
    return kept_treatment ? static_cast<double>(post_treatment) / static_cast<double>(kept_treatment) : 0.0;
  }
  double rate_control() const {
    return kept_control ? static_cast<double>(post_control) / static_cast<double>(kept_control) : 0.0;
  }
};

inline std::string level_name(const std::optional<CefrLevel>& l) {
  return l ? std::string(to_string(*l)) : std::string("unconditional");
}

// For each pair and level: bot turns steered to g_pre are kept when g_pre
// is detected in them, unconstrained bot turns are kept when it is not;
// a simulated learner answers each kept turn and g_post presence in the
// answers is compared between the two conditions.
inline std::vector<InterventionResult> run_intervention(std::span<const std::pair<SkillId, SkillId>> pairs,
                                                        std::span<const corpus::Dialogue> corpus, const BotTurn& bot,
                                                        llm::ChatModel& learner, const egp::SkillRepository& repo,
                                                        const detector::DetectorSet& detectors,
                                                        const InterventionOptions& opt = {}) {
  if (opt.n == 0) throw ValidationError("intervention needs n > 0");
  if (!(opt.success_floor > 0.0 && opt.success_floor <= 1.0)) throw ValidationError("success floor must lie in (0, 1]");
  const auto positions = corpus::snippet_positions(corpus);
  if (positions.empty()) throw PreconditionError("no dialogue has enough turns for a snippet");
  const auto budget = static_cast<std::size_t>(std::ceil(static_cast<double>(opt.n) / opt.success_floor));

  std::vector<InterventionResult> out;
  for (const auto& [pre, post] : pairs) {
    auto pre_det = detectors.find(pre);
    auto post_det = detectors.find(post);
    if (pre_det == detectors.end() || post_det == detectors.end())
      throw PreconditionError("pair (" + std::to_string(pre) + ", " + std::to_string(post) + ") lacks a detector");
    for (const auto& level : opt.levels) {
      InterventionResult r;
      r.g_pre = pre;
      r.g_post = post;
      r.level = level;
      if (level)
        if (const auto* s = repo.find(post)) r.too_difficult = s->level > *level;
      std::mt19937_64 rng(opt.seed ^ (static_cast<std::uint64_t>(pre) << 40) ^ (static_cast<std::uint64_t>(post) << 16) ^
                          (level ? static_cast<std::uint64_t>(*level) + 1 : 0));
      std::uniform_int_distribution<std::size_t> pick(0, positions.size() - 1);

      auto condition = [&](bool treatment, std::size_t& attempts, std::size_t& kept, std::size_t& hits) {
        while (kept < opt.n && attempts < budget) {
          ++attempts;
          const auto& [d, start] = positions[pick(rng)];
          const auto snippet = corpus::make_snippet(corpus[d], start);
          std::string turn;
          try {
            turn = bot(snippet, treatment ? std::optional<SkillId>(pre) : std::nullopt);
          } catch (const PreconditionError&) {
            throw;
          } catch (const std::exception&) {
            continue;
          }
          const bool has_pre = corpus::detect_in_turn(*pre_det->second, turn);
          if (has_pre != treatment) continue;
          auto dialog = snippet.context;
          dialog.push_back({snippet.next_speaker, turn, std::nullopt});
          std::string reply;
          try {
            reply = simulate_learner_turn(learner, dialog, level);
          } catch (const PreconditionError&) {
            throw;
          } catch (const std::exception&) {
            continue;
          }
          ++kept;
          if (treatment) r.treatment_turns.push_back(turn);
          hits += corpus::detect_in_turn(*post_det->second, reply);
        }
      };
      condition(true, r.attempts_treatment, r.kept_treatment, r.post_treatment);
      if (r.kept_treatment == opt.n) condition(false, r.attempts_control, r.kept_control, r.post_control);

      if (r.kept_treatment < opt.n || r.kept_control < opt.n) {
        r.skipped = true;
        char buf[160];
        std::snprintf(buf, sizeof buf, "kept %zu/%zu treatment and %zu/%zu control turns within %zu attempts each",
                      r.kept_treatment, r.attempts_treatment, r.kept_control, r.attempts_control, budget);
        r.diagnostic = buf;
      } else {
        r.fisher = fisher_exact({r.post_treatment, r.kept_treatment - r.post_treatment, r.post_control,
                                 r.kept_control - r.post_control});
      }
      out.push_back(std::move(r));
    }
  }
  std::size_t tests = 0;
  for (const auto& r : out) tests += !r.skipped;
  const double threshold = tests ? opt.alpha / static_cast<double>(tests) : opt.alpha;
  for (auto& r : out) r.significant = !r.skipped && r.fisher.p_value < threshold;
  return out;
}

inline nlohmann::json to_json(const InterventionResult& r) {
  nlohmann::json j = {{"g_pre", r.g_pre},
                      {"g_post", r.g_post},
                      {"level", level_name(r.level)},
                      {"attempts_treatment", r.attempts_treatment},
                      {"attempts_control", r.attempts_control},
                      {"kept_treatment", r.kept_treatment},
                      {"kept_control", r.kept_control},
                      {"rate_treatment", r.rate_treatment()},
                      {"rate_control", r.rate_control()},
                      {"skipped", r.skipped},
                      {"significant", r.significant},
                      {"too_difficult", r.too_difficult}};
  if (!r.skipped) {
    j["p_value"] = r.fisher.p_value;
    j["odds_ratio"] = r.fisher.odds_ratio;
  }
  if (!r.diagnostic.empty()) j["diagnostic"] = r.diagnostic;
  return j;
}

inline std::string intervention_csv(std::span<const InterventionResult> results) {
  std::ostringstream out;
  out << "g_pre,g_post,level,kept_treatment,kept_control,rate_treatment,rate_control,p_value,odds_ratio,significant,"
         "too_difficult,skipped\n";
  for (const auto& r : results) {
    char buf[160];
    if (r.skipped)
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,,", r.rate_treatment(), r.rate_control());
    else
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6g,%.6g", r.rate_treatment(), r.rate_control(), r.fisher.p_value,
                    r.fisher.odds_ratio);
    out << r.g_pre << ',' << r.g_post << ',' << level_name(r.level) << ',' << r.kept_treatment << ',' << r.kept_control
        << ',' << buf << ',' << r.significant << ',' << r.too_difficult << ',' << r.skipped << '\n';
  }
  return out.str();
}

// Rows are pairs, columns levels. A cell holds the odds ratio when the
// effect is significant, "." when not, "skip" when skipped; "*" marks a
// g_post above the learner's level.
inline std::string intervention_grid(std::span<const InterventionResult> results) {
  std::vector<std::string> cols;
  std::map<std::pair<SkillId, SkillId>, std::map<std::string, std::string>> cells;
  std::vector<std::pair<SkillId, SkillId>> rows;
  for (const auto& r : results) {
    const auto col = level_name(r.level);
    if (std::find(cols.begin(), cols.end(), col) == cols.end()) cols.push_back(col);
    const std::pair key{r.g_pre, r.g_post};
    if (!cells.count(key)) rows.push_back(key);
    std::string v;
    if (r.skipped) {
      v = "skip";
    } else if (r.significant) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", r.fisher.odds_ratio);
      v = buf;
    } else {
      v = ".";
    }
    if (r.too_difficult) v += "*";
    cells[key][col] = v;
  }
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-12s", "pair");
  out << buf;
  for (const auto& c : cols) {
    std::snprintf(buf, sizeof buf, " %13s", c.c_str());
    out << buf;
  }
  out << '\n';
  for (const auto& key : rows) {
    std::snprintf(buf, sizeof buf, "%-12s", (std::to_string(key.first) + "->" + std::to_string(key.second)).c_str());
    out << buf;
    for (const auto& c : cols) {
      auto it = cells[key].find(c);
      std::snprintf(buf, sizeof buf, " %13s", it == cells[key].end() ? "" : it->second.c_str());
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace grammarctl::analysis

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
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"
#include "grammarctl/core/types.hpp"
#include "grammarctl/control/scorer.hpp"
#include "grammarctl/corpus/labeling.hpp"
#include "grammarctl/detector/detector.hpp"
#include "grammarctl/llm/logit_model.hpp"

namespace grammarctl::control {

// Reference point subtracted from the discriminator scores.
enum class Baseline : std::uint8_t { CandidateMean, PrefixScore, Constant };

inline std::string_view to_string(Baseline b) {
  switch (b) {
    case Baseline::CandidateMean: return "candidate-mean";
    case Baseline::PrefixScore: return "prefix-score";
    case Baseline::Constant: return "constant";
  }
  return "candidate-mean";
}

inline Baseline parse_baseline(std::string_view s) {
  if (s == "candidate-mean") return Baseline::CandidateMean;
  if (s == "prefix-score") return Baseline::PrefixScore;
  if (s == "constant") return Baseline::Constant;
  throw ValidationError("unknown baseline '" + std::string(s) + "'");
}

struct DecodingParams {
  double alpha = 0.95;
  double eta = 1e-3;
  std::size_t top_k = 200;
  bool retire_satisfied = true;
  std::size_t max_tokens = 128;
  Baseline baseline = Baseline::CandidateMean;
  double constant_baseline = 0.5;

  static DecodingParams preset(std::string_view name) {
    DecodingParams p;
    if (name == "default") return p;
    if (name == "tuned") {
      p.alpha = 0.99;
      return p;
    }
    throw LookupError("unknown decoding preset '" + std::string(name) + "'");
  }

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in [0, 1]");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ValidationError("eta must lie in [0, 1]");
    if (top_k == 0) throw ValidationError("top_k must be positive");
    if (max_tokens == 0) throw ValidationError("max_tokens must be positive");
  }
};

inline nlohmann::json to_json(const DecodingParams& p) {
  return {{"alpha", p.alpha},           {"eta", p.eta},
          {"top_k", p.top_k},           {"retire_satisfied", p.retire_satisfied},
          {"max_tokens", p.max_tokens}, {"baseline", to_string(p.baseline)},
          {"constant_baseline", p.constant_baseline}};
}

inline DecodingParams decoding_params_from_json(const nlohmann::json& j, DecodingParams p = {}) {
  if (!j.is_object()) throw ValidationError("decoding params must be an object");
  if (j.contains("preset")) p = DecodingParams::preset(j["preset"].get<std::string>());
  p.alpha = j.value("alpha", p.alpha);
  p.eta = j.value("eta", p.eta);
  p.top_k = j.value("top_k", p.top_k);
  p.retire_satisfied = j.value("retire_satisfied", p.retire_satisfied);
  p.max_tokens = j.value("max_tokens", p.max_tokens);
  if (j.contains("baseline")) p.baseline = parse_baseline(j["baseline"].get<std::string>());
  p.constant_baseline = j.value("constant_baseline", p.constant_baseline);
  p.validate();
  return p;
}

inline constexpr double kMasked = -std::numeric_limits<double>::infinity();

// Tokens among the top-k by logit whose softmax probability is at least
// eta, in descending logit order (lower index first on ties).
inline std::vector<std::size_t> candidate_set(std::span<const double> logits, double eta, std::size_t top_k) {
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto k = std::min(top_k, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); });
  order.resize(k);
  const double mx = logits.empty() ? 0.0 : *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  std::vector<std::size_t> out;
  for (auto i : order)
    if (std::exp(logits[i] - mx) / z >= eta) out.push_back(i);
  return out;
}

// (1 - alpha) * l + alpha * (g - gbar) on the candidates, -inf elsewhere.
// `g` holds one score per candidate.
inline std::vector<double> blend(std::span<const double> logits, std::span<const std::size_t> candidates,
                                 std::span<const double> g, double gbar, double alpha) {
  if (g.size() != candidates.size()) throw PreconditionError("one discriminator score per candidate expected");
  std::vector<double> out(logits.size(), kMasked);
  for (std::size_t c = 0; c < candidates.size(); ++c)
    out[candidates[c]] = (1.0 - alpha) * logits[candidates[c]] + alpha * (g[c] - gbar);
  return out;
}

inline double candidate_mean(std::span<const double> g) {
  return g.empty() ? 0.0 : std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(g.size());
}

// First index of the maximum.
inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct GuidedResult {
  std::vector<llm::TokenId> tokens;
  std::string text;
  std::vector<std::pair<SkillId, std::size_t>> retired;  // skill, tokens emitted when it was satisfied
  std::vector<std::string> warnings;
  bool hit_max_length = false;
};

// Called with each emitted token's text piece (including its leading space)
// so that the pieces concatenate to the final text.
using TokenSink = std::function<void(const std::string&)>;

// Greedy decoding with the base logits blended with discriminator
// advantages. With no active scorers the step is plain greedy.
inline GuidedResult guided_decode(const llm::LogitModel& lm, std::span<const llm::TokenId> prompt,
                                  std::span<const std::shared_ptr<const PrefixScorer>> scorers,
                                  const detector::DetectorSet& detectors, const DecodingParams& params,
                                  const TokenSink& sink = {}) {
  params.validate();
  const auto& vocab = lm.vocab();
  std::vector<std::shared_ptr<const PrefixScorer>> active(scorers.begin(), scorers.end());
  GuidedResult out;
  std::vector<std::string> words;
  std::vector<double> logits(lm.vocab_size());

  while (out.tokens.size() < params.max_tokens) {
    if (prompt.size() + 1 + out.tokens.size() >= lm.max_context()) break;
    const Eigen::VectorXf l = lm.next_token_logits(prompt, out.tokens);
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = static_cast<double>(l(static_cast<Eigen::Index>(i)));

    std::size_t pick;
    if (active.empty()) {
      pick = argmax(logits);
    } else {
      auto cands = candidate_set(logits, params.eta, params.top_k);
      if (cands.empty()) {
        out.warnings.push_back("no candidate above eta at step " + std::to_string(out.tokens.size()) +
                               "; using the top token");
        pick = argmax(logits);
      } else {
        std::vector<std::string> cand_words;
        cand_words.reserve(cands.size());
        for (auto c : cands) {
          const auto id = static_cast<llm::TokenId>(c);
          cand_words.push_back(vocab.is_special(id) ? std::string() : vocab.word(id));
        }
        std::vector<double> g(cands.size(), -std::numeric_limits<double>::infinity());
        double prefix_best = -std::numeric_limits<double>::infinity();
        for (const auto& s : active) {
          const auto sc = s->score_candidates(words, cand_words);
          for (std::size_t c = 0; c < g.size(); ++c) g[c] = std::max(g[c], sc[c]);
          if (params.baseline == Baseline::PrefixScore) prefix_best = std::max(prefix_best, s->score(words));
        }
        double gbar = 0.0;
        switch (params.baseline) {
          case Baseline::CandidateMean: gbar = candidate_mean(g); break;
          case Baseline::PrefixScore: gbar = prefix_best; break;
          case Baseline::Constant: gbar = params.constant_baseline; break;
        }
        pick = argmax(blend(logits, cands, g, gbar, params.alpha));
      }
    }

    const auto id = static_cast<llm::TokenId>(pick);
    if (id == lm.eos()) break;
    out.tokens.push_back(id);
    if (!vocab.is_special(id)) {
      const std::string piece = text::join_piece(words.empty() ? std::string_view() : std::string_view(words.back()),
                                                 vocab.word(id));
      words.push_back(vocab.word(id));
      out.text += piece;
      if (sink) sink(piece);
    }

    if (params.retire_satisfied && !active.empty() && !out.text.empty()) {
      std::erase_if(active, [&](const std::shared_ptr<const PrefixScorer>& s) {
        auto it = detectors.find(s->skill());
        if (it == detectors.end() || !corpus::detect_in_turn(*it->second, out.text)) return false;
        out.retired.emplace_back(s->skill(), out.tokens.size());
        return true;
      });
    }
  }
  out.hit_max_length = out.tokens.size() >= params.max_tokens;
  return out;
}

// Plain greedy decoding expressed through the same loop.
inline GuidedResult greedy(const llm::LogitModel& lm, std::span<const llm::TokenId> prompt, std::size_t max_tokens = 128,
                           const TokenSink& sink = {}) {
  DecodingParams p;
  p.max_tokens = max_tokens;
  return guided_decode(lm, prompt, {}, {}, p, sink);
}

}  // namespace grammarctl::control

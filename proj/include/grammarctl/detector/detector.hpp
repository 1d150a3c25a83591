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
#include <memory>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"
#include "grammarctl/core/types.hpp"

namespace grammarctl::detector {

// Probability above which a token (and therefore the text) counts as
// containing the skill.
inline constexpr double kDetectionThreshold = 0.5;

struct TokenScore {
  text::Token token;
  double probability = 0.0;
};

// A contiguous run of tokens scoring above the detection threshold.
struct SkillSpan {
  SkillId skill = 0;
  std::size_t token_begin = 0;
  std::size_t token_end = 0;  // exclusive
  std::size_t char_begin = 0;
  std::size_t char_end = 0;
  double probability = 0.0;  // max over the run

  bool operator==(const SkillSpan&) const = default;
};

inline double max_probability(std::span<const TokenScore> scores) {
  if (scores.empty()) throw PreconditionError("text has no tokens to score");
  double best = scores.front().probability;
  for (const auto& s : scores) best = std::max(best, s.probability);
  return best;
}

// Max pooling over token probabilities followed by the 0.5 threshold.
inline bool detect_from_scores(std::span<const TokenScore> scores) {
  return max_probability(scores) > kDetectionThreshold;
}

inline std::vector<SkillSpan> spans_from_scores(SkillId skill, std::span<const TokenScore> scores) {
  std::vector<SkillSpan> spans;
  for (std::size_t i = 0; i < scores.size();) {
    if (scores[i].probability <= kDetectionThreshold) {
      ++i;
      continue;
    }
    SkillSpan span{skill, i, i, scores[i].token.begin, scores[i].token.end, scores[i].probability};
    while (i < scores.size() && scores[i].probability > kDetectionThreshold) {
      span.probability = std::max(span.probability, scores[i].probability);
      span.char_end = scores[i].token.end;
      ++i;
    }
    span.token_end = i;
    spans.push_back(span);
  }
  return spans;
}

// Anything that assigns each token of a text a probability of belonging to
// a skill. Implementations must be safe for concurrent const calls.
class TextDetector {
 public:
  virtual ~TextDetector() = default;
  virtual std::vector<TokenScore> score_tokens(std::string_view text) const = 0;

  bool detect(std::string_view text) const {
    auto scores = score_tokens(text);
    return detect_from_scores(scores);
  }
};

using DetectorSet = std::map<SkillId, std::shared_ptr<const TextDetector>>;

// Rule-based detector: tokens overlapping a regex match score high, all
// others low. Used for pseudo-skills, oracles and bootstrapping.
class PatternDetector final : public TextDetector {
 public:
  static constexpr double kHit = 0.99;
  static constexpr double kMiss = 0.01;

  explicit PatternDetector(std::string pattern)
      : pattern_(std::move(pattern)), regex_(make_regex(pattern_)) {}

  const std::string& pattern() const { return pattern_; }

  bool matches(std::string_view s) const {
    return std::regex_search(s.begin(), s.end(), regex_);
  }

  std::vector<TokenScore> score_tokens(std::string_view s) const override {
    auto tokens = text::tokenize(s);
    if (tokens.empty()) throw PreconditionError("text has no tokens to score");
    std::vector<std::pair<std::size_t, std::size_t>> hits;
    for (auto it = std::cregex_iterator(s.data(), s.data() + s.size(), regex_); it != std::cregex_iterator(); ++it) {
      const auto b = static_cast<std::size_t>(it->position());
      hits.emplace_back(b, b + std::max<std::size_t>(1, static_cast<std::size_t>(it->length())));
    }
    std::vector<TokenScore> out;
    out.reserve(tokens.size());
    for (auto& t : tokens) {
      bool hit = std::any_of(hits.begin(), hits.end(), [&](auto h) { return t.begin < h.second && h.first < t.end; });
      out.push_back({std::move(t), hit ? kHit : kMiss});
    }
    return out;
  }

 private:
  static std::regex make_regex(const std::string& p) {
    try {
      return std::regex(p, std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error& e) {
      throw ValidationError("invalid pattern '" + p + "': " + e.what());
    }
  }

  std::string pattern_;
  std::regex regex_;
};

inline nlohmann::json to_json(const SkillSpan& s) {
  return {{"skill_id", s.skill},     {"token_begin", s.token_begin}, {"token_end", s.token_end},
          {"char_begin", s.char_begin}, {"char_end", s.char_end},     {"probability", s.probability}};
}

}  // namespace grammarctl::detector

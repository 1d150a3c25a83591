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

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"
#include "grammarctl/corpus/dialogue.hpp"
#include "grammarctl/egp/prompts.hpp"
#include "grammarctl/llm/chat.hpp"

namespace grammarctl::llm {

enum class QualityDimension : std::uint8_t { Appropriateness, Relevance, ContentRichness, GrammaticalCorrectness };

inline constexpr std::array<QualityDimension, 4> kAllDimensions = {
    QualityDimension::Appropriateness, QualityDimension::Relevance, QualityDimension::ContentRichness,
    QualityDimension::GrammaticalCorrectness};

inline std::string_view to_string(QualityDimension d) {
  switch (d) {
    case QualityDimension::Appropriateness: return "Appropriateness";
    case QualityDimension::Relevance: return "Relevance";
    case QualityDimension::ContentRichness: return "Content Richness";
    case QualityDimension::GrammaticalCorrectness: return "Grammatical Correctness";
  }
  return "Appropriateness";
}

inline QualityDimension parse_dimension(std::string_view s) {
  const auto key = text::to_lower(s);
  for (auto d : kAllDimensions) {
    auto name = text::to_lower(to_string(d));
    std::string compact;
    for (char c : name)
      if (c != ' ') compact += c;
    if (key == name || key == compact) return d;
  }
  if (key == "gc") return QualityDimension::GrammaticalCorrectness;
  throw ValidationError("unknown quality dimension '" + std::string(s) + "'");
}

inline constexpr std::string_view kRubricVersion = "rubric-v1";

inline std::string_view rubric(QualityDimension d) {
  switch (d) {
    case QualityDimension::Appropriateness:
      return "1: rude, off-putting or nonsensical as a reply.\n"
             "3: acceptable but awkward in tone or form.\n"
             "5: a natural, polite and fitting next turn.";
    case QualityDimension::Relevance:
      return "1: ignores the dialogue entirely.\n"
             "3: loosely connected to the last turns.\n"
             "5: directly addresses what was just said.";
    case QualityDimension::ContentRichness:
      return "1: empty or generic filler.\n"
             "3: some concrete content.\n"
             "5: informative, specific and engaging content.";
    case QualityDimension::GrammaticalCorrectness:
      return "1: many grammatical errors that hinder understanding.\n"
             "3: a few noticeable errors.\n"
             "5: free of grammatical errors.";
  }
  return "";
}

inline std::vector<ChatMessage> judge_messages(std::span<const corpus::Turn> dialogue, std::string_view response,
                                               QualityDimension d) {
  std::string user = "Rate the response to the dialog on the dimension " + std::string(to_string(d)) +
                     " with a score from 1 to 5.\n\nRubric:\n" + std::string(rubric(d)) + "\n\nDialog:\n" +
                     egp::format_dialog(dialogue) + "\n\nResponse:\n" + std::string(response) +
                     "\n\nAnswer with the score only.";
  return {{Role::System, "You are a careful evaluator of dialogue responses."}, {Role::User, std::move(user)}};
}

// The first integer in the reply, if it lies in 1..5.
inline std::optional<int> parse_score(std::string_view reply) {
  for (std::size_t i = 0; i < reply.size(); ++i) {
    if (reply[i] < '0' || reply[i] > '9') continue;
    std::size_t j = i;
    while (j < reply.size() && reply[j] >= '0' && reply[j] <= '9') ++j;
    if (j - i > 1) return std::nullopt;
    const int v = reply[i] - '0';
    return v >= 1 && v <= 5 ? std::optional<int>(v) : std::nullopt;
  }
  return std::nullopt;
}

struct JudgeVerdict {
  QualityDimension dimension = QualityDimension::Appropriateness;
  int score = 1;
  std::string raw_reply;
};

class ReplyParseError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class QualityJudge {
 public:
  explicit QualityJudge(std::shared_ptr<ChatModel> model) : model_(std::move(model)) {}

  const ChatModel& model() const { return *model_; }

  // Unparseable replies are retried once before giving up.
  JudgeVerdict judge(std::span<const corpus::Turn> dialogue, std::string_view response, QualityDimension d) const {
    const auto messages = judge_messages(dialogue, response, d);
    std::string reply;
    for (int attempt = 0; attempt < 2; ++attempt) {
      reply = model_->complete(messages, ChatParams{0.0, 8});
      if (auto s = parse_score(reply)) return {d, *s, reply};
    }
    throw ReplyParseError("judge reply for " + std::string(to_string(d)) + " has no score 1-5: '" + reply + "'");
  }

 private:
  std::shared_ptr<ChatModel> model_;
};

}  // namespace grammarctl::llm

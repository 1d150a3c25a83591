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

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "grammarctl/control/decoding.hpp"
#include "grammarctl/control/finetune_data.hpp"
#include "grammarctl/control/scorer.hpp"
#include "grammarctl/corpus/labeling.hpp"
#include "grammarctl/corpus/sampling.hpp"
#include "grammarctl/egp/constraints.hpp"
#include "grammarctl/egp/prompts.hpp"
#include "grammarctl/llm/chat.hpp"
#include "grammarctl/llm/logit_model.hpp"

namespace grammarctl::control {

enum class Strategy : std::uint8_t { PromptRemote, PromptLocal, Finetune, Decode, Hybrid };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::PromptRemote: return "prompt_remote";
    case Strategy::PromptLocal: return "prompt_local";
    case Strategy::Finetune: return "finetune";
    case Strategy::Decode: return "decode";
    case Strategy::Hybrid: return "hybrid";
  }
  return "decode";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "prompt_remote" || s == "prompt") return Strategy::PromptRemote;
  if (s == "prompt_local") return Strategy::PromptLocal;
  if (s == "finetune") return Strategy::Finetune;
  if (s == "decode") return Strategy::Decode;
  if (s == "hybrid") return Strategy::Hybrid;
  throw ValidationError("unknown strategy '" + std::string(s) + "'");
}

struct GenerationRecord {
  corpus::DialogueSnippet snippet;
  egp::ConstraintSet constraints;
  Strategy strategy = Strategy::Decode;
  std::string model;
  std::string response;
  SkillSet detections;
  double latency_seconds = 0.0;
  std::size_t word_count = 0;
  std::size_t token_count = 0;
  bool failed = false;
  std::string error;
  std::vector<std::string> warnings;
};

inline nlohmann::json to_json(const GenerationRecord& r) {
  nlohmann::json j = {{"snippet", corpus::to_json(r.snippet)},
                      {"constraints", egp::to_json(r.constraints)},
                      {"strategy", to_string(r.strategy)},
                      {"model", r.model},
                      {"response", r.response},
                      {"detections", r.detections},
                      {"latency_seconds", r.latency_seconds},
                      {"word_count", r.word_count},
                      {"token_count", r.token_count},
                      {"failed", r.failed}};
  if (!r.error.empty()) j["error"] = r.error;
  if (!r.warnings.empty()) j["warnings"] = r.warnings;
  return j;
}

inline GenerationRecord generation_record_from_json(const nlohmann::json& j) {
  try {
    GenerationRecord r{corpus::snippet_from_json(j.at("snippet")), egp::constraints_from_json(j.at("constraints"))};
    r.strategy = parse_strategy(j.at("strategy").get<std::string>());
    r.model = j.value("model", std::string());
    r.response = j.at("response").get<std::string>();
    r.detections = j.at("detections").get<SkillSet>();
    r.latency_seconds = j.at("latency_seconds").get<double>();
    r.word_count = j.at("word_count").get<std::size_t>();
    r.token_count = j.value("token_count", std::size_t{0});
    r.failed = j.value("failed", false);
    r.error = j.value("error", std::string());
    r.warnings = j.value("warnings", std::vector<std::string>{});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad generation record: ") + e.what());
  }
}

// Text pieces cut at token boundaries of `s`; they concatenate to `s`.
inline std::vector<std::string> stream_pieces(std::string_view s) {
  std::vector<std::string> out;
  std::size_t from = 0;
  for (const auto& t : text::tokenize(s)) {
    out.emplace_back(s.substr(from, t.end - from));
    from = t.end;
  }
  if (from < s.size()) {
    if (out.empty()) out.emplace_back();
    out.back() += s.substr(from);
  }
  return out;
}

struct Generated {
  std::string text;
  std::size_t tokens = 0;
  std::vector<std::string> warnings;
};

// A response-generation strategy. `sink` receives the response in pieces
// that concatenate to the returned text.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual Strategy strategy() const = 0;
  virtual std::string model_id() const = 0;
  virtual Generated generate(const corpus::DialogueSnippet& snippet, const egp::ConstraintSet& constraints,
                             const TokenSink& sink = {}) = 0;
};

// Verbalized constraints sent to a chat model.
class PromptGenerator final : public Generator {
 public:
  PromptGenerator(std::shared_ptr<llm::ChatModel> model, const egp::SkillRepository& repo,
                  Strategy tag = Strategy::PromptRemote, llm::ChatParams params = {})
      : model_(std::move(model)), repo_(repo), tag_(tag), params_(params) {}

  Strategy strategy() const override { return tag_; }
  std::string model_id() const override { return model_->id(); }

  Generated generate(const corpus::DialogueSnippet& snippet, const egp::ConstraintSet& constraints,
                     const TokenSink& sink) override {
    Generated g;
    const auto prompt = egp::verbalize(constraints, repo_, snippet.next_speaker, snippet.context, {}, &g.warnings);
    g.text = model_->complete(prompt, params_);
    const auto pieces = stream_pieces(g.text);
    g.tokens = text::tokenize(g.text).size();
    if (sink)
      for (const auto& p : pieces) sink(p);
    return g;
  }

 private:
  std::shared_ptr<llm::ChatModel> model_;
  const egp::SkillRepository& repo_;
  Strategy tag_;
  llm::ChatParams params_;
};

// Local-model strategies. Decode and hybrid steer with discriminators
// (hybrid over a fine-tuned model); finetune decodes greedily.
class LocalGenerator final : public Generator {
 public:
  using Scorers = std::map<SkillId, std::shared_ptr<const PrefixScorer>>;

  LocalGenerator(Strategy tag, std::shared_ptr<const llm::LogitModel> lm, const egp::SkillRepository& repo,
                 Scorers scorers = {}, detector::DetectorSet retirement = {}, DecodingParams params = {})
      : tag_(tag), lm_(std::move(lm)), repo_(repo), scorers_(std::move(scorers)), retirement_(std::move(retirement)),
        params_(params) {
    if (tag_ == Strategy::PromptRemote) throw PreconditionError("remote prompting is not a local strategy");
    params_.validate();
  }

  Strategy strategy() const override { return tag_; }
  std::string model_id() const override { return lm_->id(); }
  const DecodingParams& params() const { return params_; }

  Generated generate(const corpus::DialogueSnippet& snippet, const egp::ConstraintSet& constraints,
                     const TokenSink& sink) override {
    Generated g;
    const auto prompt = egp::verbalize(constraints, repo_, snippet.next_speaker, snippet.context, {}, &g.warnings);
    const auto ids = lm_->vocab().encode(local_prompt_text(prompt));
    std::vector<std::shared_ptr<const PrefixScorer>> active;
    if (tag_ == Strategy::Decode || tag_ == Strategy::Hybrid) {
      for (auto id : egp::target_skills(constraints, repo_)) {
        auto it = scorers_.find(id);
        if (it != scorers_.end()) {
          active.push_back(it->second);
        } else if (constraints.is_explicit()) {
          throw PreconditionError("no future discriminator for skill " + std::to_string(id));
        } else {
          g.warnings.push_back("skill " + std::to_string(id) + " has no discriminator and is not steered");
        }
      }
    }
    DecodingParams p = params_;
    auto r = guided_decode(*lm_, ids, active, retirement_, p, sink);
    g.text = std::move(r.text);
    g.tokens = r.tokens.size();
    g.warnings.insert(g.warnings.end(), r.warnings.begin(), r.warnings.end());
    return g;
  }

 private:
  Strategy tag_;
  std::shared_ptr<const llm::LogitModel> lm_;
  const egp::SkillRepository& repo_;
  Scorers scorers_;
  detector::DetectorSet retirement_;
  DecodingParams params_;
};

// Runs a generator and fills the record; failures are recorded, not thrown,
// unless the constraint set itself is invalid.
inline GenerationRecord generate_record(Generator& gen, const corpus::DialogueSnippet& snippet,
                                        const egp::ConstraintSet& constraints, const egp::SkillRepository& repo,
                                        const detector::DetectorSet& detectors, const TokenSink& sink = {}) {
  constraints.check_against(repo);
  GenerationRecord r{snippet, constraints};
  r.strategy = gen.strategy();
  r.model = gen.model_id();
  const auto start = std::chrono::steady_clock::now();
  try {
    auto g = gen.generate(snippet, constraints, sink);
    r.latency_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.response = std::move(g.text);
    r.token_count = g.tokens;
    r.warnings = std::move(g.warnings);
  } catch (const PreconditionError&) {
    throw;
  } catch (const std::exception& e) {
    r.latency_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.failed = true;
    r.error = e.what();
    return r;
  }
  r.word_count = text::word_count(r.response);
  if (!text::trim(r.response).empty()) r.detections = corpus::detect_skills(r.response, detectors);
  return r;
}

}  // namespace grammarctl::control

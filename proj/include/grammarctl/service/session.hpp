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

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"

#include "grammarctl/control/generation.hpp"
#include "grammarctl/core/errors.hpp"
#include "grammarctl/detector/detector.hpp"
#include "grammarctl/egp/constraints.hpp"
#include "grammarctl/eval/metrics.hpp"
#include "grammarctl/service/store.hpp"

namespace grammarctl::service {

inline constexpr Speaker kLearner = Speaker::A;
inline constexpr Speaker kBot = Speaker::B;

struct FieldError {
  std::string field;
  std::string message;
};

// Invalid request body; carries one entry per offending field.
class RequestError : public ValidationError {
 public:
  explicit RequestError(std::vector<FieldError> fields)
      : ValidationError(fields.empty() ? "invalid request" : fields.front().field + ": " + fields.front().message),
        fields_(std::move(fields)) {}
  RequestError(std::string field, std::string message)
      : RequestError(std::vector<FieldError>{{std::move(field), std::move(message)}}) {}
  const std::vector<FieldError>& fields() const noexcept { return fields_; }

 private:
  std::vector<FieldError> fields_;
};

class SessionBusy : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

// The bot turn could not be produced; `turn` is the stored failed turn.
class GenerationFailed : public RuntimeFailure {
 public:
  GenerationFailed(const std::string& what, nlohmann::json turn) : RuntimeFailure(what), turn_(std::move(turn)) {}
  const nlohmann::json& turn() const noexcept { return turn_; }

 private:
  nlohmann::json turn_;
};

// ------------------------------------------------------------- detection

struct TurnDetections {
  SkillSet skills;
  std::vector<detector::SkillSpan> spans;  // offsets into the whole turn
};

// Sentence-wise scoring, the same unit as corpus labeling; a skill is
// detected exactly when it has a span.
inline TurnDetections detect_turn(std::string_view turn, const detector::DetectorSet& detectors,
                                  const SkillSet* only = nullptr) {
  TurnDetections out;
  if (text::trim(turn).empty()) return out;
  const auto tokens = text::tokenize(turn);
  std::vector<std::pair<std::size_t, std::size_t>> sentences;  // char offset, length
  std::size_t cursor = 0;
  for (const auto& s : text::split_sentences(turn)) {
    const auto at = turn.find(s, cursor);
    if (at == std::string_view::npos) continue;
    sentences.emplace_back(at, s.size());
    cursor = at + s.size();
  }
  auto token_index = [&](std::size_t char_pos) {
    auto it = std::lower_bound(tokens.begin(), tokens.end(), char_pos,
                               [](const text::Token& t, std::size_t pos) { return t.begin < pos; });
    return static_cast<std::size_t>(it - tokens.begin());
  };
  for (const auto& [id, det] : detectors) {
    if (only && !only->count(id)) continue;
    for (const auto& [at, len] : sentences) {
      const auto sentence = turn.substr(at, len);
      if (text::tokenize(sentence).empty()) continue;
      auto scores = det->score_tokens(sentence);
      for (auto span : detector::spans_from_scores(id, scores)) {
        span.char_begin += at;
        span.char_end += at;
        span.token_begin = token_index(span.char_begin);
        span.token_end = token_index(span.char_end);
        out.spans.push_back(span);
        out.skills.insert(id);
      }
    }
  }
  return out;
}

// ----------------------------------------------------------------- config

struct SessionConfig {
  std::optional<egp::ConstraintSet> constraints;
  std::map<std::string, CefrLevel> learner_profile;  // canonical subcategory -> level
  control::Strategy strategy = control::Strategy::PromptRemote;
  control::DecodingParams params;
};

inline nlohmann::json to_json(const SessionConfig& c) {
  nlohmann::json j = {{"strategy", control::to_string(c.strategy)}, {"params", control::to_json(c.params)}};
  if (c.constraints) j["constraints"] = egp::to_json(*c.constraints);
  if (!c.learner_profile.empty()) {
    nlohmann::json p = nlohmann::json::object();
    for (const auto& [s, l] : c.learner_profile) p[s] = to_string(l);
    j["learner_profile"] = p;
  }
  return j;
}

struct SessionDefaults {
  control::Strategy strategy = control::Strategy::PromptRemote;
  control::DecodingParams params;
};

// Collects every field problem before failing.
inline SessionConfig parse_session_config(const nlohmann::json& body, const egp::SkillRepository& repo,
                                          const SessionDefaults& defaults = {}) {
  std::vector<FieldError> errors;
  SessionConfig c;
  c.strategy = defaults.strategy;
  c.params = defaults.params;
  if (!body.is_object()) throw RequestError("body", "must be a JSON object");
  const bool has_c = body.contains("constraints"), has_p = body.contains("learner_profile");
  if (has_c == has_p) errors.push_back({"constraints", "give exactly one of 'constraints' or 'learner_profile'"});
  if (has_c) {
    try {
      auto cs = egp::constraints_from_json(body["constraints"]);
      cs.check_against(repo);
      c.constraints = std::move(cs);
    } catch (const Error& e) {
      errors.push_back({"constraints", e.what()});
    } catch (const nlohmann::json::exception& e) {
      errors.push_back({"constraints", e.what()});
    }
  }
  if (has_p) {
    const auto& p = body["learner_profile"];
    if (!p.is_object() || p.empty()) {
      errors.push_back({"learner_profile", "must be a non-empty object of subcategory -> CEFR level"});
    } else {
      for (const auto& [sub, lvl] : p.items()) {
        const std::string field = "learner_profile." + sub;
        if (!repo.has_subcategory(sub)) {
          errors.push_back({field, "unknown subcategory"});
          continue;
        }
        const auto level = lvl.is_string() ? try_parse_level(lvl.get<std::string>()) : std::nullopt;
        if (!level) {
          errors.push_back({field, "level must be one of A1..C2"});
          continue;
        }
        c.learner_profile[repo.canonical_subcategory(sub)] = *level;
      }
    }
  }
  if (body.contains("strategy")) {
    try {
      c.strategy = control::parse_strategy(body["strategy"].get<std::string>());
    } catch (const std::exception& e) {
      errors.push_back({"strategy", e.what()});
    }
  }
  if (body.contains("params")) {
    try {
      c.params = control::decoding_params_from_json(body["params"], c.params);
    } catch (const std::exception& e) {
      errors.push_back({"params", e.what()});
    }
  }
  if (!errors.empty()) throw RequestError(std::move(errors));
  return c;
}

// Constraint set for the k-th bot turn. A profile with more than three
// entries is rotated three at a time.
inline egp::ConstraintSet constraints_for_turn(const SessionConfig& c, std::size_t k) {
  if (c.constraints) return *c.constraints;
  std::vector<egp::CategoryLevel> all;
  for (const auto& [s, l] : c.learner_profile) all.push_back({s, l});
  if (all.size() <= egp::kMaxCategoryPairs) return egp::ConstraintSet::categorical(all);
  std::vector<egp::CategoryLevel> pick;
  for (std::size_t i = 0; i < egp::kMaxCategoryPairs; ++i) pick.push_back(all[(k * egp::kMaxCategoryPairs + i) % all.size()]);
  return egp::ConstraintSet::categorical(std::move(pick));
}

// Skills the session practises: the explicit list, or every profile pair's
// exact-level skills.
inline SkillSet session_targets(const SessionConfig& c, const egp::SkillRepository& repo) {
  if (c.constraints) return egp::target_skills(*c.constraints, repo);
  std::vector<egp::CategoryLevel> all;
  for (const auto& [s, l] : c.learner_profile) all.push_back({s, l});
  return egp::expand_categorical(all, repo).skills;
}

// ------------------------------------------------------------------ turns

struct TurnScore {
  double satisfaction = 0.0;  // share of skills (explicit) or pairs (categorical) met
  std::size_t satisfied = 0;
  std::size_t overshoot = 0;

  bool operator==(const TurnScore&) const = default;
};

inline TurnScore score_turn(const egp::ConstraintSet& c, const SkillSet& detections, const egp::SkillRepository& repo) {
  TurnScore s;
  if (c.is_explicit()) {
    s.satisfaction = eval::satisfaction_task1(c, detections);
    for (auto id : c.skills()) s.satisfied += detections.count(id);
  } else {
    const auto t = eval::satisfaction_task2(c, detections, repo);
    s.satisfied = t.satisfied;
    s.overshoot = t.overshoot;
    s.satisfaction = static_cast<double>(t.satisfied) / static_cast<double>(c.size());
  }
  return s;
}

struct TranscriptTurn {
  Speaker speaker = kLearner;
  std::string text;
  SkillSet detections;
  std::vector<detector::SkillSpan> spans;
  // learner turns
  SkillSet target_hits;  // session target skills the learner produced
  // bot turns
  std::optional<egp::ConstraintSet> constraints;
  TurnScore score;
  bool failed = false;
  std::string error;
  double latency_seconds = 0.0;
  std::size_t word_count = 0;
  std::vector<std::string> warnings;
};

inline nlohmann::json to_json(const TranscriptTurn& t) {
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& s : t.spans) spans.push_back(detector::to_json(s));
  nlohmann::json j = {{"role", t.speaker == kLearner ? "learner" : "bot"},
                      {"text", t.text},
                      {"detections", t.detections},
                      {"skill_spans", spans}};
  if (t.speaker == kLearner) {
    j["learner_detections"] = t.target_hits;
    return j;
  }
  j["constraints"] = egp::to_json(*t.constraints);
  j["failed"] = t.failed;
  if (!t.error.empty()) j["error"] = t.error;
  nlohmann::json metrics = {{"satisfaction", t.score.satisfaction},
                            {"satisfied", t.score.satisfied},
                            {"overshoot", t.score.overshoot},
                            {"latency_seconds", t.latency_seconds},
                            {"word_count", t.word_count}};
  if (t.latency_seconds > 0.0) metrics["wpm"] = eval::speed_wpm(t.word_count, t.latency_seconds);
  j["metrics"] = metrics;
  if (!t.warnings.empty()) j["warnings"] = t.warnings;
  return j;
}

inline TranscriptTurn turn_from_json(const nlohmann::json& j) {
  TranscriptTurn t;
  t.speaker = j.at("role") == "learner" ? kLearner : kBot;
  t.text = j.at("text").get<std::string>();
  t.detections = j.at("detections").get<SkillSet>();
  for (const auto& s : j.at("skill_spans"))
    t.spans.push_back({s.at("skill_id").get<SkillId>(), s.at("token_begin").get<std::size_t>(),
                       s.at("token_end").get<std::size_t>(), s.at("char_begin").get<std::size_t>(),
                       s.at("char_end").get<std::size_t>(), s.at("probability").get<double>()});
  if (t.speaker == kLearner) {
    t.target_hits = j.value("learner_detections", SkillSet{});
    return t;
  }
  t.constraints = egp::constraints_from_json(j.at("constraints"));
  t.failed = j.value("failed", false);
  t.error = j.value("error", std::string());
  const auto& m = j.at("metrics");
  t.score = {m.at("satisfaction").get<double>(), m.at("satisfied").get<std::size_t>(), m.at("overshoot").get<std::size_t>()};
  t.latency_seconds = m.value("latency_seconds", 0.0);
  t.word_count = m.value("word_count", std::size_t{0});
  t.warnings = j.value("warnings", std::vector<std::string>{});
  return t;
}

// --------------------------------------------------------------- sessions

using GeneratorFactory =
    std::function<std::shared_ptr<control::Generator>(control::Strategy, const control::DecodingParams&)>;

struct Session {
  std::string id;
  std::string created_at;
  SessionConfig config;
  std::vector<TranscriptTurn> transcript;
  std::size_t bot_turns = 0;
  std::shared_ptr<control::Generator> generator;
  std::atomic<bool> busy{false};
  mutable std::mutex mutex;  // guards everything above except `busy`
};

class SessionManager;

// Exclusive right to run one turn of a session.
class TurnLease {
 public:
  TurnLease(TurnLease&& o) noexcept : session_(std::exchange(o.session_, nullptr)) {}
  TurnLease& operator=(TurnLease&&) = delete;
  ~TurnLease() {
    if (session_) session_->busy = false;
  }

 private:
  friend class SessionManager;
  explicit TurnLease(std::shared_ptr<Session> s) : session_(std::move(s)) {}
  std::shared_ptr<Session> session_;
};

class SessionManager {
 public:
  SessionManager(EventStore& store, const egp::SkillRepository& repo, detector::DetectorSet detectors,
                 GeneratorFactory factory, SessionDefaults defaults = {})
      : store_(store), repo_(repo), detectors_(std::move(detectors)), factory_(std::move(factory)), defaults_(defaults) {
    restore();
  }

  const egp::SkillRepository& repo() const { return repo_; }
  const detector::DetectorSet& detectors() const { return detectors_; }

  nlohmann::json create(const nlohmann::json& body) {
    auto config = parse_session_config(body, repo_, defaults_);
    auto s = std::make_shared<Session>();
    s->id = new_id();
    s->created_at = utc_timestamp();
    s->config = std::move(config);
    s->generator = factory_(s->config.strategy, s->config.params);
    store_.append({s->created_at, s->id, "created", to_json(s->config)});
    {
      std::unique_lock lock(mutex_);
      sessions_[s->id] = s;
    }
    return describe(*s);
  }

  // Replaces the constraints or profile; applies from the next bot turn.
  nlohmann::json update(const std::string& id, const nlohmann::json& body) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    auto merged = to_json(s->config);
    merged.erase("constraints");
    merged.erase("learner_profile");
    for (const auto& [k, v] : body.items()) merged[k] = v;
    auto config = parse_session_config(merged, repo_, defaults_);
    if (config.strategy != s->config.strategy || merged.contains("params"))
      s->generator = factory_(config.strategy, config.params);
    s->config = std::move(config);
    store_.append({utc_timestamp(), s->id, "config_updated", to_json(s->config)});
    return describe_locked(*s);
  }

  TurnLease begin_turn(const std::string& id) {
    auto s = find(id);
    if (s->busy.exchange(true)) throw SessionBusy("session '" + id + "' is generating a turn");
    return TurnLease(std::move(s));
  }

  // Stores the learner turn, generates and stores the bot turn; `sink`
  // receives the bot text in pieces.
  nlohmann::json run_turn(TurnLease& lease, const std::string& learner_text, const control::TokenSink& sink = {}) {
    if (!lease.session_) throw PreconditionError("turn lease already used");
    auto& s = *lease.session_;
    if (text::trim(learner_text).empty()) throw RequestError("text", "must not be empty");

    TranscriptTurn learner;
    learner.speaker = kLearner;
    learner.text = learner_text;
    auto det = detect_turn(learner_text, detectors_);
    learner.detections = std::move(det.skills);
    learner.spans = std::move(det.spans);

    corpus::DialogueSnippet snippet;
    std::optional<egp::ConstraintSet> chosen;
    std::shared_ptr<control::Generator> gen;
    {
      std::lock_guard lock(s.mutex);
      for (auto id : session_targets(s.config, repo_))
        if (learner.detections.count(id)) learner.target_hits.insert(id);
      s.transcript.push_back(learner);
      store_.append({utc_timestamp(), s.id, "learner_turn", to_json(learner)});
      const auto from = s.transcript.size() > corpus::kSnippetTurns ? s.transcript.size() - corpus::kSnippetTurns : 0;
      for (auto i = from; i < s.transcript.size(); ++i)
        snippet.context.push_back({s.transcript[i].speaker, s.transcript[i].text, std::nullopt});
      snippet.next_speaker = kBot;
      snippet.dialogue_id = s.id;
      snippet.start = from;
      chosen = constraints_for_turn(s.config, s.bot_turns);
      gen = s.generator;
    }

    const auto& constraints = *chosen;
    TranscriptTurn bot;
    bot.speaker = kBot;
    bot.constraints = constraints;
    control::GenerationRecord rec{snippet, constraints};
    try {
      rec = control::generate_record(*gen, snippet, constraints, repo_, {}, sink);
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.error = e.what();
    }
    bot.failed = rec.failed;
    bot.error = rec.error;
    bot.warnings = rec.warnings;
    bot.latency_seconds = rec.latency_seconds;
    if (!bot.failed) {
      bot.text = rec.response;
      bot.word_count = rec.word_count;
      auto bd = detect_turn(bot.text, detectors_);
      bot.detections = std::move(bd.skills);
      bot.spans = std::move(bd.spans);
      bot.score = score_turn(constraints, bot.detections, repo_);
    }
    const auto j = to_json(bot);
    {
      std::lock_guard lock(s.mutex);
      s.transcript.push_back(bot);
      ++s.bot_turns;
      store_.append({utc_timestamp(), s.id, "bot_turn", j});
    }
    if (bot.failed) throw GenerationFailed("generation failed: " + bot.error, j);
    nlohmann::json out = j;
    out["learner_detections"] = learner.target_hits;
    return out;
  }

  nlohmann::json progress(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    std::map<SkillId, std::size_t> exposures, productions;
    for (auto t : session_targets(s->config, repo_)) exposures[t] = productions[t] = 0;
    for (const auto& t : s->transcript)
      if (!t.failed)
        for (auto d : t.detections) ++(t.speaker == kBot ? exposures : productions)[d];
    for (const auto& [k, _] : exposures) productions.try_emplace(k, 0);
    for (const auto& [k, _] : productions) exposures.try_emplace(k, 0);
    nlohmann::json e = nlohmann::json::object(), p = nlohmann::json::object();
    for (const auto& [k, v] : exposures) e[std::to_string(k)] = v;
    for (const auto& [k, v] : productions) p[std::to_string(k)] = v;
    return {{"session_id", id}, {"bot_turns", s->bot_turns}, {"exposures", e}, {"productions", p}};
  }

  nlohmann::json describe(const std::string& id) const {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    return describe_locked(*s);
  }

  std::vector<std::string> ids() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, _] : sessions_) out.push_back(id);
    return out;
  }

 private:
  std::shared_ptr<Session> find(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw LookupError("unknown session '" + id + "'");
    return it->second;
  }

  nlohmann::json describe(const Session& s) const {
    std::lock_guard lock(s.mutex);
    return describe_locked(s);
  }

  static nlohmann::json describe_locked(const Session& s) {
    nlohmann::json transcript = nlohmann::json::array();
    for (const auto& t : s.transcript) transcript.push_back(to_json(t));
    auto j = to_json(s.config);
    j["session_id"] = s.id;
    j["created_at"] = s.created_at;
    j["transcript"] = transcript;
    return j;
  }

  std::string new_id() {
    std::lock_guard lock(id_mutex_);
    static constexpr char hex[] = "0123456789abcdef";
    for (;;) {
      std::string id;
      for (int i = 0; i < 16; ++i) id += hex[rng_() % 16];
      std::shared_lock lock2(mutex_);
      if (!sessions_.count(id)) return id;
    }
  }

  // Rebuilds sessions from the event log; generators are created on load.
  void restore() {
    for (const auto& id : store_.sessions()) {
      auto s = std::make_shared<Session>();
      s->id = id;
      for (const auto& e : store_.events(id)) {
        if (e.kind == "created" || e.kind == "config_updated") {
          s->config = parse_session_config(e.payload, repo_, defaults_);
          if (e.kind == "created") s->created_at = e.ts;
        } else if (e.kind == "learner_turn") {
          s->transcript.push_back(turn_from_json(e.payload));
        } else if (e.kind == "bot_turn") {
          s->transcript.push_back(turn_from_json(e.payload));
          ++s->bot_turns;
        }
      }
      s->generator = factory_(s->config.strategy, s->config.params);
      sessions_[id] = s;
    }
  }

  EventStore& store_;
  const egp::SkillRepository& repo_;
  detector::DetectorSet detectors_;
  GeneratorFactory factory_;
  SessionDefaults defaults_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mutex id_mutex_;
  std::mt19937_64 rng_{std::random_device{}()};
};

struct ReplayMismatch {
  std::string session;
  std::size_t event = 0;
  std::string what;
};

// Recomputes detections and satisfaction of every stored bot turn from its
// text and constraint set.
inline std::vector<ReplayMismatch> verify_replay(const EventStore& store, const egp::SkillRepository& repo,
                                                 const detector::DetectorSet& detectors) {
  std::vector<ReplayMismatch> out;
  for (const auto& id : store.sessions()) {
    const auto events = store.events(id);
    for (std::size_t i = 0; i < events.size(); ++i) {
      if (events[i].kind != "bot_turn") continue;
      const auto t = turn_from_json(events[i].payload);
      if (t.failed) continue;
      const auto det = detect_turn(t.text, detectors);
      if (det.skills != t.detections) out.push_back({id, i, "detections differ"});
      if (score_turn(*t.constraints, det.skills, repo) != t.score) out.push_back({id, i, "satisfaction differs"});
    }
  }
  return out;
}

}  // namespace grammarctl::service

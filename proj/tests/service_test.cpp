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

#include <gtest/gtest.h>

#include <future>
#include <thread>

#include "httplib.h"

#include "grammarctl/service/config.hpp"
#include "grammarctl/service/server.hpp"
#include "grammarctl/service/session.hpp"
#include "grammarctl/service/store.hpp"
#include "support/fixtures.hpp"
#include "support/temp_dir.hpp"

namespace gc = grammarctl;
namespace sv = grammarctl::service;
using gc::testing::fixture_repo;
using nlohmann::json;

namespace {

gc::detector::DetectorSet pattern_detectors() {
  return {{3, std::make_shared<gc::detector::PatternDetector>(R"(\bthe \w+est\b)")},
          {22, std::make_shared<gc::detector::PatternDetector>(R"(\bwould\b)")},
          {44, std::make_shared<gc::detector::PatternDetector>(R"(\bcannot\b)")}};
}

// Replies from a queue, then a fixed line.
class ScriptedGenerator final : public gc::control::Generator {
 public:
  explicit ScriptedGenerator(std::vector<std::string> replies) : replies_(std::move(replies)) {}
  gc::control::Strategy strategy() const override { return gc::control::Strategy::PromptRemote; }
  std::string model_id() const override { return "scripted"; }
  gc::control::Generated generate(const gc::corpus::DialogueSnippet& s, const gc::egp::ConstraintSet& c,
                                  const gc::control::TokenSink& sink) override {
    seen.push_back(c);
    contexts.push_back(s);
    if (gate) gate();
    if (fail) throw gc::llm::TransportError("upstream down");
    gc::control::Generated g;
    g.text = next_ < replies_.size() ? replies_[next_++] : "I would like the biggest house.";
    for (const auto& p : gc::control::stream_pieces(g.text))
      if (sink) sink(p);
    return g;
  }

  std::vector<gc::egp::ConstraintSet> seen;
  std::vector<gc::corpus::DialogueSnippet> contexts;
  std::function<void()> gate;
  bool fail = false;

 private:
  std::vector<std::string> replies_;
  std::size_t next_ = 0;
};

struct Harness {
  explicit Harness(std::vector<std::string> replies = {})
      : generator(std::make_shared<ScriptedGenerator>(std::move(replies))),
        store(dir.path() / "events"),
        sessions(store, fixture_repo(), pattern_detectors(), [this](auto, const auto&) { return generator; }),
        http(sessions) {
    port = http.bind_any_port();
    thread = std::thread([this] { http.listen(); });
    http.wait_until_ready();
  }
  ~Harness() {
    http.stop();
    thread.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(10, 0);
    return c;
  }

  std::string create(const json& body) {
    auto r = client().Post("/sessions", body.dump(), "application/json");
    EXPECT_EQ(r->status, 201) << r->body;
    return json::parse(r->body)["session_id"];
  }

  httplib::Result turn(const std::string& id, const std::string& text, bool stream = false) {
    httplib::Headers h;
    if (stream) h.emplace("Accept", "text/event-stream");
    return client().Post("/sessions/" + id + "/turns", h, json{{"text", text}}.dump(), "application/json");
  }

  gc::testing::TempDir dir;
  std::shared_ptr<ScriptedGenerator> generator;
  sv::JsonlEventStore store;
  sv::SessionManager sessions;
  sv::HttpService http;
  int port = 0;
  std::thread thread;
};

std::vector<std::pair<std::string, json>> parse_sse(const std::string& body) {
  std::vector<std::pair<std::string, json>> out;
  std::size_t at = 0;
  while (at < body.size()) {
    const auto end = body.find("\n\n", at);
    if (end == std::string::npos) break;
    const auto block = body.substr(at, end - at);
    const auto ev = block.substr(7, block.find('\n') - 7);
    const auto data = block.substr(block.find("data: ") + 6);
    out.emplace_back(ev, json::parse(data));
    at = end + 2;
  }
  return out;
}

}  // namespace

TEST(Sessions, CreateEchoesConstraintsAndRejectsBadFields) {
  Harness h;
  auto r = h.client().Post("/sessions", json{{"constraints", {{"explicit", {22, 44}}}}}.dump(), "application/json");
  ASSERT_EQ(r->status, 201);
  const auto s = json::parse(r->body);
  EXPECT_EQ(s["constraints"]["explicit"], json({22, 44}));
  EXPECT_EQ(s["transcript"].size(), 0u);

  r = h.client().Post("/sessions", json{{"learner_profile", {{"modality verbs", "B1"}, {"would", "Z9"}}}}.dump(),
                      "application/json");
  ASSERT_EQ(r->status, 400);
  const auto err = json::parse(r->body);
  ASSERT_EQ(err["fields"].size(), 2u);
  EXPECT_EQ(err["fields"][0]["field"], "learner_profile.modality verbs");
  EXPECT_EQ(err["fields"][1]["field"], "learner_profile.would");

  r = h.client().Post("/sessions", json{{"constraints", {{"explicit", {999}}}}}.dump(), "application/json");
  EXPECT_EQ(r->status, 400);
  r = h.client().Post("/sessions", json::object().dump(), "application/json");
  EXPECT_EQ(r->status, 400);
  r = h.client().Post("/sessions", "{not json", "application/json");
  EXPECT_EQ(r->status, 400);
}

TEST(Sessions, ProfileBecomesCategoricalConstraintOnNextTurn) {
  Harness h;
  const auto id = h.create({{"learner_profile", {{"Would", "B1"}}}});
  auto r = h.turn(id, "Hello there.");
  ASSERT_EQ(r->status, 200) << r->body;
  ASSERT_EQ(h.generator->seen.size(), 1u);
  EXPECT_EQ(h.generator->seen[0], gc::egp::ConstraintSet::categorical({{"would", gc::CefrLevel::B1}}));
  const auto bot = json::parse(r->body);
  EXPECT_EQ(bot["role"], "bot");
  EXPECT_DOUBLE_EQ(bot["metrics"]["satisfaction"].get<double>(), 1.0);  // 22 is would@B1
}

TEST(Sessions, ProfileRotatesThreeEntriesAtATime) {
  std::vector<gc::egp::GrammarSkill> skills;
  for (int i = 0; i < 4; ++i)
    skills.push_back({static_cast<gc::SkillId>(i + 1), "S", "sub" + std::to_string(i), "g", "Can do.",
                      gc::CefrLevel::A1, gc::egp::SkillType::Form, {"Example."}});
  const gc::egp::SkillRepository repo(skills);
  const auto c = sv::parse_session_config({{"learner_profile", {{"sub0", "A1"}, {"sub1", "A1"}, {"sub2", "A1"}, {"sub3", "A1"}}}}, repo);
  auto names = [&](std::size_t k) {
    std::vector<std::string> v;
    const auto cs = sv::constraints_for_turn(c, k);
    for (const auto& p : cs.pairs()) v.push_back(p.subcategory);
    return v;
  };
  EXPECT_EQ(names(0), (std::vector<std::string>{"sub0", "sub1", "sub2"}));
  EXPECT_EQ(names(1), (std::vector<std::string>{"sub3", "sub0", "sub1"}));
  EXPECT_EQ(names(2), (std::vector<std::string>{"sub2", "sub3", "sub0"}));
}

TEST(Turns, LearnerDetectionsSpansAndTranscript) {
  Harness h({"It was the biggest house. I would buy it."});
  const auto id = h.create({{"constraints", {{"explicit", {22, 3}}}}});
  auto r = h.turn(id, "I would love a cat.");
  ASSERT_EQ(r->status, 200) << r->body;
  const auto bot = json::parse(r->body);
  EXPECT_EQ(bot["learner_detections"], json({22}));
  EXPECT_EQ(bot["detections"], json({3, 22}));
  EXPECT_DOUBLE_EQ(bot["metrics"]["satisfaction"].get<double>(), 1.0);
  const std::string text = bot["text"];
  for (const auto& s : bot["skill_spans"]) {
    EXPECT_GT(s["probability"].get<double>(), 0.5);
    const auto piece = text.substr(s["char_begin"], s["char_end"].get<std::size_t>() - s["char_begin"].get<std::size_t>());
    if (s["skill_id"] == 3) EXPECT_EQ(piece, "the biggest");
    if (s["skill_id"] == 22) EXPECT_EQ(piece, "would");
  }
  // context handed to the generator is the learner turn
  ASSERT_EQ(h.generator->contexts.size(), 1u);
  EXPECT_EQ(h.generator->contexts[0].context.back().text, "I would love a cat.");

  h.turn(id, "Nice.");
  const auto session = json::parse(h.client().Get("/sessions/" + id)->body);
  ASSERT_EQ(session["transcript"].size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(session["transcript"][i]["role"], i % 2 ? "bot" : "learner");
  EXPECT_EQ(h.turn(id, "   ")->status, 400);
  EXPECT_EQ(h.turn("nope", "hi")->status, 404);
}

TEST(Turns, StreamedPiecesConcatenateToFinalText) {
  Harness h({"Well, I would say the biggest one is fine!  Really."});
  const auto id = h.create({{"constraints", {{"explicit", {22}}}}});
  auto r = h.turn(id, "Which one?", true);
  ASSERT_EQ(r->status, 200);
  EXPECT_NE(r->get_header_value("Content-Type").find("text/event-stream"), std::string::npos);
  const auto events = parse_sse(r->body);
  ASSERT_GE(events.size(), 3u);
  std::string joined;
  for (std::size_t i = 0; i + 1 < events.size(); ++i) {
    EXPECT_EQ(events[i].first, "token");
    joined += events[i].second["text"].get<std::string>();
  }
  EXPECT_EQ(events.back().first, "done");
  EXPECT_EQ(joined, events.back().second["text"]);
  EXPECT_EQ(joined, "Well, I would say the biggest one is fine!  Really.");
}

TEST(Turns, ConcurrentTurnIsRejectedWithConflict) {
  Harness h;
  std::promise<void> entered, release;
  auto released = release.get_future().share();
  h.generator->gate = [&] {
    entered.set_value();
    released.wait();
    h.generator->gate = nullptr;
  };
  const auto id = h.create({{"constraints", {{"explicit", {22}}}}});
  auto first = std::async(std::launch::async, [&] { return h.turn(id, "First."); });
  entered.get_future().wait();
  auto second = h.turn(id, "Second.");
  EXPECT_EQ(second->status, 409);
  release.set_value();
  EXPECT_EQ(first.get()->status, 200);
  EXPECT_EQ(h.turn(id, "Third.")->status, 200);
}

TEST(Turns, GenerationFailureIsBadGatewayAndStored) {
  Harness h;
  h.generator->fail = true;
  const auto id = h.create({{"constraints", {{"explicit", {22}}}}});
  auto r = h.turn(id, "Hello.");
  ASSERT_EQ(r->status, 502);
  const auto body = json::parse(r->body);
  EXPECT_TRUE(body["turn"]["failed"].get<bool>());
  const auto session = json::parse(h.client().Get("/sessions/" + id)->body);
  ASSERT_EQ(session["transcript"].size(), 2u);
  EXPECT_TRUE(session["transcript"][1]["failed"].get<bool>());
  auto s = h.turn(id, "Again.", true);
  const auto events = parse_sse(s->body);
  ASSERT_FALSE(events.empty());
  EXPECT_EQ(events.back().first, "error");
  EXPECT_EQ(events.back().second["status"], 502);
}

TEST(Progress, CountsExposuresAndProductions) {
  Harness h({"I would go.", "We would stay.", "I cannot. I would not."});
  const auto id = h.create({{"constraints", {{"explicit", {22, 44}}}}});
  auto fresh = json::parse(h.client().Get("/sessions/" + id + "/progress")->body);
  EXPECT_EQ(fresh["exposures"], json({{"22", 0}, {"44", 0}}));
  EXPECT_EQ(fresh["productions"], json({{"22", 0}, {"44", 0}}));
  h.turn(id, "Hi.");
  h.turn(id, "I would too.");
  h.turn(id, "Ok.");
  const auto p = json::parse(h.client().Get("/sessions/" + id + "/progress")->body);
  EXPECT_EQ(p["exposures"]["22"], 3);
  EXPECT_EQ(p["exposures"]["44"], 1);
  EXPECT_EQ(p["productions"]["22"], 1);
  EXPECT_EQ(p["bot_turns"], 3);
  EXPECT_EQ(h.client().Get("/sessions/unknown/progress")->status, 404);
}

TEST(Skills, FilterByLevelAndCategory) {
  Harness h;
  auto r = h.client().Get("/skills?level=A2");
  ASSERT_EQ(r->status, 200);
  const auto a2 = json::parse(r->body);
  EXPECT_EQ(a2.size(), fixture_repo().filter(std::nullopt, gc::CefrLevel::A2).size());
  for (const auto& s : a2) EXPECT_EQ(s["level"], "A2");
  const auto would = json::parse(h.client().Get("/skills?category=would&level=B1")->body);
  EXPECT_EQ(would.size(), 11u);
  EXPECT_TRUE(would[0]["has_detector"].get<bool>());
  EXPECT_EQ(json::parse(h.client().Get("/skills?category=Modality")->body).size(), 23u);
  EXPECT_EQ(h.client().Get("/skills?level=Q1")->status, 400);
}

TEST(Detect, SpansOverTheMatchedRegion) {
  Harness h;
  auto r = h.client().Post("/detect", json{{"text", "It was the biggest house in the street."}, {"skill_ids", {3}}}.dump(),
                           "application/json");
  ASSERT_EQ(r->status, 200);
  const auto d = json::parse(r->body);
  EXPECT_EQ(d["detections"], json({3}));
  ASSERT_EQ(d["skill_spans"].size(), 1u);
  EXPECT_EQ(d["skill_spans"][0]["token_begin"], 2);
  EXPECT_EQ(d["skill_spans"][0]["token_end"], 4);
  EXPECT_EQ(d["skill_spans"][0]["char_begin"], 7);
  EXPECT_EQ(d["skill_spans"][0]["char_end"], 18);
  const auto empty = json::parse(
      h.client().Post("/detect", json{{"text", "It was the biggest."}, {"skill_ids", json::array()}}.dump(), "application/json")->body);
  EXPECT_TRUE(empty["detections"].empty());
  EXPECT_EQ(h.client().Post("/detect", json{{"text", "x"}, {"skill_ids", {7}}}.dump(), "application/json")->status, 400);
}

TEST(Replay, RestoredSessionsMatchAndSatisfactionRecomputes) {
  gc::testing::TempDir keep;
  std::string id;
  json before;
  {
    Harness h({"I would go.", "The biggest one.", "I cannot and I would not."});
    id = h.create({{"learner_profile", {{"would", "B1"}, {"superlatives", "A2"}}}});
    for (const char* t : {"Hi.", "Why?", "Fine."}) ASSERT_EQ(h.turn(id, t)->status, 200);
    before = json::parse(h.client().Get("/sessions/" + id)->body);
    EXPECT_TRUE(sv::verify_replay(h.store, fixture_repo(), pattern_detectors()).empty());

    // the log is {ts, session, kind, payload} lines
    std::ifstream in(h.dir.path() / "events" / "sessions" / (id + ".jsonl"));
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line); ++lines) {
      const auto e = json::parse(line);
      EXPECT_EQ(e["session"], id);
      EXPECT_TRUE(e.contains("ts") && e.contains("kind") && e.contains("payload"));
    }
    EXPECT_EQ(lines, 7u);
    std::filesystem::copy(h.dir.path() / "events", keep.path() / "events", std::filesystem::copy_options::recursive);
  }
  sv::JsonlEventStore store(keep.path() / "events");
  auto gen = std::make_shared<ScriptedGenerator>(std::vector<std::string>{});
  sv::SessionManager restored(store, fixture_repo(), pattern_detectors(), [&](auto, const auto&) { return gen; });
  EXPECT_EQ(restored.describe(id), before);
  EXPECT_EQ(restored.progress(id)["bot_turns"], 3);

  // A stored score that disagrees with the text is caught.
  const auto path = keep.path() / "events" / "sessions" / (id + ".jsonl");
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  auto e = json::parse(lines[2]);
  ASSERT_EQ(e["kind"], "bot_turn");
  e["payload"]["metrics"]["satisfaction"] = 0.25;
  lines[2] = e.dump();
  std::ofstream(path) << [&] {
    std::string s;
    for (const auto& l : lines) s += l + "\n";
    return s;
  }();
  const auto bad = sv::verify_replay(sv::JsonlEventStore(keep.path() / "events"), fixture_repo(), pattern_detectors());
  ASSERT_EQ(bad.size(), 1u);
  EXPECT_EQ(bad[0].what, "satisfaction differs");
}

TEST(Config, FileWithEnvironmentOverrides) {
  gc::testing::TempDir dir;
  const auto file = dir.write("cfg.json", R"({"service": {"port": 9000, "skills": "s.tsv", "strategy": "decode",
    "decoding": {"preset": "tuned"}, "patterns": {"22": "\\bwould\\b"}, "remote": {"model": "m1"}}})");
  auto env = [](const char* name) -> std::optional<std::string> {
    if (std::string(name) == "GRAMMARCTL_PORT") return "9100";
    if (std::string(name) == "GRAMMARCTL_REMOTE_MODEL") return "m2";
    return std::nullopt;
  };
  const auto c = sv::load_service_config(file, env);
  EXPECT_EQ(c.port, 9100);
  EXPECT_EQ(c.skills, "s.tsv");
  EXPECT_EQ(c.strategy, gc::control::Strategy::Decode);
  EXPECT_DOUBLE_EQ(c.decoding.alpha, 0.99);
  EXPECT_EQ(c.patterns.at(22), R"(\bwould\b)");
  EXPECT_EQ(c.remote->model, "m2");
  auto bad_env = [](const char* name) -> std::optional<std::string> {
    return std::string(name) == "GRAMMARCTL_PORT" ? std::optional<std::string>("abc") : std::nullopt;
  };
  EXPECT_THROW(sv::load_service_config(file, bad_env), gc::ValidationError);
  EXPECT_THROW(sv::load_service_config(dir.path() / "missing.json", env), gc::LookupError);
}

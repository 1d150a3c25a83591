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

#include <memory>
#include <string>

#include "httplib.h"
#include "json.hpp"

#include "grammarctl/service/session.hpp"

namespace grammarctl::service {

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

inline std::string sse(const std::string& event, const nlohmann::json& data) {
  return "event: " + event + "\ndata: " + data.dump() + "\n\n";
}

inline bool wants_stream(const httplib::Request& req) {
  return req.get_header_value("Accept").find("text/event-stream") != std::string::npos ||
         req.get_param_value("stream") == "1";
}

// Maps library exceptions to HTTP statuses.
template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const RequestError& e) {
    nlohmann::json fields = nlohmann::json::array();
    for (const auto& fe : e.fields()) fields.push_back({{"field", fe.field}, {"message", fe.message}});
    send_json(res, 400, {{"error", e.what()}, {"fields", fields}});
  } catch (const nlohmann::json::exception& e) {
    send_error(res, 400, std::string("malformed JSON: ") + e.what());
  } catch (const LookupError& e) {
    send_error(res, 404, e.what());
  } catch (const SessionBusy& e) {
    send_error(res, 409, e.what());
  } catch (const GenerationFailed& e) {
    send_json(res, 502, {{"error", e.what()}, {"turn", e.turn()}});
  } catch (const ValidationError& e) {
    send_error(res, 400, e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, e.what());
  }
}

}  // namespace detail

// JSON-over-HTTP front end of a SessionManager. Turn responses stream as
// server-sent events ("token" pieces, then "done" or "error") when the
// client asks for text/event-stream.
class HttpService {
 public:
  explicit HttpService(SessionManager& sessions) : sessions_(sessions) { routes(); }

  httplib::Server& server() { return server_; }

  int bind_any_port(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  bool listen() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  void routes() {
    using detail::guarded;
    using detail::send_json;

    server_.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 201, sessions_.create(nlohmann::json::parse(req.body))); });
    });

    server_.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, sessions_.describe(req.matches[1])); });
    });

    server_.Put(R"(/sessions/([^/]+)/constraints)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, sessions_.update(req.matches[1], nlohmann::json::parse(req.body))); });
    });

    server_.Get(R"(/sessions/([^/]+)/progress)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, sessions_.progress(req.matches[1])); });
    });

    server_.Post(R"(/sessions/([^/]+)/turns)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = nlohmann::json::parse(req.body);
        if (!body.is_object() || !body.contains("text") || !body["text"].is_string())
          throw RequestError("text", "required string");
        const std::string text = body["text"];
        auto lease = std::make_shared<TurnLease>(sessions_.begin_turn(req.matches[1]));
        if (!detail::wants_stream(req)) {
          send_json(res, 200, sessions_.run_turn(*lease, text));
          return;
        }
        res.status = 200;
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider(
            "text/event-stream", [this, lease, text](std::size_t, httplib::DataSink& sink) {
              auto write = [&](const std::string& s) { return sink.write(s.data(), s.size()); };
              try {
                const auto turn = sessions_.run_turn(
                    *lease, text, [&](const std::string& piece) { write(detail::sse("token", {{"text", piece}})); });
                write(detail::sse("done", turn));
              } catch (const GenerationFailed& e) {
                write(detail::sse("error", {{"error", e.what()}, {"status", 502}, {"turn", e.turn()}}));
              } catch (const std::exception& e) {
                write(detail::sse("error", {{"error", e.what()}, {"status", is_input_error(e) ? 400 : 500}}));
              }
              sink.done();
              return true;
            });
      });
    });

    server_.Get("/skills", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::optional<CefrLevel> level;
        if (req.has_param("level")) level = parse_level(req.get_param_value("level"));
        const auto category = req.get_param_value("category");
        nlohmann::json out = nlohmann::json::array();
        for (const auto& s : sessions_.repo().skills()) {
          if (!category.empty() && !text::iequals(s.subcategory, category) && !text::iequals(s.super_category, category))
            continue;
          if (level && s.level != *level) continue;
          out.push_back({{"id", s.id},
                         {"super_category", s.super_category},
                         {"subcategory", s.subcategory},
                         {"guideword", s.guideword},
                         {"can_do", s.can_do},
                         {"level", to_string(s.level)},
                         {"has_detector", sessions_.detectors().count(s.id) > 0}});
        }
        send_json(res, 200, out);
      });
    });

    server_.Post("/detect", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = nlohmann::json::parse(req.body);
        if (!body.is_object() || !body.contains("text") || !body["text"].is_string())
          throw RequestError("text", "required string");
        const auto ids = body.value("skill_ids", std::vector<SkillId>{});
        std::vector<FieldError> missing;
        for (auto id : ids)
          if (!sessions_.detectors().count(id))
            missing.push_back({"skill_ids", "no detector for skill " + std::to_string(id)});
        if (!missing.empty()) throw RequestError(std::move(missing));
        const SkillSet only(ids.begin(), ids.end());
        const auto det = detect_turn(body["text"].get<std::string>(), sessions_.detectors(), &only);
        nlohmann::json spans = nlohmann::json::array();
        for (const auto& s : det.spans) spans.push_back(detector::to_json(s));
        send_json(res, 200, {{"detections", det.skills}, {"skill_spans", spans}});
      });
    });
  }

  SessionManager& sessions_;
  httplib::Server server_;
};

}  // namespace grammarctl::service

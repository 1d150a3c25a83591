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
#include <cstdlib>
#include <memory>
#include <semaphore>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/llm/chat.hpp"

namespace grammarctl::llm {

struct RemoteConfig {
  std::string model;                       // model name sent in the request body
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key_env = "OPENAI_API_KEY";
  std::size_t max_in_flight = 8;
  std::size_t max_retries = 2;
  std::chrono::milliseconds backoff{500};
  std::chrono::seconds timeout{60};
};

inline RemoteConfig remote_config_from_json(const nlohmann::json& j) {
  RemoteConfig c;
  c.model = j.at("model").get<std::string>();
  c.base_url = j.value("base_url", c.base_url);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.backoff = std::chrono::milliseconds(j.value("backoff_ms", static_cast<long>(c.backoff.count())));
  c.timeout = std::chrono::seconds(j.value("timeout_s", static_cast<long>(c.timeout.count())));
  if (c.max_in_flight == 0) throw ValidationError("max_in_flight must be positive");
  return c;
}

// Client for OpenAI-compatible chat-completion endpoints. Transport errors,
// 429 and 5xx answers are retried with linear backoff; a bounded number of
// requests may be in flight at once.
class HttpChatModel : public ChatModel {
 public:
  explicit HttpChatModel(RemoteConfig cfg)
      : cfg_(std::move(cfg)), slots_(static_cast<std::ptrdiff_t>(cfg_.max_in_flight)) {
    if (cfg_.model.empty()) throw ValidationError("remote model needs a model name");
    const auto scheme = cfg_.base_url.find("://");
    if (scheme == std::string::npos) throw ValidationError("base_url needs a scheme: " + cfg_.base_url);
    const auto slash = cfg_.base_url.find('/', scheme + 3);
    origin_ = cfg_.base_url.substr(0, slash);
    path_ = (slash == std::string::npos ? std::string() : cfg_.base_url.substr(slash));
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    path_ += "/chat/completions";
  }

  std::string id() const override { return cfg_.model; }

  std::string complete(std::span<const ChatMessage> messages, const ChatParams& params) override {
    validate(messages);
    nlohmann::json body = {{"model", cfg_.model},
                           {"messages", to_json(messages)},
                           {"temperature", params.temperature},
                           {"max_tokens", params.max_tokens}};
    const std::string payload = body.dump();
    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);

    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    for (std::size_t attempt = 0;; ++attempt) {
      try {
        return attempt_once(headers, payload);
      } catch (const ChatError& e) {
        if (!e.retryable() || attempt >= cfg_.max_retries) throw;
      }
      std::this_thread::sleep_for(cfg_.backoff * static_cast<long>(attempt + 1));
    }
  }
  using ChatModel::complete;

 private:
  std::string attempt_once(const httplib::Headers& headers, const std::string& payload) const {
    httplib::Client cli(origin_);
    cli.set_connection_timeout(cfg_.timeout);
    cli.set_read_timeout(cfg_.timeout);
    auto res = cli.Post(path_, headers, payload, "application/json");
    if (!res) throw TransportError("request to " + origin_ + path_ + " failed: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
      throw TransportError("HTTP " + std::to_string(res->status) + " from " + origin_);
    if (res->status >= 400) {
      if (res->body.find("context_length") != std::string::npos || res->body.find("maximum context") != std::string::npos)
        throw ContextOverflowError("remote model rejected the request length: " + res->body.substr(0, 200));
      throw ChatError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200), false);
    }
    try {
      auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ChatError(std::string("malformed completion response: ") + e.what(), false);
    }
  }

  RemoteConfig cfg_;
  std::string origin_, path_;
  std::counting_semaphore<> slots_;
};

}  // namespace grammarctl::llm

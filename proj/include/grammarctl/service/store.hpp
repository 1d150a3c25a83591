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
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"

namespace grammarctl::service {

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

struct Event {
  std::string ts;
  std::string session;
  std::string kind;
  nlohmann::json payload;
};

inline nlohmann::json to_json(const Event& e) {
  return {{"ts", e.ts}, {"session", e.session}, {"kind", e.kind}, {"payload", e.payload}};
}

inline Event event_from_json(const nlohmann::json& j) {
  try {
    return {j.at("ts").get<std::string>(), j.at("session").get<std::string>(), j.at("kind").get<std::string>(),
            j.at("payload")};
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad event: ") + e.what());
  }
}

// Append-only event storage, one stream per session.
class EventStore {
 public:
  virtual ~EventStore() = default;
  virtual void append(const Event& e) = 0;
  virtual std::vector<Event> events(const std::string& session) const = 0;
  virtual std::vector<std::string> sessions() const = 0;
};

// sessions/<id>.jsonl per session plus index.jsonl listing sessions in
// creation order.
class JsonlEventStore final : public EventStore {
 public:
  explicit JsonlEventStore(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_ / "sessions");
    std::ifstream in(dir_ / "index.jsonl");
    for (std::string line; std::getline(in, line);)
      if (!text::trim(line).empty()) index_.push_back(nlohmann::json::parse(line).at("session").get<std::string>());
  }

  void append(const Event& e) override {
    if (e.session.empty() || e.session.find_first_of("/\\.") != std::string::npos)
      throw ValidationError("bad session id '" + e.session + "'");
    std::lock_guard lock(mutex_);
    const auto path = dir_ / "sessions" / (e.session + ".jsonl");
    if (std::find(index_.begin(), index_.end(), e.session) == index_.end()) {
      std::ofstream idx(dir_ / "index.jsonl", std::ios::app);
      idx << nlohmann::json{{"session", e.session}, {"ts", e.ts}}.dump() << '\n';
      if (!idx) throw RuntimeFailure("cannot write session index");
      index_.push_back(e.session);
    }
    std::ofstream out(path, std::ios::app);
    out << to_json(e).dump() << '\n';
    out.flush();
    if (!out) throw RuntimeFailure("cannot append to " + path.string());
  }

  std::vector<Event> events(const std::string& session) const override {
    std::lock_guard lock(mutex_);
    std::vector<Event> out;
    std::ifstream in(dir_ / "sessions" / (session + ".jsonl"));
    std::size_t row = 0;
    for (std::string line; std::getline(in, line);) {
      ++row;
      if (text::trim(line).empty()) continue;
      try {
        out.push_back(event_from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(e.what(), row);
      }
    }
    return out;
  }

  std::vector<std::string> sessions() const override {
    std::lock_guard lock(mutex_);
    return index_;
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  std::vector<std::string> index_;
};

}  // namespace grammarctl::service

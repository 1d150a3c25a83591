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
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"
#include "grammarctl/egp/prompts.hpp"

namespace grammarctl::llm {

enum class Role : std::uint8_t { System, User, Assistant };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

inline Role parse_role(std::string_view s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  throw ValidationError("unknown chat role '" + std::string(s) + "'");
}

struct ChatMessage {
  Role role = Role::User;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

inline void validate(std::span<const ChatMessage> messages) {
  if (messages.empty()) throw ValidationError("chat request has no messages");
  for (const auto& m : messages)
    if (text::trim(m.content).empty())
      throw ValidationError("chat message with role '" + std::string(to_string(m.role)) + "' is empty");
}

inline std::vector<ChatMessage> to_messages(const egp::Prompt& p) {
  std::vector<ChatMessage> out;
  if (!p.system.empty()) out.push_back({Role::System, p.system});
  out.push_back({Role::User, p.user});
  return out;
}

inline nlohmann::json to_json(std::span<const ChatMessage> messages) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : messages) arr.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  return arr;
}

struct ChatParams {
  double temperature = 0.0;  // greedy unless asked otherwise
  std::size_t max_tokens = 256;
};

// Transport problems may succeed on retry; everything else is final.
class ChatError : public RuntimeFailure {
 public:
  ChatError(const std::string& what, bool retryable) : RuntimeFailure(what), retryable_(retryable) {}
  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

class TransportError : public ChatError {
 public:
  explicit TransportError(const std::string& what) : ChatError(what, true) {}
};

class ContextOverflowError : public ChatError {
 public:
  explicit ContextOverflowError(const std::string& what) : ChatError(what, false) {}
};

// A chat-completion model. Implementations must accept concurrent calls.
class ChatModel {
 public:
  virtual ~ChatModel() = default;
  virtual std::string id() const = 0;
  virtual std::string complete(std::span<const ChatMessage> messages, const ChatParams& params) = 0;

  std::string complete(const egp::Prompt& prompt, const ChatParams& params = {}) {
    auto m = to_messages(prompt);
    return complete(m, params);
  }
};

inline std::size_t count_tokens(std::span<const ChatMessage> messages) {
  std::size_t n = 0;
  for (const auto& m : messages) n += text::tokenize(m.content).size();
  return n;
}

// Canned replies keyed by the last user message. Unknown requests get the
// fallback reply, or a transport error when no fallback is set.
class StubChatModel : public ChatModel {
 public:
  explicit StubChatModel(std::string id = "stub", std::optional<std::string> fallback = std::nullopt,
                         std::size_t context_limit = 0)
      : id_(std::move(id)), fallback_(std::move(fallback)), context_limit_(context_limit) {}

  void add(std::string user_message, std::string reply) {
    std::lock_guard lock(mutex_);
    table_[std::move(user_message)] = std::move(reply);
  }

  std::string id() const override { return id_; }
  std::size_t calls() const { return calls_; }

  std::string complete(std::span<const ChatMessage> messages, const ChatParams&) override {
    validate(messages);
    ++calls_;
    if (context_limit_ && count_tokens(messages) > context_limit_)
      throw ContextOverflowError("request of " + std::to_string(count_tokens(messages)) + " tokens exceeds context of " +
                                 std::to_string(context_limit_));
    std::lock_guard lock(mutex_);
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
      if (it->role != Role::User) continue;
      if (auto hit = table_.find(it->content); hit != table_.end()) return hit->second;
      break;
    }
    if (fallback_) return *fallback_;
    throw TransportError("stub model '" + id_ + "' has no canned reply");
  }

  using ChatModel::complete;

 private:
  std::string id_;
  std::optional<std::string> fallback_;
  std::size_t context_limit_;
  std::map<std::string, std::string> table_;
  std::mutex mutex_;
  std::atomic<std::size_t> calls_{0};
};

// Reply computed by a callable; handy for scripted test doubles.
class FunctionChatModel : public ChatModel {
 public:
  using Fn = std::function<std::string(std::span<const ChatMessage>, const ChatParams&)>;
  FunctionChatModel(std::string id, Fn fn) : id_(std::move(id)), fn_(std::move(fn)) {}

  std::string id() const override { return id_; }
  std::string complete(std::span<const ChatMessage> messages, const ChatParams& params) override {
    validate(messages);
    return fn_(messages, params);
  }
  using ChatModel::complete;

 private:
  std::string id_;
  Fn fn_;
};

}  // namespace grammarctl::llm

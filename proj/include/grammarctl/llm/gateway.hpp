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
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/llm/chat.hpp"
#include "grammarctl/llm/logit_model.hpp"

namespace grammarctl::llm {

// Chat interface over a local logit model: flattens the messages into one
// prompt and decodes greedily.
class LocalChatModel : public ChatModel {
 public:
  explicit LocalChatModel(std::shared_ptr<const LogitModel> lm, std::size_t max_tokens = 128)
      : lm_(std::move(lm)), max_tokens_(max_tokens) {}

  std::string id() const override { return lm_->id(); }
  const LogitModel& model() const { return *lm_; }

  std::string complete(std::span<const ChatMessage> messages, const ChatParams& params) override {
    validate(messages);
    const auto prompt = lm_->vocab().encode(flatten_messages(messages));
    lm_->check_context(prompt.size(), 0);
    const auto ids = greedy_decode(*lm_, prompt, std::min(params.max_tokens, max_tokens_));
    return lm_->vocab().decode(ids);
  }
  using ChatModel::complete;

 private:
  std::shared_ptr<const LogitModel> lm_;
  std::size_t max_tokens_;
};

// Named chat and logit models plus an append-only audit log of every chat
// request and reply.
class Gateway {
 public:
  Gateway() = default;
  explicit Gateway(std::filesystem::path audit_log) : audit_path_(std::move(audit_log)) {
    if (audit_path_->has_parent_path()) std::filesystem::create_directories(audit_path_->parent_path());
  }

  void add_chat(std::shared_ptr<ChatModel> m, std::optional<std::string> name = std::nullopt) {
    std::lock_guard lock(mutex_);
    auto key = name.value_or(m->id());
    chat_[std::move(key)] = std::move(m);
  }

  void add_logit(std::shared_ptr<const LogitModel> m, std::optional<std::string> name = std::nullopt) {
    std::lock_guard lock(mutex_);
    auto key = name.value_or(m->id());
    logit_[std::move(key)] = std::move(m);
  }

  std::shared_ptr<ChatModel> chat(const std::string& name) const {
    std::lock_guard lock(mutex_);
    auto it = chat_.find(name);
    if (it == chat_.end()) throw LookupError("no chat model registered as '" + name + "'");
    return it->second;
  }

  std::shared_ptr<const LogitModel> logit(const std::string& name) const {
    std::lock_guard lock(mutex_);
    auto it = logit_.find(name);
    if (it == logit_.end()) throw LookupError("no local model registered as '" + name + "'");
    return it->second;
  }

  bool has_chat(const std::string& name) const {
    std::lock_guard lock(mutex_);
    return chat_.count(name) > 0;
  }

  std::string chat_complete(const std::string& name, std::span<const ChatMessage> messages,
                            const ChatParams& params = {}) {
    auto model = chat(name);
    try {
      auto reply = model->complete(messages, params);
      audit(name, messages, params, &reply, nullptr);
      return reply;
    } catch (const std::exception& e) {
      audit(name, messages, params, nullptr, e.what());
      throw;
    }
  }

  std::size_t audited() const {
    std::lock_guard lock(audit_mutex_);
    return audited_;
  }

 private:
  void audit(const std::string& name, std::span<const ChatMessage> messages, const ChatParams& params,
             const std::string* reply, const char* error) {
    std::lock_guard lock(audit_mutex_);
    ++audited_;
    if (!audit_path_) return;
    nlohmann::json j = {{"ts", std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::system_clock::now().time_since_epoch())
                                   .count()},
                        {"model", name},
                        {"messages", to_json(messages)},
                        {"temperature", params.temperature},
                        {"max_tokens", params.max_tokens}};
    if (reply) j["reply"] = *reply;
    if (error) j["error"] = error;
    std::ofstream(*audit_path_, std::ios::app) << j.dump() << '\n';
  }

  mutable std::mutex mutex_, audit_mutex_;
  std::map<std::string, std::shared_ptr<ChatModel>> chat_;
  std::map<std::string, std::shared_ptr<const LogitModel>> logit_;
  std::optional<std::filesystem::path> audit_path_;
  std::size_t audited_ = 0;
};

// One gateway entry seen as a ChatModel; calls go through the audit log.
// The gateway must outlive it.
class RoutedChatModel : public ChatModel {
 public:
  RoutedChatModel(Gateway& gateway, std::string name) : gateway_(gateway), name_(std::move(name)) {
    gateway_.chat(name_);  // fail early on an unknown name
  }

  std::string id() const override { return gateway_.chat(name_)->id(); }
  std::string complete(std::span<const ChatMessage> messages, const ChatParams& params) override {
    return gateway_.chat_complete(name_, messages, params);
  }
  using ChatModel::complete;

 private:
  Gateway& gateway_;
  std::string name_;
};

}  // namespace grammarctl::llm

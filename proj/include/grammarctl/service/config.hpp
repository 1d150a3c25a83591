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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "json.hpp"

#include "grammarctl/control/decoding.hpp"
#include "grammarctl/control/generation.hpp"
#include "grammarctl/core/errors.hpp"
#include "grammarctl/llm/remote.hpp"

namespace grammarctl::service {

// Settings for `serve`, read from one JSON file and overridden by
// GRAMMARCTL_* environment variables.
struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir = "service-data";
  std::filesystem::path skills;        // skill table (TSV)
  std::filesystem::path detectors;     // trained detector bundle directory
  std::map<SkillId, std::string> patterns;  // rule detectors by skill id
  control::Strategy strategy = control::Strategy::PromptRemote;
  control::DecodingParams decoding;
  std::optional<llm::RemoteConfig> remote;
  std::filesystem::path local_model;   // saved TinyLM directory
  std::filesystem::path adapter;       // LoRA adapter directory for finetune/hybrid
  std::filesystem::path discriminators;  // future discriminator bundle
  std::string stub_reply;              // offline stub model reply when no model is configured
};

inline ServiceConfig service_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("service config must be an object");
  ServiceConfig c;
  try {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.data_dir = j.value("data_dir", c.data_dir.string());
    c.skills = j.value("skills", std::string());
    c.detectors = j.value("detectors", std::string());
    if (j.contains("patterns"))
      for (const auto& [k, v] : j["patterns"].items()) c.patterns[static_cast<SkillId>(std::stoul(k))] = v.get<std::string>();
    if (j.contains("strategy")) c.strategy = control::parse_strategy(j["strategy"].get<std::string>());
    if (j.contains("decoding")) c.decoding = control::decoding_params_from_json(j["decoding"]);
    if (j.contains("remote")) c.remote = llm::remote_config_from_json(j["remote"]);
    c.local_model = j.value("local_model", std::string());
    c.adapter = j.value("adapter", std::string());
    c.discriminators = j.value("discriminators", std::string());
    c.stub_reply = j.value("stub_reply", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("bad service config: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ValidationError("pattern keys must be skill ids");
  }
  if (c.port < 0 || c.port > 65535) throw ValidationError("port out of range");
  return c;
}

using EnvLookup = std::function<std::optional<std::string>(const char*)>;

inline std::optional<std::string> process_env(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::optional<std::string>(v) : std::nullopt;
}

inline void apply_env(ServiceConfig& c, const EnvLookup& env = process_env) {
  if (auto v = env("GRAMMARCTL_HOST")) c.host = *v;
  if (auto v = env("GRAMMARCTL_PORT")) {
    try {
      c.port = std::stoi(*v);
    } catch (const std::exception&) {
      throw ValidationError("GRAMMARCTL_PORT is not a number: '" + *v + "'");
    }
  }
  if (auto v = env("GRAMMARCTL_DATA_DIR")) c.data_dir = *v;
  if (auto v = env("GRAMMARCTL_SKILLS")) c.skills = *v;
  if (auto v = env("GRAMMARCTL_DETECTORS")) c.detectors = *v;
  if (auto v = env("GRAMMARCTL_STRATEGY")) c.strategy = control::parse_strategy(*v);
  if (auto v = env("GRAMMARCTL_LOCAL_MODEL")) c.local_model = *v;
  if (auto v = env("GRAMMARCTL_REMOTE_MODEL")) {
    if (!c.remote) c.remote.emplace();
    c.remote->model = *v;
  }
  if (auto v = env("GRAMMARCTL_REMOTE_BASE_URL")) {
    if (!c.remote) c.remote.emplace();
    c.remote->base_url = *v;
  }
}

inline ServiceConfig load_service_config(const std::optional<std::filesystem::path>& file,
                                         const EnvLookup& env = process_env) {
  ServiceConfig c;
  if (file) {
    std::ifstream in(*file);
    if (!in) throw LookupError("cannot open config " + file->string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(file->string() + ": " + e.what());
    }
    c = service_config_from_json(j.contains("service") ? j["service"] : j);
  }
  apply_env(c, env);
  return c;
}

}  // namespace grammarctl::service

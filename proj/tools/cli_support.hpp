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
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "grammarctl/control/decoding.hpp"
#include "grammarctl/control/finetune_data.hpp"
#include "grammarctl/control/generation.hpp"
#include "grammarctl/control/scorer.hpp"
#include "grammarctl/corpus/adapters.hpp"
#include "grammarctl/detector/bundle.hpp"
#include "grammarctl/egp/repository.hpp"
#include "grammarctl/llm/gateway.hpp"
#include "grammarctl/llm/lora.hpp"
#include "grammarctl/llm/remote.hpp"
#include "grammarctl/service/store.hpp"

namespace grammarctl::cli {

using nlohmann::json;
namespace fs = std::filesystem;

// ------------------------------------------------------------------ options

// Binds flags to variables. After parsing, `settle` fills every variable
// whose flag was not given from the config file: "key" is looked up in the
// command's own section, "section.key" in the named one.
class Binder {
 public:
  Binder(CLI::App* cmd, std::string section) : cmd_(cmd), section_(std::move(section)) {}

  CLI::App* cmd() const { return cmd_; }

  template <class T>
  CLI::Option* option(const std::string& flag, T& var, const std::string& key, const std::string& help) {
    auto* o = cmd_->add_option(flag, var, help);
    fills_.push_back([o, &var, key, this](const json& cfg) {
      if (o->count()) return;
      if (const auto* v = lookup(cfg, key)) assign(var, *v);
    });
    return o;
  }

  CLI::Option* flag(const std::string& flag, bool& var, const std::string& key, const std::string& help) {
    auto* o = cmd_->add_flag(flag, var, help);
    fills_.push_back([o, &var, key, this](const json& cfg) {
      if (o->count()) return;
      if (const auto* v = lookup(cfg, key)) var = v->get<bool>();
    });
    return o;
  }

  void settle(const json& cfg) const {
    try {
      for (const auto& f : fills_) f(cfg);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("config value has the wrong type: ") + e.what());
    }
  }

 private:
  template <class T>
  static void assign(T& var, const json& v) {
    var = v.get<T>();
  }
  template <class T>
  static void assign(std::optional<T>& var, const json& v) {
    if (v.is_null()) var.reset();
    else var = v.get<T>();
  }

  const json* lookup(const json& cfg, const std::string& key) const {
    const auto dot = key.find('.');
    const std::string sec = dot == std::string::npos ? section_ : key.substr(0, dot);
    const std::string k = dot == std::string::npos ? key : key.substr(dot + 1);
    if (!cfg.contains(sec) || !cfg[sec].is_object() || !cfg[sec].contains(k)) return nullptr;
    return &cfg[sec][k];
  }

  CLI::App* cmd_;
  std::string section_;
  std::vector<std::function<void(const json&)>> fills_;
};

inline json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open config " + path);
  try {
    auto j = json::parse(in);
    if (!j.is_object()) throw ValidationError("config must be a JSON object with one section per module");
    return j;
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

template <class T>
const T& need(const T& value, const std::string& flag) {
  if (value.empty()) throw ValidationError("missing " + flag);
  return value;
}

inline std::vector<SkillId> parse_ids(const std::string& csv) {
  std::vector<SkillId> out;
  for (const auto& part : text::split(csv, ',')) {
    const auto t = text::trim(part);
    if (t.empty()) continue;
    try {
      std::size_t used = 0;
      const auto v = std::stoul(std::string(t), &used);
      if (used != t.size()) throw std::invalid_argument("trailing");
      out.push_back(static_cast<SkillId>(v));
    } catch (const std::exception&) {
      throw ValidationError("not a skill id: '" + std::string(t) + "'");
    }
  }
  return out;
}

// ------------------------------------------------------------------ run dir

// All artifacts of one command go to <root>/<run id>/. Everything except
// metadata.json is a function of the inputs and the seed.
class RunDir {
 public:
  RunDir(const fs::path& root, std::string run_id, std::string command, std::uint64_t seed,
         std::vector<std::string> argv)
      : id_(run_id.empty() ? fresh_id() : std::move(run_id)), command_(std::move(command)), seed_(seed),
        argv_(std::move(argv)), started_(service::utc_timestamp()) {
    if (id_.find_first_of("/\\") != std::string::npos || id_ == "." || id_ == "..")
      throw ValidationError("bad run id '" + id_ + "'");
    path_ = root / id_;
    fs::create_directories(path_);
  }

  const fs::path& path() const { return path_; }
  const std::string& id() const { return id_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

  void write(const std::string& name, const std::string& content) {
    std::ofstream out(path_ / name, std::ios::binary);
    out << content;
    if (!out) throw RuntimeFailure("cannot write " + (path_ / name).string());
    outputs_.push_back(name);
  }
  void write_json(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }
  void note(const std::string& name) { outputs_.push_back(name); }
  // Files whose content varies between identical runs (clock readings).
  void sidecar(const std::string& name) { sidecars_.push_back(name); }

  void finish(const std::string& status, const json& extra = json::object()) const {
    json meta = {{"run_id", id_},     {"command", command_},
                 {"argv", argv_},     {"seed", seed_},
                 {"started_at", started_}, {"finished_at", service::utc_timestamp()},
                 {"status", status},  {"outputs", outputs_},
                 {"version", "0.1.0"}};
    json side = json::array();
    for (const auto& f : sidecars_)
      if (fs::exists(path_ / f)) side.push_back(f);
    meta["sidecars"] = side;
    for (const auto& [k, v] : extra.items()) meta[k] = v;
    std::ofstream(path_ / "metadata.json") << meta.dump(2) << '\n';
  }

 private:
  static std::string fresh_id() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    std::random_device rd;
    char tail[8];
    std::snprintf(tail, sizeof tail, "%04x", rd() & 0xffffu);
    return std::string("run-") + buf + "-" + tail;
  }

  std::string id_, command_;
  std::uint64_t seed_;
  std::vector<std::string> argv_;
  std::string started_;
  fs::path path_;
  std::vector<std::string> outputs_, sidecars_;
};

// Left-aligned text table.
inline std::string render_rows(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> w(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) w[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size() && c < w.size(); ++c) w[c] = std::max(w[c], r[c].size());
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& r) {
    for (std::size_t c = 0; c < w.size(); ++c) {
      const std::string v = c < r.size() ? r[c] : "";
      out << v;
      if (c + 1 < w.size()) out << std::string(w[c] - v.size() + 2, ' ');
    }
    out << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (auto x : w) total += x + 2;
  out << std::string(total - 2, '-') << '\n';
  for (const auto& r : rows) line(r);
  return out.str();
}

inline std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string fixed(const std::optional<double>& v, int digits = 3) { return v ? fixed(*v, digits) : "-"; }

// ------------------------------------------------------------------ inputs

inline egp::SkillRepository load_skills(const std::string& path) {
  return egp::SkillRepository::load(need(path, "--skills (or egp.skills in the config)"));
}

inline std::vector<corpus::Dialogue> load_corpus(const std::string& path) {
  return corpus::load_jsonl(need(path, "--corpus"));
}

struct DetectorOptions {
  std::string bundle;
  std::string patterns_file;
  json patterns = json::object();  // inline from the config
  bool deployable_only = false;

  void bind(Binder& b) {
    b.option("--detectors", bundle, "detector.bundle", "trained detector bundle directory");
    b.option("--patterns", patterns_file, "detector.patterns_file", "JSON object of skill id -> regex rule detectors");
    b.flag("--deployable-only", deployable_only, "detector.deployable_only", "skip detectors below the precision bar");
  }
  void settle(const json& cfg) {
    if (cfg.contains("detector") && cfg["detector"].contains("patterns")) patterns = cfg["detector"]["patterns"];
  }
  bool empty() const { return bundle.empty() && patterns_file.empty() && patterns.empty(); }
};

inline std::map<SkillId, std::string> read_patterns(const DetectorOptions& o) {
  json all = o.patterns;
  if (!o.patterns_file.empty()) {
    std::ifstream in(o.patterns_file);
    if (!in) throw LookupError("cannot open " + o.patterns_file);
    try {
      const auto file = json::parse(in);
      if (!file.is_object()) throw ValidationError(o.patterns_file + ": expected an object of skill id -> regex");
      for (const auto& [k, v] : file.items()) all[k] = v;
    } catch (const json::parse_error& e) {
      throw ParseError(o.patterns_file + ": " + e.what());
    }
  }
  std::map<SkillId, std::string> out;
  for (const auto& [k, v] : all.items()) {
    const auto ids = parse_ids(k);
    if (ids.size() != 1 || !v.is_string()) throw ValidationError("pattern entries map one skill id to a regex");
    out[ids[0]] = v.get<std::string>();
  }
  return out;
}

inline detector::DetectorSet load_detectors(const DetectorOptions& o, detector::ModelSet* models = nullptr) {
  detector::DetectorSet out;
  if (!o.bundle.empty()) {
    auto m = detector::load_bundle(o.bundle);
    out = detector::as_detector_set(m, o.deployable_only);
    if (models) *models = std::move(m);
  }
  for (const auto& [id, re] : read_patterns(o)) {
    try {
      out[id] = std::make_shared<detector::PatternDetector>(re);
    } catch (const std::regex_error& e) {
      throw ValidationError("bad regex for skill " + std::to_string(id) + ": " + e.what());
    }
  }
  return out;
}

inline std::string detector_provenance(const DetectorOptions& o) {
  std::string s;
  if (!o.bundle.empty()) s = "bundle:" + fs::path(o.bundle).filename().string();
  if (!o.patterns_file.empty() || !o.patterns.empty()) s += std::string(s.empty() ? "" : "+") + "patterns";
  return s;
}

// ------------------------------------------------------------------ models

struct ModelOptions {
  std::string strategy = "prompt";
  std::string stub_reply;
  std::string local_model;
  std::string adapter;
  std::string discriminators;
  std::string remote_model;
  std::string remote_base_url;
  json remote = json();
  std::string preset;
  std::optional<double> alpha, eta;
  std::optional<std::size_t> top_k, max_tokens;
  json decoding = json::object();

  void bind(Binder& b) {
    b.option("--strategy", strategy, "model.strategy", "prompt | prompt_local | decode | finetune | hybrid");
    b.option("--stub-reply", stub_reply, "model.stub_reply", "offline stub chat model that always answers this");
    b.option("--local-model", local_model, "model.local_model", "saved local model directory");
    b.option("--adapter", adapter, "model.adapter", "low-rank adapter directory (finetune, hybrid)");
    b.option("--discriminators", discriminators, "model.discriminators", "future discriminator bundle (decode, hybrid)");
    b.option("--remote-model", remote_model, "model.remote_model", "model name at an OpenAI-compatible endpoint");
    b.option("--remote-base-url", remote_base_url, "model.remote_base_url", "endpoint base URL");
    b.option("--preset", preset, "model.preset", "decoding preset: default | tuned");
    b.option("--alpha", alpha, "model.alpha", "grammar weight in guided decoding");
    b.option("--eta", eta, "model.eta", "probability mass kept before top-k");
    b.option("--top-k", top_k, "model.top_k", "candidate tokens per step");
    b.option("--max-tokens", max_tokens, "model.max_tokens", "response length limit");
  }
  void settle(const json& cfg) {
    if (!cfg.contains("model")) return;
    const auto& m = cfg["model"];
    if (m.contains("remote")) remote = m["remote"];
    if (m.contains("decoding")) decoding = m["decoding"];
  }

  control::Strategy parsed_strategy() const { return control::parse_strategy(strategy); }

  control::DecodingParams params() const {
    json d = decoding;
    if (!preset.empty()) d["preset"] = preset;
    auto p = control::decoding_params_from_json(d);
    if (alpha) p.alpha = *alpha;
    if (eta) p.eta = *eta;
    if (top_k) p.top_k = *top_k;
    if (max_tokens) p.max_tokens = *max_tokens;
    p.validate();
    return p;
  }

  std::optional<llm::RemoteConfig> remote_config() const {
    if (remote.is_null() && remote_model.empty()) return std::nullopt;
    json r = remote.is_null() ? json::object() : remote;
    if (!remote_model.empty()) r["model"] = remote_model;
    if (!remote_base_url.empty()) r["base_url"] = remote_base_url;
    try {
      return llm::remote_config_from_json(r);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("bad remote model config: ") + e.what());
    }
  }
};

// Models behind one command: chat models are registered with an audited
// gateway, local models are loaded once.
class ModelHub {
 public:
  ModelHub(ModelOptions opt, const egp::SkillRepository& repo, std::optional<fs::path> audit = std::nullopt)
      : opt_(std::move(opt)), repo_(repo), gateway_(audit ? llm::Gateway(*audit) : llm::Gateway()) {}

  const ModelOptions& options() const { return opt_; }

  std::shared_ptr<llm::TinyLM> base() {
    if (!base_) base_ = llm::TinyLM::load(need(opt_.local_model, "--local-model"));
    return base_;
  }

  std::shared_ptr<const llm::LogitModel> tuned() {
    if (!tuned_) {
      const fs::path dir = need(opt_.adapter, "--adapter");
      tuned_ = llm::merge(*base(), llm::LoraAdapter::load(dir / "adapter.bin"));
    }
    return tuned_;
  }

  control::LocalGenerator::Scorers scorers() {
    control::LocalGenerator::Scorers out;
    for (const auto& [id, d] : control::load_discriminators(need(opt_.discriminators, "--discriminators")))
      out[id] = d;
    return out;
  }

  // The chat model for prompting: remote when configured, else the local
  // model, else the stub.
  std::shared_ptr<llm::ChatModel> chat() {
    if (chat_) return chat_;
    std::shared_ptr<llm::ChatModel> m;
    if (auto rc = opt_.remote_config()) {
      m = std::make_shared<llm::HttpChatModel>(*rc);
    } else if (!opt_.local_model.empty()) {
      m = std::make_shared<llm::LocalChatModel>(base(), opt_.params().max_tokens);
    } else if (!opt_.stub_reply.empty()) {
      m = std::make_shared<llm::StubChatModel>("stub", opt_.stub_reply);
    } else {
      throw ValidationError("no chat model configured: give --remote-model, --local-model or --stub-reply");
    }
    gateway_.add_chat(m, "chat");
    chat_ = std::make_shared<llm::RoutedChatModel>(gateway_, "chat");
    return chat_;
  }

  std::shared_ptr<control::Generator> generator(control::Strategy s, const control::DecodingParams& params,
                                                const detector::DetectorSet& retirement) {
    using control::Strategy;
    switch (s) {
      case Strategy::PromptRemote:
        return std::make_shared<control::PromptGenerator>(chat(), repo_, s, llm::ChatParams{0.0, params.max_tokens});
      case Strategy::PromptLocal:
        return std::make_shared<control::PromptGenerator>(
            std::make_shared<llm::LocalChatModel>(base(), params.max_tokens), repo_, s);
      case Strategy::Finetune:
        return std::make_shared<control::LocalGenerator>(s, tuned(), repo_, control::LocalGenerator::Scorers{},
                                                         detector::DetectorSet{}, params);
      case Strategy::Decode:
        return std::make_shared<control::LocalGenerator>(s, base(), repo_, scorers(), retirement, params);
      case Strategy::Hybrid:
        return std::make_shared<control::LocalGenerator>(s, tuned(), repo_, scorers(), retirement, params);
    }
    throw PreconditionError("unhandled strategy");
  }

 private:
  ModelOptions opt_;
  const egp::SkillRepository& repo_;
  llm::Gateway gateway_;
  std::shared_ptr<llm::TinyLM> base_;
  std::shared_ptr<const llm::LogitModel> tuned_;
  std::shared_ptr<llm::ChatModel> chat_;
};

// A chat model from a compact JSON entry: {"stub": reply} | {"local_model": dir}
// | {"remote": {...}}.
inline std::shared_ptr<llm::ChatModel> chat_from_json(const json& entry) {
  if (!entry.is_object()) throw ValidationError("chat model entry must be an object");
  if (entry.contains("stub")) return std::make_shared<llm::StubChatModel>("stub", entry["stub"].get<std::string>());
  if (entry.contains("local_model"))
    return std::make_shared<llm::LocalChatModel>(llm::TinyLM::load(entry["local_model"].get<std::string>()));
  if (entry.contains("remote")) return std::make_shared<llm::HttpChatModel>(llm::remote_config_from_json(entry["remote"]));
  throw ValidationError("chat model entry needs one of 'stub', 'local_model' or 'remote'");
}

template <class T, class F>
std::string jsonl(const std::vector<T>& items, F&& to) {
  std::string out;
  for (const auto& x : items) out += to(x).dump() + "\n";
  return out;
}

}  // namespace grammarctl::cli

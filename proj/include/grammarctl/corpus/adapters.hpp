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

#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <algorithm>
#include <span>
#include <vector>

#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"
#include "grammarctl/corpus/dialogue.hpp"

namespace grammarctl::corpus {

struct IngestResult {
  std::vector<Dialogue> dialogues;
  std::vector<std::string> warnings;
  std::size_t skipped = 0;
};

namespace detail {

using RawTurn = std::pair<std::string, std::string>;  // (speaker key, text)

// Maps speaker keys to A/B in order of appearance, merges consecutive turns by
// the same speaker and drops empty turns. Returns an error message instead of
// a dialogue when the record cannot be normalized.
inline std::variant<Dialogue, std::string> normalize(std::string id, Source source, const std::vector<RawTurn>& raw) {
  std::vector<std::string> keys;
  Dialogue d{std::move(id), source, {}};
  for (const auto& [key, body] : raw) {
    auto t = text::trim(body);
    if (t.empty()) continue;
    auto it = std::find(keys.begin(), keys.end(), key);
    if (it == keys.end()) {
      if (keys.size() == 2) return "dialogue '" + d.id + "' has more than two speakers";
      keys.push_back(key);
      it = keys.end() - 1;
    }
    const Speaker sp = it == keys.begin() ? Speaker::A : Speaker::B;
    if (!d.turns.empty() && d.turns.back().speaker == sp) {
      d.turns.back().text += " ";
      d.turns.back().text += t;
    } else {
      d.turns.push_back({sp, std::string(t), std::nullopt});
    }
  }
  if (d.turns.size() < 2) return "dialogue '" + d.id + "' has fewer than two turns";
  return d;
}

inline void accept(IngestResult& out, std::variant<Dialogue, std::string> r) {
  if (auto* d = std::get_if<Dialogue>(&r)) {
    out.dialogues.push_back(std::move(*d));
  } else {
    out.warnings.push_back(std::get<std::string>(r));
    ++out.skipped;
  }
}

inline void skip(IngestResult& out, std::string why) {
  out.warnings.push_back(std::move(why));
  ++out.skipped;
}

inline nlohmann::json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace detail

// One dialogue per line, turns separated by "__eou__".
inline IngestResult ingest_dailydialog(std::istream& in) {
  IngestResult out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (text::trim(line).empty()) continue;
    std::vector<detail::RawTurn> raw;
    std::size_t pos = 0, k = 0;
    std::size_t separators = 0;
    while (true) {
      auto next = line.find("__eou__", pos);
      auto piece = line.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
      if (!text::trim(piece).empty()) raw.emplace_back(std::to_string(k++ % 2), std::string(text::trim(piece)));
      if (next == std::string::npos) break;
      ++separators;
      pos = next + 7;
    }
    if (separators == 0) {
      detail::skip(out, "line " + std::to_string(row) + ": no __eou__ separator");
      continue;
    }
    detail::accept(out, detail::normalize("dailydialog-" + std::to_string(row), Source::DailyDialog, raw));
  }
  return out;
}

// JSON lines with a "dialogue" string of "#PersonN#: text" lines.
inline IngestResult ingest_dialogsum(std::istream& in) {
  IngestResult out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      detail::skip(out, "line " + std::to_string(row) + ": invalid JSON");
      continue;
    }
    if (!j.is_object() || !j.contains("dialogue") || !j["dialogue"].is_string()) {
      detail::skip(out, "line " + std::to_string(row) + ": missing 'dialogue'");
      continue;
    }
    std::string id = "dialogsum-" + std::to_string(row);
    for (const char* field : {"fname", "id"})
      if (j.contains(field) && j[field].is_string()) id = j[field].get<std::string>();
    std::vector<detail::RawTurn> raw;
    bool ok = true;
    for (auto& l : text::split(j["dialogue"].get<std::string>(), '\n')) {
      auto t = text::trim(l);
      if (t.empty()) continue;
      auto colon = t.find(':');
      if (t.front() != '#' || colon == std::string_view::npos) {
        ok = false;
        break;
      }
      raw.emplace_back(std::string(t.substr(0, colon)), std::string(t.substr(colon + 1)));
    }
    if (!ok) {
      detail::skip(out, "line " + std::to_string(row) + ": unrecognized speaker line");
      continue;
    }
    detail::accept(out, detail::normalize(std::move(id), Source::DialogSum, raw));
  }
  return out;
}

// JSON array of {"dialog": [{"speaker", "text"}]}.
inline IngestResult ingest_wow(const nlohmann::json& root) {
  IngestResult out;
  if (!root.is_array()) throw ParseError("Wizard of Wikipedia file must hold a JSON array");
  for (std::size_t i = 0; i < root.size(); ++i) {
    const auto& e = root[i];
    if (!e.is_object() || !e.contains("dialog") || !e["dialog"].is_array()) {
      detail::skip(out, "record " + std::to_string(i) + ": missing 'dialog'");
      continue;
    }
    std::vector<detail::RawTurn> raw;
    bool ok = true;
    for (const auto& t : e["dialog"]) {
      if (!t.is_object() || !t.contains("speaker") || !t.contains("text") || !t["text"].is_string()) {
        ok = false;
        break;
      }
      raw.emplace_back(t["speaker"].dump(), t["text"].get<std::string>());
    }
    if (!ok) {
      detail::skip(out, "record " + std::to_string(i) + ": malformed turn");
      continue;
    }
    detail::accept(out, detail::normalize("wow-" + std::to_string(i), Source::WizardOfWikipedia, raw));
  }
  return out;
}

// JSON object keyed by conversation id with {"content": [{"message", "agent"}]}.
inline IngestResult ingest_topicalchat(const nlohmann::json& root) {
  IngestResult out;
  if (!root.is_object()) throw ParseError("Topical-Chat file must hold a JSON object");
  for (const auto& [id, conv] : root.items()) {
    if (!conv.is_object() || !conv.contains("content") || !conv["content"].is_array()) {
      detail::skip(out, "conversation " + id + ": missing 'content'");
      continue;
    }
    std::vector<detail::RawTurn> raw;
    bool ok = true;
    for (const auto& t : conv["content"]) {
      if (!t.is_object() || !t.contains("message") || !t.contains("agent") || !t["message"].is_string()) {
        ok = false;
        break;
      }
      raw.emplace_back(t["agent"].dump(), t["message"].get<std::string>());
    }
    if (!ok) {
      detail::skip(out, "conversation " + id + ": malformed turn");
      continue;
    }
    detail::accept(out, detail::normalize(id, Source::TopicalChat, raw));
  }
  return out;
}

// One conversation per JSON file with {"history": [{"text", "uid"}]}.
inline void ingest_cmudog_record(IngestResult& out, const std::string& id, const nlohmann::json& root) {
  if (!root.is_object() || !root.contains("history") || !root["history"].is_array()) {
    detail::skip(out, id + ": missing 'history'");
    return;
  }
  std::vector<detail::RawTurn> raw;
  for (const auto& t : root["history"]) {
    if (!t.is_object() || !t.contains("text") || !t.contains("uid") || !t["text"].is_string()) {
      detail::skip(out, id + ": malformed turn");
      return;
    }
    raw.emplace_back(t["uid"].dump(), t["text"].get<std::string>());
  }
  detail::accept(out, detail::normalize(id, Source::CmuDog, raw));
}

inline IngestResult read_jsonl(std::istream& in) {
  IngestResult out;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (text::trim(line).empty()) continue;
    try {
      out.dialogues.push_back(dialogue_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error&) {
      detail::skip(out, "line " + std::to_string(row) + ": invalid JSON");
    } catch (const Error& e) {
      detail::skip(out, "line " + std::to_string(row) + ": " + e.what());
    }
  }
  return out;
}

inline void write_jsonl(std::ostream& out, std::span<const Dialogue> dialogues) {
  for (const auto& d : dialogues) out << to_json(d).dump() << '\n';
}

inline IngestResult ingest(Source source, const std::filesystem::path& path) {
  auto open = [&] {
    std::ifstream in(path);
    if (!in) throw LookupError("cannot open " + path.string());
    return in;
  };
  switch (source) {
    case Source::DailyDialog: {
      auto in = open();
      return ingest_dailydialog(in);
    }
    case Source::DialogSum: {
      auto in = open();
      return ingest_dialogsum(in);
    }
    case Source::WizardOfWikipedia: return ingest_wow(detail::parse_json_file(path));
    case Source::TopicalChat: return ingest_topicalchat(detail::parse_json_file(path));
    case Source::CmuDog: {
      IngestResult out;
      if (std::filesystem::is_directory(path)) {
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(path))
          if (e.path().extension() == ".json") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
          try {
            ingest_cmudog_record(out, f.stem().string(), detail::parse_json_file(f));
          } catch (const ParseError& e) {
            detail::skip(out, e.what());
          }
        }
      } else {
        ingest_cmudog_record(out, path.stem().string(), detail::parse_json_file(path));
      }
      return out;
    }
    case Source::Normalized:
    case Source::Synthetic: {
      auto in = open();
      return read_jsonl(in);
    }
  }
  throw LookupError("no corpus adapter for source");
}

inline std::vector<Dialogue> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LookupError("cannot open " + path.string());
  auto r = read_jsonl(in);
  if (r.skipped) throw ParseError(path.string() + ": " + r.warnings.front());
  return std::move(r.dialogues);
}

}  // namespace grammarctl::corpus

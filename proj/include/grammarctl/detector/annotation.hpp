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
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/types.hpp"

namespace grammarctl::detector {

struct AnnotationRecord {
  std::string sentence;
  SkillId skill = 0;
  bool label = false;
  std::string annotator;
  std::optional<std::string> note;

  bool operator==(const AnnotationRecord&) const = default;
};

inline nlohmann::json to_json(const AnnotationRecord& r) {
  nlohmann::json j = {{"sentence", r.sentence}, {"skill_id", r.skill}, {"label", r.label}, {"annotator", r.annotator}};
  j["note"] = r.note ? nlohmann::json(*r.note) : nlohmann::json(nullptr);
  return j;
}

inline AnnotationRecord annotation_from_json(const nlohmann::json& j) {
  try {
    AnnotationRecord r;
    r.sentence = j.at("sentence").get<std::string>();
    r.skill = j.at("skill_id").get<SkillId>();
    r.label = j.at("label").get<bool>();
    r.annotator = j.at("annotator").get<std::string>();
    if (j.contains("note") && j["note"].is_string()) r.note = j["note"].get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad annotation record: ") + e.what());
  }
}

// Labels keyed by (sentence, skill, annotator). A later label for the same
// key replaces the earlier one. With a backing file every put is appended,
// and reopening the file replays the appends.
class AnnotationStore {
 public:
  AnnotationStore() = default;
  explicit AnnotationStore(std::filesystem::path file) : file_(std::move(file)) {
    std::ifstream in(*file_);
    std::string line;
    std::size_t row = 0;
    while (in && std::getline(in, line)) {
      ++row;
      if (line.empty()) continue;
      try {
        insert(annotation_from_json(nlohmann::json::parse(line)));
      } catch (const nlohmann::json::parse_error&) {
        throw ParseError(file_->string() + ": invalid JSON", row);
      }
    }
  }

  void put(const AnnotationRecord& r) {
    insert(r);
    if (file_) {
      std::ofstream out(*file_, std::ios::app);
      out << to_json(r).dump() << '\n';
      if (!out) throw RuntimeFailure("cannot append to " + file_->string());
    }
  }

  // Any annotator's label; ties resolve to the lexicographically first one.
  std::optional<bool> label(const std::string& sentence, SkillId skill) const {
    auto it = records_.lower_bound({sentence, skill, std::string()});
    if (it == records_.end() || std::get<0>(it->first) != sentence || std::get<1>(it->first) != skill)
      return std::nullopt;
    return it->second.label;
  }

  std::vector<AnnotationRecord> records() const {
    std::vector<AnnotationRecord> out;
    for (const auto& [k, r] : records_) out.push_back(r);
    return out;
  }

  std::vector<AnnotationRecord> records_for(SkillId skill) const {
    std::vector<AnnotationRecord> out;
    for (const auto& [k, r] : records_)
      if (r.skill == skill) out.push_back(r);
    return out;
  }

  std::size_t size() const { return records_.size(); }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path);
    for (const auto& [k, r] : records_) out << to_json(r).dump() << '\n';
    if (!out) throw RuntimeFailure("cannot write " + path.string());
  }

 private:
  void insert(const AnnotationRecord& r) { records_[{r.sentence, r.skill, r.annotator}] = r; }

  std::optional<std::filesystem::path> file_;
  std::map<std::tuple<std::string, SkillId, std::string>, AnnotationRecord> records_;
};

// Who answers "does this sentence show the skill?". Returning nullopt means
// the source has no more answers to give right now.
class AnnotationSource {
 public:
  virtual ~AnnotationSource() = default;
  virtual std::string name() const = 0;
  virtual std::optional<bool> annotate(const std::string& sentence, SkillId skill) = 0;
};

// Answers from a callable, optionally limited to a number of answers.
class FunctionAnnotator : public AnnotationSource {
 public:
  FunctionAnnotator(std::string name, std::function<bool(const std::string&, SkillId)> fn,
                    std::optional<std::size_t> budget = std::nullopt)
      : name_(std::move(name)), fn_(std::move(fn)), budget_(budget) {}

  std::string name() const override { return name_; }
  std::optional<bool> annotate(const std::string& sentence, SkillId skill) override {
    if (budget_) {
      if (*budget_ == 0) return std::nullopt;
      --*budget_;
    }
    ++answered_;
    return fn_(sentence, skill);
  }
  std::size_t answered() const { return answered_; }

 private:
  std::string name_;
  std::function<bool(const std::string&, SkillId)> fn_;
  std::optional<std::size_t> budget_;
  std::size_t answered_ = 0;
};

// Looks the label up in `store`, asking `source` and recording the answer
// when it is missing.
inline std::optional<bool> obtain_label(AnnotationStore& store, AnnotationSource* source, const std::string& sentence,
                                        SkillId skill) {
  if (auto l = store.label(sentence, skill)) return l;
  if (!source) return std::nullopt;
  auto l = source->annotate(sentence, skill);
  if (l) store.put({sentence, skill, *l, source->name(), std::nullopt});
  return l;
}

}  // namespace grammarctl::detector

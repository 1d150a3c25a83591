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
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "grammarctl/core/cefr.hpp"
#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"
#include "grammarctl/core/types.hpp"

namespace grammarctl::egp {

enum class SkillType : std::uint8_t { Form, Use, FormUse };

inline std::string_view to_string(SkillType t) {
  switch (t) {
    case SkillType::Form: return "FORM";
    case SkillType::Use: return "USE";
    case SkillType::FormUse: return "FORM/USE";
  }
  return {};
}

inline SkillType parse_skill_type(std::string_view s) {
  const auto t = text::to_lower(text::trim(s));
  if (t == "form") return SkillType::Form;
  if (t == "use") return SkillType::Use;
  if (t == "form/use" || t == "form_use" || t == "form use") return SkillType::FormUse;
  throw ValidationError("unknown skill type '" + std::string(s) + "'");
}

// One row of the grammar profile.
struct GrammarSkill {
  SkillId id = 0;
  std::string super_category;
  std::string subcategory;
  std::string guideword;
  std::string can_do;
  CefrLevel level = CefrLevel::A1;
  SkillType type = SkillType::Form;
  std::vector<std::string> examples;  // 1..5 entries
};

inline constexpr std::string_view kTsvHeader =
    "id\tsuper_category\tsubcategory\tguideword\tcan_do\tlevel\ttype\texamples";

// Immutable collection of grammar skills. Safe for concurrent readers.
class SkillRepository {
 public:
  SkillRepository() = default;

  explicit SkillRepository(std::vector<GrammarSkill> skills) : skills_(std::move(skills)) {
    for (std::size_t i = 0; i < skills_.size(); ++i) {
      validate(skills_[i], 0);
      if (!by_id_.emplace(skills_[i].id, i).second)
        throw ValidationError("duplicate skill id " + std::to_string(skills_[i].id));
      by_subcategory_[text::to_lower(skills_[i].subcategory)].push_back(i);
    }
  }

  // Tab-separated text with a header row; examples are pipe-separated.
  // An empty stream yields an empty repository.
  static SkillRepository parse(std::istream& in) {
    std::vector<GrammarSkill> skills;
    std::map<SkillId, std::size_t> seen;
    std::string line;
    std::size_t row = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
      ++row;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (text::trim(line).empty()) continue;
      auto cols = text::split(line, '\t');
      if (!header_seen) {
        header_seen = true;
        auto expected = text::split(kTsvHeader, '\t');
        bool ok = cols.size() == expected.size();
        for (std::size_t i = 0; ok && i < cols.size(); ++i) ok = text::iequals(text::trim(cols[i]), expected[i]);
        if (!ok) throw ParseError("skill file header does not match the expected columns", row);
        continue;
      }
      if (cols.size() != 8) throw ParseError("expected 8 tab-separated columns, got " + std::to_string(cols.size()), row);
      GrammarSkill skill;
      try {
        std::size_t used = 0;
        const auto id_text = std::string(text::trim(cols[0]));
        skill.id = static_cast<SkillId>(std::stol(id_text, &used));
        if (used != id_text.size()) throw std::invalid_argument("id");
      } catch (const std::exception&) {
        throw ParseError("skill id '" + cols[0] + "' is not an integer", row);
      }
      skill.super_category = std::string(text::trim(cols[1]));
      skill.subcategory = std::string(text::trim(cols[2]));
      skill.guideword = std::string(text::trim(cols[3]));
      skill.can_do = std::string(text::trim(cols[4]));
      auto level = try_parse_level(text::trim(cols[5]));
      if (!level)
        throw ValidationError("unknown CEFR level '" + cols[5] + "' (row " + std::to_string(row) + ")");
      skill.level = *level;
      try {
        skill.type = parse_skill_type(cols[6]);
      } catch (const ValidationError& e) {
        throw ValidationError(std::string(e.what()) + " (row " + std::to_string(row) + ")");
      }
      for (auto& ex : text::split(cols[7], '|')) {
        auto t = text::trim(ex);
        if (!t.empty()) skill.examples.emplace_back(t);
      }
      validate(skill, row);
      if (auto [it, inserted] = seen.emplace(skill.id, row); !inserted)
        throw ValidationError("duplicate skill id " + std::to_string(skill.id) + " (rows " +
                              std::to_string(it->second) + " and " + std::to_string(row) + ")");
      skills.push_back(std::move(skill));
    }
    return SkillRepository(std::move(skills));
  }

  static SkillRepository load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw LookupError("cannot open skill file " + path.string());
    return parse(in);
  }

  void write_tsv(std::ostream& out) const {
    out << kTsvHeader << '\n';
    for (const auto& s : skills_) {
      out << s.id << '\t' << s.super_category << '\t' << s.subcategory << '\t' << s.guideword << '\t' << s.can_do
          << '\t' << grammarctl::to_string(s.level) << '\t' << to_string(s.type) << '\t';
      for (std::size_t i = 0; i < s.examples.size(); ++i) out << (i ? "|" : "") << s.examples[i];
      out << '\n';
    }
  }

  const std::vector<GrammarSkill>& skills() const { return skills_; }
  std::size_t size() const { return skills_.size(); }
  bool empty() const { return skills_.empty(); }

  const GrammarSkill* find(SkillId id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &skills_[it->second];
  }

  const GrammarSkill& at(SkillId id) const {
    if (const auto* s = find(id)) return *s;
    throw LookupError("unknown skill id " + std::to_string(id));
  }

  bool has_subcategory(std::string_view name) const { return by_subcategory_.count(text::to_lower(name)) > 0; }

  // Case-insensitive exact match on the subcategory name.
  std::vector<const GrammarSkill*> by_subcategory(std::string_view name) const {
    std::vector<const GrammarSkill*> out;
    if (auto it = by_subcategory_.find(text::to_lower(name)); it != by_subcategory_.end())
      for (auto i : it->second) out.push_back(&skills_[i]);
    return out;
  }

  // Spelling of the subcategory as it appears in the file.
  std::string canonical_subcategory(std::string_view name) const {
    auto it = by_subcategory_.find(text::to_lower(name));
    if (it == by_subcategory_.end()) throw LookupError("unknown subcategory '" + std::string(name) + "'");
    return skills_[it->second.front()].subcategory;
  }

  std::vector<std::string> subcategories() const {
    std::vector<std::string> out;
    for (const auto& [key, idx] : by_subcategory_) out.push_back(skills_[idx.front()].subcategory);
    return out;
  }

  std::vector<const GrammarSkill*> filter(std::optional<std::string_view> subcategory,
                                          std::optional<CefrLevel> level) const {
    std::vector<const GrammarSkill*> out;
    for (const auto& s : skills_) {
      if (subcategory && !text::iequals(s.subcategory, *subcategory)) continue;
      if (level && s.level != *level) continue;
      out.push_back(&s);
    }
    return out;
  }

 private:
  static void validate(const GrammarSkill& s, std::size_t row) {
    auto where = [&] { return row ? " (row " + std::to_string(row) + ")" : std::string(); };
    if (s.subcategory.empty()) throw ValidationError("skill " + std::to_string(s.id) + " has no subcategory" + where());
    if (s.examples.empty() || s.examples.size() > 5)
      throw ValidationError("skill " + std::to_string(s.id) + " must have 1-5 examples" + where());
  }

  std::vector<GrammarSkill> skills_;
  std::unordered_map<SkillId, std::size_t> by_id_;
  std::map<std::string, std::vector<std::size_t>> by_subcategory_;
};

}  // namespace grammarctl::egp

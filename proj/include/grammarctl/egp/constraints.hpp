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

#include <algorithm>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "grammarctl/core/cefr.hpp"
#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"
#include "grammarctl/core/types.hpp"
#include "grammarctl/egp/repository.hpp"

namespace grammarctl::egp {

struct CategoryLevel {
  std::string subcategory;
  CefrLevel level = CefrLevel::A1;

  bool operator==(const CategoryLevel&) const = default;
};

inline constexpr std::size_t kMaxExplicitSkills = 6;
inline constexpr std::size_t kMaxCategoryPairs = 3;

// Either an explicit list of skills (teacher-selected) or a set of
// (subcategory, level) pairs (learner-profile driven).
class ConstraintSet {
 public:
  enum class Kind : std::uint8_t { Explicit, Categorical };

  static ConstraintSet explicit_skills(std::vector<SkillId> ids) {
    if (ids.empty() || ids.size() > kMaxExplicitSkills)
      throw ValidationError("explicit constraints need 1-6 skills, got " + std::to_string(ids.size()));
    if (std::set<SkillId>(ids.begin(), ids.end()).size() != ids.size())
      throw ValidationError("explicit constraints contain duplicate skills");
    ConstraintSet c;
    c.kind_ = Kind::Explicit;
    c.skills_ = std::move(ids);
    return c;
  }

  static ConstraintSet categorical(std::vector<CategoryLevel> pairs) {
    if (pairs.empty() || pairs.size() > kMaxCategoryPairs)
      throw ValidationError("categorical constraints need 1-3 pairs, got " + std::to_string(pairs.size()));
    for (std::size_t i = 0; i < pairs.size(); ++i)
      for (std::size_t j = i + 1; j < pairs.size(); ++j)
        if (text::iequals(pairs[i].subcategory, pairs[j].subcategory))
          throw ValidationError("categorical constraints repeat subcategory '" + pairs[i].subcategory + "'");
    ConstraintSet c;
    c.kind_ = Kind::Categorical;
    c.pairs_ = std::move(pairs);
    return c;
  }

  Kind kind() const { return kind_; }
  bool is_explicit() const { return kind_ == Kind::Explicit; }
  const std::vector<SkillId>& skills() const { return skills_; }
  const std::vector<CategoryLevel>& pairs() const { return pairs_; }
  std::size_t size() const { return is_explicit() ? skills_.size() : pairs_.size(); }

  // Throws LookupError if a skill id or subcategory is not in `repo`.
  void check_against(const SkillRepository& repo) const {
    for (auto id : skills_) repo.at(id);
    for (const auto& p : pairs_)
      if (!repo.has_subcategory(p.subcategory)) throw LookupError("unknown subcategory '" + p.subcategory + "'");
  }

  // Order-insensitive identity, used to group responses by constraint set.
  std::string key() const {
    std::string k;
    if (is_explicit()) {
      std::vector<SkillId> ids = skills_;
      std::sort(ids.begin(), ids.end());
      k = "E";
      for (auto id : ids) k += ":" + std::to_string(id);
    } else {
      std::vector<std::string> parts;
      for (const auto& p : pairs_) parts.push_back(text::to_lower(p.subcategory) + "@" + std::string(to_string(p.level)));
      std::sort(parts.begin(), parts.end());
      k = "C";
      for (const auto& p : parts) k += ":" + p;
    }
    return k;
  }

  bool operator==(const ConstraintSet&) const = default;

 private:
  ConstraintSet() = default;
  Kind kind_ = Kind::Explicit;
  std::vector<SkillId> skills_;
  std::vector<CategoryLevel> pairs_;
};

inline nlohmann::json to_json(const ConstraintSet& c) {
  if (c.is_explicit()) return {{"explicit", c.skills()}};
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : c.pairs()) pairs.push_back({{"subcategory", p.subcategory}, {"level", to_string(p.level)}});
  return {{"categorical", pairs}};
}

inline ConstraintSet constraints_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("constraints must be an object");
  if (j.contains("explicit")) {
    if (!j["explicit"].is_array()) throw ValidationError("constraints.explicit must be an array of skill ids");
    std::vector<SkillId> ids;
    for (const auto& v : j["explicit"]) {
      if (!v.is_number_integer()) throw ValidationError("constraints.explicit must hold integers");
      ids.push_back(v.get<SkillId>());
    }
    return ConstraintSet::explicit_skills(std::move(ids));
  }
  if (j.contains("categorical")) {
    if (!j["categorical"].is_array()) throw ValidationError("constraints.categorical must be an array");
    std::vector<CategoryLevel> pairs;
    for (const auto& v : j["categorical"]) {
      if (!v.is_object() || !v.contains("subcategory") || !v.contains("level") || !v["subcategory"].is_string() ||
          !v["level"].is_string())
        throw ValidationError("constraints.categorical entries need string subcategory and level");
      pairs.push_back({v["subcategory"].get<std::string>(), parse_level(v["level"].get<std::string>())});
    }
    return ConstraintSet::categorical(std::move(pairs));
  }
  throw ValidationError("constraints need an 'explicit' or 'categorical' field");
}

struct Expansion {
  SkillSet skills;
  std::vector<std::string> warnings;
};

// Union over pairs of the skills whose subcategory matches and whose level
// equals the requested level exactly.
inline Expansion expand_categorical(std::span<const CategoryLevel> pairs, const SkillRepository& repo) {
  Expansion out;
  for (const auto& p : pairs) {
    if (!repo.has_subcategory(p.subcategory)) throw LookupError("unknown subcategory '" + p.subcategory + "'");
    std::size_t added = 0;
    for (const auto* s : repo.by_subcategory(p.subcategory)) {
      if (s->level == p.level) {
        out.skills.insert(s->id);
        ++added;
      }
    }
    if (added == 0)
      out.warnings.push_back("no skills in '" + p.subcategory + "' at level " + std::string(to_string(p.level)));
  }
  return out;
}

// Skill ids a constraint set refers to: the explicit list, or the expansion.
inline SkillSet target_skills(const ConstraintSet& c, const SkillRepository& repo) {
  if (c.is_explicit()) return SkillSet(c.skills().begin(), c.skills().end());
  return expand_categorical(c.pairs(), repo).skills;
}

}  // namespace grammarctl::egp

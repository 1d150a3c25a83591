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

#include <cstdint>
#include <set>
#include <string_view>

#include "grammarctl/core/errors.hpp"

namespace grammarctl {

using SkillId = std::int32_t;
using SkillSet = std::set<SkillId>;

// The two roles of a dyadic dialogue.
enum class Speaker : std::uint8_t { A, B };

inline constexpr Speaker other(Speaker s) { return s == Speaker::A ? Speaker::B : Speaker::A; }

inline constexpr std::string_view to_string(Speaker s) { return s == Speaker::A ? "A" : "B"; }

inline Speaker parse_speaker(std::string_view s) {
  if (s == "A" || s == "a") return Speaker::A;
  if (s == "B" || s == "b") return Speaker::B;
  throw ValidationError("speaker must be A or B, got '" + std::string(s) + "'");
}

}  // namespace grammarctl

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

#include <string>

#include "grammarctl/egp/repository.hpp"

namespace grammarctl::testing {

inline std::string data_path(const std::string& name) { return std::string(GRAMMARCTL_TEST_DATA) + "/" + name; }

// The 53-row skill table shipped with the tests.
inline const egp::SkillRepository& fixture_repo() {
  static const egp::SkillRepository repo = egp::SkillRepository::load(data_path("skills_fixture.tsv"));
  return repo;
}

}  // namespace grammarctl::testing

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
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "grammarctl/detector/annotation.hpp"
#include "grammarctl/detector/detector.hpp"

namespace grammarctl::detector {

inline constexpr std::size_t kTestSample = 20;

struct TestPrecision {
  std::optional<double> precision;  // empty when nothing could be judged
  std::size_t detections = 0;       // detected sentences in the corpus
  std::size_t sampled = 0;
  std::size_t judged_true = 0;
  std::size_t unlabeled = 0;  // sampled but no label obtainable
  bool no_support = false;    // no detection at all
};

inline nlohmann::json to_json(const TestPrecision& t) {
  return {{"precision", t.precision ? nlohmann::json(*t.precision) : nlohmann::json(nullptr)},
          {"detections", t.detections},
          {"sampled", t.sampled},
          {"judged_true", t.judged_true},
          {"unlabeled", t.unlabeled},
          {"flag", t.no_support ? "no-support" : ""}};
}

// Samples up to `sample` detected sentences and measures the share the
// annotations mark as true.
inline TestPrecision evaluate_test_precision(const TextDetector& detector, SkillId skill,
                                             std::span<const std::string> test_corpus, AnnotationStore& store,
                                             AnnotationSource* source = nullptr, std::size_t sample = kTestSample,
                                             std::uint64_t seed = 1) {
  TestPrecision r;
  std::vector<std::string> detected;
  std::set<std::string_view> seen;
  for (const auto& s : test_corpus) {
    if (text::tokenize(s).empty() || !seen.insert(s).second) continue;
    if (detector.detect(s)) detected.push_back(s);
  }
  r.detections = detected.size();
  if (detected.empty()) {
    r.no_support = true;
    return r;
  }
  std::mt19937_64 rng(seed);
  std::shuffle(detected.begin(), detected.end(), rng);
  if (detected.size() > sample) detected.resize(sample);
  r.sampled = detected.size();
  std::size_t judged = 0;
  for (const auto& s : detected) {
    auto l = obtain_label(store, source, s, skill);
    if (!l) {
      ++r.unlabeled;
      continue;
    }
    ++judged;
    r.judged_true += *l;
  }
  if (judged) r.precision = static_cast<double>(r.judged_true) / static_cast<double>(judged);
  return r;
}

}  // namespace grammarctl::detector

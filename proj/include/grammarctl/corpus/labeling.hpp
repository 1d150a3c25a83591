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
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"
#include "grammarctl/corpus/adapters.hpp"
#include "grammarctl/corpus/dialogue.hpp"
#include "grammarctl/detector/detector.hpp"

namespace grammarctl::corpus {

// True when the detector fires on any sentence of `turn_text`.
inline bool detect_in_turn(const detector::TextDetector& det, std::string_view turn_text) {
  for (const auto& s : text::split_sentences(turn_text)) {
    if (text::tokenize(s).empty()) continue;
    if (det.detect(s)) return true;
  }
  return false;
}

inline SkillSet detect_skills(std::string_view turn_text, const detector::DetectorSet& detectors) {
  SkillSet found;
  for (const auto& [id, det] : detectors)
    if (detect_in_turn(*det, turn_text)) found.insert(id);
  return found;
}

class LabelingAborted : public RuntimeFailure {
 public:
  LabelingAborted(const std::string& what, std::size_t completed)
      : RuntimeFailure(what), completed_(completed) {}
  std::size_t completed() const noexcept { return completed_; }

 private:
  std::size_t completed_;
};

struct LabelOptions {
  std::size_t threads = 0;  // 0: hardware concurrency
  // On failure, dialogues labeled so far are written here as JSON lines.
  std::optional<std::filesystem::path> checkpoint;
};

// Fills Turn::skills for every turn. Relabeling replaces earlier labels, so
// the operation is idempotent. Each dialogue is handled by one worker.
inline std::vector<Dialogue> label_corpus(std::vector<Dialogue> dialogues, const detector::DetectorSet& detectors,
                                          const LabelOptions& options = {}) {
  std::size_t workers = options.threads ? options.threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(1, dialogues.size()));
  std::vector<char> done(dialogues.size(), 0);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;

  auto work = [&] {
    while (!failed) {
      const std::size_t i = next++;
      if (i >= dialogues.size()) return;
      try {
        for (auto& t : dialogues[i].turns) t.skills = detect_skills(t.text, detectors);
        done[i] = 1;
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  if (error) {
    std::vector<Dialogue> finished;
    for (std::size_t i = 0; i < dialogues.size(); ++i)
      if (done[i]) finished.push_back(dialogues[i]);
    std::string why;
    try {
      std::rethrow_exception(error);
    } catch (const std::exception& e) {
      why = e.what();
    }
    if (options.checkpoint) {
      std::ofstream out(*options.checkpoint);
      write_jsonl(out, finished);
    }
    throw LabelingAborted("labeling aborted after " + std::to_string(finished.size()) + " dialogues: " + why,
                          finished.size());
  }
  return dialogues;
}

}  // namespace grammarctl::corpus

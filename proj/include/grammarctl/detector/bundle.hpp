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
#include <map>
#include <memory>
#include <string>

#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/detector/model.hpp"

namespace grammarctl::detector {

using ModelSet = std::map<SkillId, std::shared_ptr<DetectorModel>>;

inline nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::optional<double> optional_double(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

inline nlohmann::json manifest_entry(const DetectorModel& m, const std::string& weights_file) {
  const auto& c = m.encoder().config();
  return {{"skill_id", m.skill()},
          {"encoder_id", m.encoder().id()},
          {"encoder", {{"buckets", c.buckets}, {"dim", c.dim}, {"window", c.window}, {"seed", c.seed}}},
          {"threshold", m.threshold()},
          {"metrics",
           {{"validation_precision", optional_json(m.metrics().validation_precision)},
            {"validation_recall", optional_json(m.metrics().validation_recall)},
            {"test_precision", optional_json(m.metrics().test_precision)}}},
          {"provenance", to_string(m.provenance())},
          {"weights_file", weights_file}};
}

// Writes one weights file per skill plus manifest.json. Creation times go to
// manifest.meta.json so that the manifest itself is reproducible.
inline void save_bundle(const std::filesystem::path& dir, const ModelSet& models) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::array();
  nlohmann::json meta = nlohmann::json::object();
  const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  for (const auto& [id, m] : models) {
    const std::string file = "skill_" + std::to_string(id) + ".bin";
    std::ofstream out(dir / file, std::ios::binary);
    m->head().save(out);
    manifest.push_back(manifest_entry(*m, file));
    meta[std::to_string(id)] = {{"created_at", now}};
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
  std::ofstream(dir / "manifest.meta.json") << meta.dump(2) << '\n';
}

inline ModelSet load_bundle(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw LookupError("no detector manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
  ModelSet out;
  for (const auto& e : manifest) {
    try {
      const auto& ej = e.at("encoder");
      EncoderConfig cfg{ej.at("buckets").get<std::size_t>(), ej.at("dim").get<std::size_t>(),
                        ej.at("window").get<std::size_t>(), ej.at("seed").get<std::uint64_t>()};
      auto encoder = HashingEncoder::shared(cfg);
      if (encoder->id() != e.at("encoder_id").get<std::string>())
        throw ValidationError("encoder id mismatch for skill " + e.at("skill_id").dump());
      std::ifstream w(dir / e.at("weights_file").get<std::string>(), std::ios::binary);
      if (!w) throw LookupError("missing weights file " + e.at("weights_file").get<std::string>());
      const auto& mj = e.at("metrics");
      DetectorMetrics metrics{optional_double(mj, "validation_precision"), optional_double(mj, "validation_recall"),
                              optional_double(mj, "test_precision")};
      auto id = e.at("skill_id").get<SkillId>();
      out[id] = std::make_shared<DetectorModel>(id, encoder, MlpHead::load(w),
                                                parse_provenance(e.at("provenance").get<std::string>()), metrics);
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(std::string("bad manifest entry: ") + ex.what());
    }
  }
  return out;
}

inline DetectorSet as_detector_set(const ModelSet& models, bool deployable_only = false) {
  DetectorSet out;
  for (const auto& [id, m] : models)
    if (!deployable_only || m->deployable()) out[id] = m;
  return out;
}

}  // namespace grammarctl::detector

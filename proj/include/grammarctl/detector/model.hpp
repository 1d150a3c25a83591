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

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"
#include "grammarctl/core/types.hpp"
#include "grammarctl/detector/detector.hpp"
#include "grammarctl/detector/encoder.hpp"
#include "grammarctl/detector/head.hpp"

namespace grammarctl::detector {

inline constexpr double kDeployablePrecision = 0.80;

enum class Provenance : std::uint8_t { Synthetic, Manual, Automatized };

inline std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Synthetic: return "synthetic";
    case Provenance::Manual: return "manual";
    case Provenance::Automatized: return "automatized";
  }
  return "manual";
}

inline Provenance parse_provenance(std::string_view s) {
  if (s == "synthetic") return Provenance::Synthetic;
  if (s == "manual") return Provenance::Manual;
  if (s == "automatized") return Provenance::Automatized;
  throw ValidationError("unknown provenance '" + std::string(s) + "'");
}

struct DetectorMetrics {
  std::optional<double> validation_precision;
  std::optional<double> validation_recall;
  std::optional<double> test_precision;

  bool operator==(const DetectorMetrics&) const = default;
};

inline HeadShape default_head_shape(const HashingEncoder& encoder) {
  const int in = static_cast<int>(encoder.output_dim());
  return {in, 2 * in, in / 2};
}

// A trained classification head over the frozen encoder.
class DetectorModel final : public TextDetector {
 public:
  DetectorModel(SkillId skill, std::shared_ptr<const HashingEncoder> encoder, MlpHead head,
                Provenance provenance = Provenance::Manual, DetectorMetrics metrics = {})
      : skill_(skill), encoder_(std::move(encoder)), head_(std::move(head)), provenance_(provenance),
        metrics_(metrics) {
    if (!encoder_) throw PreconditionError("detector needs an encoder");
    if (static_cast<std::size_t>(head_.shape().input) != encoder_->output_dim())
      throw ValidationError("head input size does not match encoder '" + encoder_->id() + "'");
  }

  SkillId skill() const { return skill_; }
  double threshold() const { return kDetectionThreshold; }
  const HashingEncoder& encoder() const { return *encoder_; }
  const std::shared_ptr<const HashingEncoder>& encoder_ptr() const { return encoder_; }
  const MlpHead& head() const { return head_; }
  Provenance provenance() const { return provenance_; }
  const DetectorMetrics& metrics() const { return metrics_; }
  void set_metrics(const DetectorMetrics& m) { metrics_ = m; }
  void set_test_precision(std::optional<double> p) { metrics_.test_precision = p; }

  bool deployable() const { return metrics_.test_precision && *metrics_.test_precision >= kDeployablePrecision; }

  Eigen::RowVectorXf probabilities(const Eigen::MatrixXf& encoded) const { return head_.probabilities(encoded); }

  std::vector<TokenScore> score_tokens(std::string_view sentence) const override {
    auto tokens = text::tokenize(sentence);
    if (tokens.empty()) throw PreconditionError("text has no tokens to score");
    Eigen::RowVectorXf p = head_.probabilities(encoder_->encode(tokens));
    std::vector<TokenScore> out;
    out.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i)
      out.push_back({std::move(tokens[i]), static_cast<double>(p(static_cast<Eigen::Index>(i)))});
    return out;
  }

 private:
  SkillId skill_;
  std::shared_ptr<const HashingEncoder> encoder_;
  MlpHead head_;
  Provenance provenance_;
  DetectorMetrics metrics_;
};

// Keeps exactly the detectors whose test precision reaches the gate.
template <typename Map>
Map filter_deployable(const Map& detectors) {
  Map out;
  for (const auto& [id, d] : detectors)
    if (d && d->deployable()) out.emplace(id, d);
  return out;
}

}  // namespace grammarctl::detector

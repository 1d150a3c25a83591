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
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"
#include "grammarctl/core/types.hpp"
#include "grammarctl/detector/encoder.hpp"
#include "grammarctl/detector/head.hpp"
#include "grammarctl/detector/model.hpp"
#include "grammarctl/detector/training.hpp"

namespace grammarctl::control {

// Estimates, for a partial response, how likely the finished response will
// contain a skill. Token strings are tokenizer tokens.
class PrefixScorer {
 public:
  virtual ~PrefixScorer() = default;
  virtual SkillId skill() const = 0;
  virtual double score(std::span<const std::string> tokens) const = 0;

  // Scores of prefix + c for every candidate c. An empty candidate string
  // stands for a token that adds no text (end of sequence).
  virtual std::vector<double> score_candidates(std::span<const std::string> prefix,
                                               std::span<const std::string> candidates) const {
    std::vector<double> out;
    out.reserve(candidates.size());
    std::vector<std::string> ext(prefix.begin(), prefix.end());
    for (const auto& c : candidates) {
      if (c.empty()) {
        out.push_back(score(prefix));
        continue;
      }
      ext.push_back(c);
      out.push_back(score(ext));
      ext.pop_back();
    }
    return out;
  }
};

// Scores the detokenized text with a function; used for oracles.
class TextFunctionScorer final : public PrefixScorer {
 public:
  using Fn = std::function<double(std::string_view)>;
  TextFunctionScorer(SkillId skill, Fn fn) : skill_(skill), fn_(std::move(fn)) {}

  SkillId skill() const override { return skill_; }
  double score(std::span<const std::string> tokens) const override { return fn_(text::detokenize(tokens)); }

 private:
  SkillId skill_;
  Fn fn_;
};

// Per-skill classifier over partial sequences: the detector architecture
// trained on every prefix of the training examples.
class FutureDiscriminator final : public PrefixScorer {
 public:
  FutureDiscriminator(SkillId skill, std::shared_ptr<const detector::HashingEncoder> encoder, detector::MlpHead head)
      : skill_(skill), encoder_(std::move(encoder)), head_(std::move(head)) {
    if (!encoder_) throw PreconditionError("discriminator needs an encoder");
    if (static_cast<std::size_t>(head_.shape().input) != encoder_->output_dim())
      throw ValidationError("discriminator head does not match encoder '" + encoder_->id() + "'");
  }

  SkillId skill() const override { return skill_; }
  const detector::MlpHead& head() const { return head_; }
  const detector::HashingEncoder& encoder() const { return *encoder_; }
  bool trained_on_prefixes() const { return true; }

  double score(std::span<const std::string> tokens) const override {
    if (tokens.empty()) return 0.0;
    return head_.probabilities(encode(base_vectors(tokens), 0, static_cast<Eigen::Index>(tokens.size()))).maxCoeff();
  }

  // Only the last `window` prefix positions see the candidate, so the
  // earlier positions are scored once and shared across candidates.
  std::vector<double> score_candidates(std::span<const std::string> prefix,
                                       std::span<const std::string> candidates) const override {
    const auto w = static_cast<Eigen::Index>(encoder_->config().window);
    const auto n = static_cast<Eigen::Index>(prefix.size());
    const auto d = static_cast<Eigen::Index>(encoder_->token_dim());
    Eigen::MatrixXf base(d, n + 1);
    if (n) base.leftCols(n) = base_vectors(prefix);
    const Eigen::Index fixed = std::max<Eigen::Index>(0, n - w);
    const double fixed_max =
        fixed ? static_cast<double>(head_.probabilities(encode(base.leftCols(n), 0, fixed)).maxCoeff()) : 0.0;
    const double prefix_only = n ? std::max(fixed_max, static_cast<double>(
                                                           head_.probabilities(encode(base.leftCols(n), fixed, n)).maxCoeff()))
                                 : 0.0;

    std::vector<std::size_t> real;
    for (std::size_t c = 0; c < candidates.size(); ++c)
      if (!candidates[c].empty()) real.push_back(c);
    const Eigen::Index per = n + 1 - fixed;
    Eigen::MatrixXf cols(static_cast<Eigen::Index>(encoder_->output_dim()), per * static_cast<Eigen::Index>(real.size()));
    for (std::size_t r = 0; r < real.size(); ++r) {
      base.col(n) = encoder_->token_vector(candidates[real[r]]);
      cols.middleCols(per * static_cast<Eigen::Index>(r), per) = encode(base, fixed, n + 1);
    }
    const Eigen::RowVectorXf p = real.empty() ? Eigen::RowVectorXf() : head_.probabilities(cols);

    std::vector<double> out(candidates.size(), prefix_only);
    for (std::size_t r = 0; r < real.size(); ++r)
      out[real[r]] = std::max(fixed_max, static_cast<double>(p.segment(per * static_cast<Eigen::Index>(r), per).maxCoeff()));
    return out;
  }

 private:
  Eigen::MatrixXf base_vectors(std::span<const std::string> tokens) const {
    Eigen::MatrixXf b(static_cast<Eigen::Index>(encoder_->token_dim()), static_cast<Eigen::Index>(tokens.size()));
    for (std::size_t i = 0; i < tokens.size(); ++i) b.col(static_cast<Eigen::Index>(i)) = encoder_->token_vector(tokens[i]);
    return b;
  }

  // Context-window columns [from, to) of the sequence whose token vectors are
  // the columns of `base`; same layout as HashingEncoder::encode.
  Eigen::MatrixXf encode(const Eigen::MatrixXf& base, Eigen::Index from, Eigen::Index to) const {
    const auto d = base.rows();
    const auto n = base.cols();
    const auto w = static_cast<Eigen::Index>(encoder_->config().window);
    Eigen::MatrixXf out = Eigen::MatrixXf::Zero(static_cast<Eigen::Index>(encoder_->output_dim()), to - from);
    for (Eigen::Index i = from; i < to; ++i)
      for (Eigen::Index o = -w; o <= w; ++o) {
        const Eigen::Index j = i + o;
        if (j < 0 || j >= n) continue;
        out.block((o + w) * d, i - from, d, 1) = base.col(j);
      }
    return out;
  }

  SkillId skill_;
  std::shared_ptr<const detector::HashingEncoder> encoder_;
  detector::MlpHead head_;
};

// Number of prefix instances an example of `n` tokens contributes.
inline std::size_t prefix_instances(std::size_t n) { return n; }

// Every prefix (lengths 1..n) of every example, labeled with the label of
// the full example, trained with the max-pooled detector objective.
inline std::shared_ptr<FutureDiscriminator> train_future_discriminator(
    const detector::SkillTrainingSet& set, std::shared_ptr<const detector::HashingEncoder> encoder,
    const detector::TrainOptions& opt = {}, std::size_t* instances = nullptr) {
  if (set.positives.empty())
    throw ValidationError("skill " + std::to_string(set.skill) + " has no positive examples");
  if (set.negatives.empty())
    throw ValidationError("degenerate single-class training data for skill " + std::to_string(set.skill));
  detector::detail::Encoded data;
  auto add = [&](const std::string& s, bool label) {
    auto tokens = text::tokenize(s);
    if (tokens.empty()) throw ValidationError("training sentence has no tokens: \"" + s + "\"");
    for (std::size_t k = 1; k <= tokens.size(); ++k) {
      data.x.push_back(encoder->encode(std::span<const text::Token>(tokens).first(k)));
      data.y.push_back(label);
    }
  };
  for (const auto& s : set.positives) add(s, true);
  for (const auto& s : set.negatives) add(s, false);
  if (instances) *instances = data.x.size();
  std::vector<std::size_t> all(data.x.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto shape = opt.shape.value_or(detector::default_head_shape(*encoder));
  auto head = detector::detail::fit_head(data, std::move(all), opt, shape, opt.seed);
  return std::make_shared<FutureDiscriminator>(set.skill, std::move(encoder), std::move(head));
}

using DiscriminatorSet = std::map<SkillId, std::shared_ptr<const FutureDiscriminator>>;

// Same layout as a detector bundle: manifest.json plus one weights file per
// skill.
inline void save_discriminators(const std::filesystem::path& dir, const DiscriminatorSet& set) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [id, d] : set) {
    const std::string file = "future_" + std::to_string(id) + ".bin";
    std::ofstream out(dir / file, std::ios::binary);
    d->head().save(out);
    if (!out) throw RuntimeFailure("cannot write " + (dir / file).string());
    const auto& c = d->encoder().config();
    manifest.push_back({{"skill_id", id},
                        {"encoder_id", d->encoder().id()},
                        {"encoder", {{"buckets", c.buckets}, {"dim", c.dim}, {"window", c.window}, {"seed", c.seed}}},
                        {"weights_file", file}});
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

inline DiscriminatorSet load_discriminators(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw LookupError("no discriminator manifest in " + dir.string());
  DiscriminatorSet out;
  try {
    for (const auto& e : nlohmann::json::parse(in)) {
      const auto& ej = e.at("encoder");
      detector::EncoderConfig cfg{ej.at("buckets").get<std::size_t>(), ej.at("dim").get<std::size_t>(),
                                  ej.at("window").get<std::size_t>(), ej.at("seed").get<std::uint64_t>()};
      auto encoder = detector::HashingEncoder::shared(cfg);
      if (encoder->id() != e.at("encoder_id").get<std::string>())
        throw ValidationError("encoder id mismatch for discriminator " + e.at("skill_id").dump());
      std::ifstream w(dir / e.at("weights_file").get<std::string>(), std::ios::binary);
      if (!w) throw LookupError("missing weights file " + e.at("weights_file").get<std::string>());
      const auto id = e.at("skill_id").get<SkillId>();
      out[id] = std::make_shared<FutureDiscriminator>(id, encoder, detector::MlpHead::load(w));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError((dir / "manifest.json").string() + ": " + ex.what());
  }
  return out;
}

}  // namespace grammarctl::control

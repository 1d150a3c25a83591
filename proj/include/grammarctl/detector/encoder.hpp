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

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"

namespace grammarctl::detector {

struct EncoderConfig {
  std::size_t buckets = 1u << 15;
  std::size_t dim = 64;
  std::size_t window = 2;  // tokens of context on each side
  std::uint64_t seed = 20240611;
};

// Frozen contextual token encoder. Each token gets the normalized sum of
// random vectors for its lowercased word and its character 3-5 grams; the
// contextual embedding concatenates the vectors of the surrounding window.
// Nothing here is trainable, so detector heads see fixed features.
class HashingEncoder {
 public:
  explicit HashingEncoder(EncoderConfig config = {}) : config_(config) {
    if (config_.buckets == 0 || config_.dim == 0) throw ValidationError("encoder needs buckets > 0 and dim > 0");
    table_.resize(static_cast<Eigen::Index>(config_.dim), static_cast<Eigen::Index>(config_.buckets));
    std::mt19937_64 rng(config_.seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (Eigen::Index c = 0; c < table_.cols(); ++c)
      for (Eigen::Index r = 0; r < table_.rows(); ++r) table_(r, c) = normal(rng);
    id_ = "hash-ngram-v1/b" + std::to_string(config_.buckets) + "/d" + std::to_string(config_.dim) + "/w" +
          std::to_string(config_.window) + "/s" + std::to_string(config_.seed);
  }

  // Encoders are immutable and large, so identical configurations share one.
  static std::shared_ptr<const HashingEncoder> shared(EncoderConfig config = {}) {
    static std::mutex m;
    static std::map<std::string, std::weak_ptr<const HashingEncoder>> cache;
    std::lock_guard lock(m);
    const std::string key = std::to_string(config.buckets) + "/" + std::to_string(config.dim) + "/" +
                            std::to_string(config.window) + "/" + std::to_string(config.seed);
    if (auto p = cache[key].lock()) return p;
    auto p = std::make_shared<const HashingEncoder>(config);
    cache[key] = p;
    return p;
  }

  const std::string& id() const { return id_; }
  const EncoderConfig& config() const { return config_; }
  std::size_t token_dim() const { return config_.dim; }
  std::size_t output_dim() const { return config_.dim * (2 * config_.window + 1); }

  // Hash of every table entry; equal before and after any training run.
  std::uint64_t fingerprint() const {
    const auto* bytes = reinterpret_cast<const char*>(table_.data());
    return text::fnv1a(std::string_view(bytes, static_cast<std::size_t>(table_.size()) * sizeof(float)));
  }

  Eigen::VectorXf token_vector(std::string_view token) const {
    Eigen::VectorXf v = Eigen::VectorXf::Zero(static_cast<Eigen::Index>(config_.dim));
    const std::string w = text::to_lower(token);
    v += 2.0f * column("w:" + w);
    const std::string marked = "<" + w + ">";
    for (std::size_t n = 3; n <= 5; ++n)
      for (std::size_t i = 0; i + n <= marked.size(); ++i) v += column("c:" + marked.substr(i, n));
    const float norm = v.norm();
    if (norm > 0) v /= norm;
    return v;
  }

  // One column per token, output_dim() rows.
  Eigen::MatrixXf encode(std::span<const text::Token> tokens) const {
    const auto n = static_cast<Eigen::Index>(tokens.size());
    const auto d = static_cast<Eigen::Index>(config_.dim);
    const auto w = static_cast<Eigen::Index>(config_.window);
    Eigen::MatrixXf base(d, n);
    for (Eigen::Index i = 0; i < n; ++i) base.col(i) = token_vector(tokens[static_cast<std::size_t>(i)].text);
    Eigen::MatrixXf out = Eigen::MatrixXf::Zero(static_cast<Eigen::Index>(output_dim()), n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index o = -w; o <= w; ++o) {
        const Eigen::Index j = i + o;
        if (j < 0 || j >= n) continue;
        out.block((o + w) * d, i, d, 1) = base.col(j);
      }
    return out;
  }

  Eigen::MatrixXf encode(std::string_view sentence) const {
    auto tokens = text::tokenize(sentence);
    return encode(tokens);
  }

 private:
  Eigen::MatrixXf::ConstColXpr column(std::string_view feature) const {
    return table_.col(static_cast<Eigen::Index>(text::fnv1a(feature) % config_.buckets));
  }

  EncoderConfig config_;
  Eigen::MatrixXf table_;
  std::string id_;
};

}  // namespace grammarctl::detector

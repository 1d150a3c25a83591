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
#include <cstring>
#include <istream>
#include <ostream>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "grammarctl/core/errors.hpp"

namespace grammarctl::detector {

struct HeadShape {
  int input = 320;
  int hidden1 = 640;
  int hidden2 = 160;

  bool operator==(const HeadShape&) const = default;
};

// input -> hidden1 -> hidden2 -> 1 with ReLU activations and a logistic
// output. Columns of the input matrix are tokens.
class MlpHead {
 public:
  MlpHead() = default;

  static MlpHead zeros(HeadShape s) {
    MlpHead h;
    h.shape_ = s;
    h.w1_ = Eigen::MatrixXf::Zero(s.hidden1, s.input);
    h.b1_ = Eigen::VectorXf::Zero(s.hidden1);
    h.w2_ = Eigen::MatrixXf::Zero(s.hidden2, s.hidden1);
    h.b2_ = Eigen::VectorXf::Zero(s.hidden2);
    h.w3_ = Eigen::RowVectorXf::Zero(s.hidden2);
    h.b3_ = 0.0f;
    return h;
  }

  // He-initialized weights, zero biases.
  static MlpHead random(HeadShape s, std::uint64_t seed) {
    MlpHead h = zeros(s);
    std::mt19937_64 rng(seed);
    auto fill = [&](auto& m, int fan_in) {
      std::normal_distribution<float> nd(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    };
    fill(h.w1_, s.input);
    fill(h.w2_, s.hidden1);
    fill(h.w3_, s.hidden2);
    return h;
  }

  const HeadShape& shape() const { return shape_; }

  std::size_t parameter_count() const {
    return static_cast<std::size_t>(w1_.size() + b1_.size() + w2_.size() + b2_.size() + w3_.size() + 1);
  }

  Eigen::RowVectorXf logits(const Eigen::MatrixXf& x) const {
    check_input(x);
    Eigen::MatrixXf h1 = ((w1_ * x).colwise() + b1_).cwiseMax(0.0f);
    Eigen::MatrixXf h2 = ((w2_ * h1).colwise() + b2_).cwiseMax(0.0f);
    return (w3_ * h2).array() + b3_;
  }

  Eigen::RowVectorXf probabilities(const Eigen::MatrixXf& x) const {
    Eigen::RowVectorXf l = logits(x);
    return l.unaryExpr([](float v) { return sigmoid(v); });
  }

  static float sigmoid(float v) { return v >= 0 ? 1.0f / (1.0f + std::exp(-v)) : std::exp(v) / (1.0f + std::exp(v)); }

  struct Gradient {
    Eigen::MatrixXf w1, w2;
    Eigen::VectorXf b1, b2;
    Eigen::RowVectorXf w3;
    float b3 = 0.0f;
  };

  Gradient zero_gradient() const {
    return {Eigen::MatrixXf::Zero(w1_.rows(), w1_.cols()), Eigen::MatrixXf::Zero(w2_.rows(), w2_.cols()),
            Eigen::VectorXf::Zero(b1_.size()), Eigen::VectorXf::Zero(b2_.size()),
            Eigen::RowVectorXf::Zero(w3_.size()), 0.0f};
  }

  // Accumulates d(loss)/d(params) for inputs `x` (one column per example)
  // given d(loss)/d(logit) per column.
  void accumulate(const Eigen::MatrixXf& x, const Eigen::RowVectorXf& dlogit, Gradient& g) const {
    Eigen::MatrixXf z1 = (w1_ * x).colwise() + b1_;
    Eigen::MatrixXf h1 = z1.cwiseMax(0.0f);
    Eigen::MatrixXf z2 = (w2_ * h1).colwise() + b2_;
    Eigen::MatrixXf h2 = z2.cwiseMax(0.0f);
    g.w3.noalias() += dlogit * h2.transpose();
    g.b3 += dlogit.sum();
    Eigen::MatrixXf d2 = (w3_.transpose() * dlogit).cwiseProduct((z2.array() > 0.0f).cast<float>().matrix());
    g.w2.noalias() += d2 * h1.transpose();
    g.b2 += d2.rowwise().sum();
    Eigen::MatrixXf d1 = (w2_.transpose() * d2).cwiseProduct((z1.array() > 0.0f).cast<float>().matrix());
    g.w1.noalias() += d1 * x.transpose();
    g.b1 += d1.rowwise().sum();
  }

  // Adam state lives beside the head so that copies stay independent.
  struct Adam {
    float lr = 1e-3f, beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
    long step = 0;
    Gradient m, v;
  };

  Adam make_adam(float lr) const { return {lr, 0.9f, 0.999f, 1e-8f, 0, zero_gradient(), zero_gradient()}; }

  void apply(const Gradient& g, Adam& opt) {
    ++opt.step;
    const float c1 = 1.0f - std::pow(opt.beta1, static_cast<float>(opt.step));
    const float c2 = 1.0f - std::pow(opt.beta2, static_cast<float>(opt.step));
    auto upd = [&](auto& param, const auto& grad, auto& m, auto& v) {
      m = opt.beta1 * m + (1.0f - opt.beta1) * grad;
      v = opt.beta2 * v + (1.0f - opt.beta2) * grad.cwiseProduct(grad);
      param.array() -= opt.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt.eps);
    };
    upd(w1_, g.w1, opt.m.w1, opt.v.w1);
    upd(b1_, g.b1, opt.m.b1, opt.v.b1);
    upd(w2_, g.w2, opt.m.w2, opt.v.w2);
    upd(b2_, g.b2, opt.m.b2, opt.v.b2);
    upd(w3_, g.w3, opt.m.w3, opt.v.w3);
    opt.m.b3 = opt.beta1 * opt.m.b3 + (1.0f - opt.beta1) * g.b3;
    opt.v.b3 = opt.beta2 * opt.v.b3 + (1.0f - opt.beta2) * g.b3 * g.b3;
    b3_ -= opt.lr * (opt.m.b3 / c1) / (std::sqrt(opt.v.b3 / c2) + opt.eps);
  }

  void save(std::ostream& out) const {
    out.write(kMagic, 4);
    const std::int32_t dims[3] = {shape_.input, shape_.hidden1, shape_.hidden2};
    out.write(reinterpret_cast<const char*>(dims), sizeof dims);
    auto put = [&](const auto& m) {
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    };
    put(w1_);
    put(b1_);
    put(w2_);
    put(b2_);
    put(w3_);
    out.write(reinterpret_cast<const char*>(&b3_), sizeof b3_);
    if (!out) throw RuntimeFailure("failed writing detector head");
  }

  static MlpHead load(std::istream& in) {
    char magic[4];
    std::int32_t dims[3];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw ParseError("not a detector head file");
    if (!in.read(reinterpret_cast<char*>(dims), sizeof dims) || dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
      throw ParseError("corrupt detector head header");
    MlpHead h = zeros({dims[0], dims[1], dims[2]});
    auto get = [&](auto& m) {
      if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float))))
        throw ParseError("truncated detector head file");
    };
    get(h.w1_);
    get(h.b1_);
    get(h.w2_);
    get(h.b2_);
    get(h.w3_);
    if (!in.read(reinterpret_cast<char*>(&h.b3_), sizeof h.b3_)) throw ParseError("truncated detector head file");
    return h;
  }

  bool operator==(const MlpHead& o) const {
    return shape_ == o.shape_ && w1_ == o.w1_ && b1_ == o.b1_ && w2_ == o.w2_ && b2_ == o.b2_ && w3_ == o.w3_ &&
           b3_ == o.b3_;
  }

 private:
  static constexpr char kMagic[4] = {'G', 'C', 'D', 'H'};

  void check_input(const Eigen::MatrixXf& x) const {
    if (x.rows() != shape_.input)
      throw PreconditionError("head expects " + std::to_string(shape_.input) + " input features, got " +
                              std::to_string(x.rows()));
  }

  HeadShape shape_;
  Eigen::MatrixXf w1_, w2_;
  Eigen::VectorXf b1_, b2_;
  Eigen::RowVectorXf w3_;
  float b3_ = 0.0f;
};

}  // namespace grammarctl::detector

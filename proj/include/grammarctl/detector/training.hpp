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
#include <span>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/types.hpp"
#include "grammarctl/detector/encoder.hpp"
#include "grammarctl/detector/head.hpp"
#include "grammarctl/detector/model.hpp"

namespace grammarctl::detector {

struct SkillTrainingSet {
  SkillId skill = 0;
  std::vector<std::string> positives;
  std::vector<std::string> negatives;
  Provenance provenance = Provenance::Manual;
};

inline void validate(const SkillTrainingSet& set) {
  if (set.positives.empty()) throw ValidationError("training set for skill " + std::to_string(set.skill) + " has no positives");
  std::set<std::string_view> pos(set.positives.begin(), set.positives.end());
  for (const auto& n : set.negatives)
    if (pos.count(n)) throw ValidationError("label conflict: sentence is both positive and negative: \"" + n + "\"");
}

struct TrainOptions {
  std::size_t folds = 5;
  std::size_t max_epochs = 20;
  std::size_t patience = 3;
  std::size_t batch_size = 32;
  float learning_rate = 1e-3f;
  double negative_ratio = 4.0;  // negatives drawn per epoch, relative to positives
  double monitor_fraction = 0.1;
  std::size_t min_positives = 10;
  std::uint64_t seed = 1;
  std::optional<HeadShape> shape;  // defaults to the encoder-derived shape
};

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::optional<double> precision() const {
    if (tp + fp == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  std::optional<double> recall() const {
    if (tp + fn == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
  }
  void add(bool predicted, bool actual) {
    if (predicted && actual) ++tp;
    else if (predicted) ++fp;
    else if (actual) ++fn;
    else ++tn;
  }
};

struct FoldResult {
  Confusion confusion;
  std::size_t epochs = 0;
};

struct TrainReport {
  std::shared_ptr<DetectorModel> model;
  std::optional<double> validation_precision;  // mean over folds with predicted positives
  std::optional<double> validation_recall;
  std::vector<FoldResult> folds;
  std::size_t epochs = 0;
};

// Stratified k-way partition of example indices [0, labels.size()).
inline std::vector<std::vector<std::size_t>> make_folds(const std::vector<bool>& labels, std::size_t k,
                                                        std::uint64_t seed) {
  if (k < 2) throw PreconditionError("cross-validation needs at least 2 folds");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t next = 0;
  for (auto* group : {&pos, &neg})
    for (auto i : *group) folds[next++ % k].push_back(i);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

namespace detail {

struct Encoded {
  std::vector<Eigen::MatrixXf> x;
  std::vector<bool> y;
};

inline Encoded encode_set(const SkillTrainingSet& set, const HashingEncoder& encoder) {
  Encoded e;
  auto add = [&](const std::string& s, bool label) {
    auto tokens = text::tokenize(s);
    if (tokens.empty()) throw ValidationError("training sentence has no tokens: \"" + s + "\"");
    e.x.push_back(encoder.encode(tokens));
    e.y.push_back(label);
  };
  for (const auto& s : set.positives) add(s, true);
  for (const auto& s : set.negatives) add(s, false);
  return e;
}

inline float max_prob(const MlpHead& head, const Eigen::MatrixXf& x) { return head.probabilities(x).maxCoeff(); }

inline double pooled_loss(const MlpHead& head, const Encoded& data, const std::vector<std::size_t>& idx) {
  double loss = 0.0;
  for (auto i : idx) {
    const double p = std::clamp(static_cast<double>(max_prob(head, data.x[i])), 1e-7, 1.0 - 1e-7);
    loss -= data.y[i] ? std::log(p) : std::log(1.0 - p);
  }
  return idx.empty() ? 0.0 : loss / static_cast<double>(idx.size());
}

// One optimizer step on a batch. The loss is binary cross-entropy on the
// max-pooled token probability, so the gradient flows through the argmax
// token of each sentence.
inline void train_batch(MlpHead& head, MlpHead::Adam& opt, const Encoded& data,
                        std::span<const std::size_t> batch) {
  Eigen::Index cols = 0;
  for (auto i : batch) cols += data.x[i].cols();
  Eigen::MatrixXf all(data.x[batch.front()].rows(), cols);
  Eigen::Index at = 0;
  for (auto i : batch) {
    all.middleCols(at, data.x[i].cols()) = data.x[i];
    at += data.x[i].cols();
  }
  Eigen::RowVectorXf p = head.probabilities(all);
  Eigen::MatrixXf chosen(all.rows(), static_cast<Eigen::Index>(batch.size()));
  Eigen::RowVectorXf dlogit(static_cast<Eigen::Index>(batch.size()));
  at = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto n = data.x[batch[b]].cols();
    Eigen::Index arg = 0;
    const float best = p.segment(at, n).maxCoeff(&arg);
    chosen.col(static_cast<Eigen::Index>(b)) = all.col(at + arg);
    dlogit(static_cast<Eigen::Index>(b)) = (best - (data.y[batch[b]] ? 1.0f : 0.0f)) / static_cast<float>(batch.size());
    at += n;
  }
  auto g = head.zero_gradient();
  head.accumulate(chosen, dlogit, g);
  head.apply(g, opt);
}

// Fits a fresh head on `train` with early stopping on a held-out monitor
// slice. Returns the head from the best monitor epoch.
inline MlpHead fit_head(const Encoded& data, std::vector<std::size_t> train, const TrainOptions& opt,
                        HeadShape shape, std::uint64_t seed, std::size_t* epochs_out = nullptr) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> pos, neg, monitor;
  std::shuffle(train.begin(), train.end(), rng);
  for (auto i : train) (data.y[i] ? pos : neg).push_back(i);
  const auto hold = [&](std::vector<std::size_t>& v) {
    const auto m = static_cast<std::size_t>(std::floor(static_cast<double>(v.size()) * opt.monitor_fraction));
    for (std::size_t j = 0; j < m && v.size() > 1; ++j) {
      monitor.push_back(v.back());
      v.pop_back();
    }
  };
  if (opt.monitor_fraction > 0 && pos.size() >= 10 && neg.size() >= 10) {
    hold(pos);
    hold(neg);
  }

  MlpHead head = MlpHead::random(shape, seed);
  auto adam = head.make_adam(opt.learning_rate);
  MlpHead best = head;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0, epochs = 0;
  const auto neg_per_epoch = std::min(
      neg.size(), static_cast<std::size_t>(std::ceil(opt.negative_ratio * static_cast<double>(pos.size()))));

  for (std::size_t epoch = 0; epoch < opt.max_epochs; ++epoch) {
    ++epochs;
    std::shuffle(neg.begin(), neg.end(), rng);
    std::vector<std::size_t> order(pos);
    order.insert(order.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(neg_per_epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += opt.batch_size) {
      const auto e = std::min(order.size(), b + opt.batch_size);
      train_batch(head, adam, data, std::span<const std::size_t>(order).subspan(b, e - b));
    }
    if (monitor.empty()) {
      best = head;
      continue;
    }
    const double loss = pooled_loss(head, data, monitor);
    if (loss < best_loss - 1e-6) {
      best_loss = loss;
      best = head;
      since_best = 0;
    } else if (++since_best >= opt.patience) {
      break;
    }
  }
  if (epochs_out) *epochs_out = epochs;
  return best;
}

}  // namespace detail

// Trains a head for one skill with k-fold cross-validation, then fits the
// final model on all examples. The encoder is only read.
inline TrainReport train_detector(const SkillTrainingSet& set, std::shared_ptr<const HashingEncoder> encoder,
                                  const TrainOptions& opt = {}) {
  if (!encoder) throw PreconditionError("training needs an encoder");
  validate(set);
  if (set.negatives.empty()) throw ValidationError("degenerate single-class training data for skill " + std::to_string(set.skill));
  if (set.positives.size() < opt.min_positives)
    throw PreconditionError("skill " + std::to_string(set.skill) + " has " + std::to_string(set.positives.size()) +
                            " positives; at least " + std::to_string(opt.min_positives) + " are needed");
  const HeadShape shape = opt.shape.value_or(default_head_shape(*encoder));
  const auto data = detail::encode_set(set, *encoder);

  TrainReport report;
  double prec_sum = 0.0, rec_sum = 0.0;
  std::size_t prec_n = 0, rec_n = 0;
  const auto folds = make_folds(data.y, opt.folds, opt.seed);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::vector<std::size_t> train;
    for (std::size_t g = 0; g < folds.size(); ++g)
      if (g != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
    FoldResult fr;
    const MlpHead head = detail::fit_head(data, train, opt, shape, opt.seed + 1000 * (f + 1), &fr.epochs);
    for (auto i : folds[f]) fr.confusion.add(detail::max_prob(head, data.x[i]) > kDetectionThreshold, data.y[i]);
    if (auto p = fr.confusion.precision()) prec_sum += *p, ++prec_n;
    if (auto r = fr.confusion.recall()) rec_sum += *r, ++rec_n;
    report.folds.push_back(fr);
  }
  if (prec_n) report.validation_precision = prec_sum / static_cast<double>(prec_n);
  if (rec_n) report.validation_recall = rec_sum / static_cast<double>(rec_n);

  std::vector<std::size_t> all(data.x.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  MlpHead head = detail::fit_head(data, all, opt, shape, opt.seed, &report.epochs);
  report.model = std::make_shared<DetectorModel>(
      set.skill, std::move(encoder), std::move(head), set.provenance,
      DetectorMetrics{report.validation_precision, report.validation_recall, std::nullopt});
  return report;
}

// Single fit on all examples without cross-validation; used for the
// preliminary detectors inside curation loops.
inline std::shared_ptr<DetectorModel> fit_detector(const SkillTrainingSet& set,
                                                   std::shared_ptr<const HashingEncoder> encoder,
                                                   const TrainOptions& opt = {}) {
  if (!encoder) throw PreconditionError("training needs an encoder");
  validate(set);
  if (set.negatives.empty()) throw ValidationError("degenerate single-class training data for skill " + std::to_string(set.skill));
  const auto data = detail::encode_set(set, *encoder);
  std::vector<std::size_t> all(data.x.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  MlpHead head = detail::fit_head(data, all, opt, opt.shape.value_or(default_head_shape(*encoder)), opt.seed);
  return std::make_shared<DetectorModel>(set.skill, std::move(encoder), std::move(head), set.provenance);
}

// Distinct skills train independently, so they run on separate threads.
inline std::vector<TrainReport> train_detectors(const std::vector<SkillTrainingSet>& sets,
                                                std::shared_ptr<const HashingEncoder> encoder,
                                                const TrainOptions& opt = {}, std::size_t threads = 0) {
  std::vector<TrainReport> out(sets.size());
  std::vector<std::exception_ptr> errors(sets.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < sets.size();) {
      try {
        out[i] = train_detector(sets[i], encoder, opt);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::size_t n = threads ? threads : std::max(1u, std::thread::hardware_concurrency());
  n = std::min(n, std::max<std::size_t>(1, sets.size()));
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(work);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace grammarctl::detector

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
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "grammarctl/core/errors.hpp"
#include "grammarctl/llm/logit_model.hpp"

namespace grammarctl::llm {

struct LoraConfig {
  int rank = 64;
  float alpha = 16.0f;
  float dropout = 0.1f;
  float learning_rate = 5e-4f;
  std::size_t steps = 1000;
  std::size_t batch_examples = 8;
  std::size_t checkpoint_every = 200;
  std::uint64_t seed = 1;

  float scale() const { return alpha / static_cast<float>(rank); }
};

inline nlohmann::json to_json(const LoraConfig& c) {
  return {{"rank", c.rank},   {"alpha", c.alpha},       {"dropout", c.dropout},
          {"learning_rate", c.learning_rate}, {"steps", c.steps}, {"batch_examples", c.batch_examples},
          {"checkpoint_every", c.checkpoint_every}, {"seed", c.seed}};
}

// Low-rank updates W + scale * B A for the context, prompt and output
// projections of a TinyLM. B starts at zero so a fresh adapter is a no-op.
struct LoraAdapter {
  struct Pair {
    Eigen::MatrixXf a;  // rank x in
    Eigen::MatrixXf b;  // out x rank
  };
  Pair context, prompt, output;
  int rank = 0;
  float scale = 0.0f;

  static LoraAdapter fresh(const TinyLM& base, const LoraConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    auto make = [&](Eigen::Index out, Eigen::Index in) {
      Pair p;
      std::normal_distribution<float> nd(0.0f, 1.0f / std::sqrt(static_cast<float>(in)));
      p.a.resize(cfg.rank, in);
      for (Eigen::Index i = 0; i < p.a.size(); ++i) p.a.data()[i] = nd(rng);
      p.b = Eigen::MatrixXf::Zero(out, cfg.rank);
      return p;
    };
    const auto& w = base.params();
    LoraAdapter ad;
    ad.context = make(w.wc.rows(), w.wc.cols());
    ad.prompt = make(w.wp.rows(), w.wp.cols());
    ad.output = make(w.wo.rows(), w.wo.cols());
    ad.rank = cfg.rank;
    ad.scale = cfg.scale();
    return ad;
  }

  bool finite() const {
    for (const auto* p : {&context, &prompt, &output})
      if (!p->a.allFinite() || !p->b.allFinite()) return false;
    return true;
  }

  void save(const std::filesystem::path& file) const {
    std::ofstream out(file, std::ios::binary);
    out.write("GCLA", 4);
    const std::int64_t head[2] = {rank, 0};
    out.write(reinterpret_cast<const char*>(head), sizeof head);
    out.write(reinterpret_cast<const char*>(&scale), sizeof scale);
    for (const auto* p : {&context, &prompt, &output})
      for (const auto* m : {&p->a, &p->b}) {
        const std::int64_t dims[2] = {m->rows(), m->cols()};
        out.write(reinterpret_cast<const char*>(dims), sizeof dims);
        out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(float)));
      }
    if (!out) throw RuntimeFailure("cannot write adapter " + file.string());
  }

  static LoraAdapter load(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw LookupError("no adapter at " + file.string());
    char magic[4];
    std::int64_t head[2];
    LoraAdapter ad;
    if (!in.read(magic, 4) || std::memcmp(magic, "GCLA", 4) != 0 || !in.read(reinterpret_cast<char*>(head), sizeof head) ||
        !in.read(reinterpret_cast<char*>(&ad.scale), sizeof ad.scale))
      throw ParseError("not an adapter file: " + file.string());
    ad.rank = static_cast<int>(head[0]);
    for (auto* p : {&ad.context, &ad.prompt, &ad.output})
      for (auto* m : {&p->a, &p->b}) {
        std::int64_t dims[2];
        if (!in.read(reinterpret_cast<char*>(dims), sizeof dims) || dims[0] < 0 || dims[1] < 0 || dims[0] > (1 << 24) ||
            dims[1] > (1 << 24))
          throw ParseError("corrupt adapter file: " + file.string());
        m->resize(dims[0], dims[1]);
        in.read(reinterpret_cast<char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(float)));
      }
    if (!in) throw ParseError("truncated adapter file: " + file.string());
    return ad;
  }
};

// A TinyLM whose projections include the adapter's low-rank update.
inline std::shared_ptr<TinyLM> merge(const TinyLM& base, const LoraAdapter& ad, std::string id = {}) {
  auto p = base.params();
  if (ad.context.b.rows() != p.wc.rows() || ad.context.a.cols() != p.wc.cols() || ad.output.b.rows() != p.wo.rows())
    throw PreconditionError("adapter shape does not match model '" + base.id() + "'");
  p.wc += ad.scale * ad.context.b * ad.context.a;
  p.wp += ad.scale * ad.prompt.b * ad.prompt.a;
  p.wo += ad.scale * ad.output.b * ad.output.a;
  if (id.empty()) id = base.id() + "+lora";
  return std::make_shared<TinyLM>(std::move(id), base.vocab(), base.shape(), base.max_context(), std::move(p));
}

struct Checkpoint {
  std::size_t step = 0;
  double score = 0.0;  // validation constraint satisfaction
  double loss = 0.0;   // mean training loss since the previous checkpoint
};

struct FinetuneResult {
  LoraAdapter adapter;
  std::shared_ptr<TinyLM> model;  // base merged with `adapter`
  std::optional<std::size_t> best_step;
  std::vector<Checkpoint> checkpoints;
  bool diverged = false;
  std::string note;
};

inline nlohmann::json manifest(const FinetuneResult& r, const TinyLM& base, const LoraConfig& cfg) {
  nlohmann::json cps = nlohmann::json::array();
  for (const auto& c : r.checkpoints) cps.push_back({{"step", c.step}, {"score", c.score}, {"loss", c.loss}});
  nlohmann::json j = {{"base_model", base.id()}, {"config", to_json(cfg)}, {"checkpoints", cps}, {"diverged", r.diverged}};
  j["best_step"] = r.best_step ? nlohmann::json(*r.best_step) : nlohmann::json(nullptr);
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

inline void save_adapter(const std::filesystem::path& dir, const FinetuneResult& r, const TinyLM& base,
                         const LoraConfig& cfg) {
  std::filesystem::create_directories(dir);
  r.adapter.save(dir / "adapter.bin");
  std::ofstream(dir / "manifest.json") << manifest(r, base, cfg).dump(2) << '\n';
}

// Scores a candidate model; higher is better.
using CheckpointScorer = std::function<double(const TinyLM&)>;

namespace detail {

struct LoraGrad {
  Eigen::MatrixXf ca, cb, pa, pb, oa, ob;
};

// Mean token cross-entropy and adapter gradients for a batch of examples.
inline double lora_batch(const TinyLM& base, const LoraAdapter& ad, std::span<const LmExample* const> batch,
                         float dropout, std::mt19937_64& rng, LoraGrad& g) {
  const auto& w = base.params();
  const auto& s = base.shape();
  Eigen::Index n = 0;
  for (const auto* ex : batch) n += static_cast<Eigen::Index>(ex->response.size() + 1);
  Eigen::MatrixXf x(s.context * s.dim, n), pv(s.dim, n);
  std::vector<TokenId> targets;
  Eigen::Index c = 0;
  for (const auto* ex : batch) {
    const auto p = base.prompt_vector(ex->prompt);
    for (std::size_t j = 0; j <= ex->response.size(); ++j, ++c) {
      x.col(c) = base.context_vector(ex->response, j);
      pv.col(c) = p;
      targets.push_back(target_at(*ex, j));
    }
  }
  std::bernoulli_distribution drop(dropout);
  const float keep = 1.0f / (1.0f - dropout);
  // Inverted dropout mask: 0 for dropped entries, 1/(1-p) for kept ones.
  auto mask = [&](Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXf m = Eigen::MatrixXf::Constant(rows, cols, 1.0f);
    if (dropout <= 0.0f) return m;
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = drop(rng) ? 0.0f : keep;
    return m;
  };
  const float sc = ad.scale;
  const Eigen::MatrixXf xd = x.cwiseProduct(mask(x.rows(), n)), pd = pv.cwiseProduct(mask(pv.rows(), n));
  const Eigen::MatrixXf ax = ad.context.a * xd, ap = ad.prompt.a * pd;
  Eigen::MatrixXf h = ((w.wc * x + sc * ad.context.b * ax + w.wp * pv + sc * ad.prompt.b * ap).colwise() + w.b)
                          .array()
                          .tanh()
                          .matrix();
  const Eigen::MatrixXf hmask = mask(h.rows(), n);
  const Eigen::MatrixXf hd = h.cwiseProduct(hmask);
  const Eigen::MatrixXf ah = ad.output.a * hd;
  Eigen::MatrixXf probs = (w.wo * h + sc * ad.output.b * ah).colwise() + w.bo;
  double loss = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    auto col = probs.col(k);
    const float mx = col.maxCoeff();
    col.array() -= mx;
    const float z = col.array().exp().sum();
    loss += std::log(z) - col(targets[static_cast<std::size_t>(k)]);
    col = col.array().exp().matrix() / z;
    col(targets[static_cast<std::size_t>(k)]) -= 1.0f;
  }
  probs /= static_cast<float>(n);
  g.ob = sc * probs * ah.transpose();
  g.oa = sc * (ad.output.b.transpose() * probs) * hd.transpose();
  Eigen::MatrixXf dh = w.wo.transpose() * probs +
                       sc * (ad.output.a.transpose() * (ad.output.b.transpose() * probs)).cwiseProduct(hmask);
  Eigen::MatrixXf dz = dh.cwiseProduct((1.0f - h.array().square()).matrix());
  g.cb = sc * dz * ax.transpose();
  g.ca = sc * (ad.context.b.transpose() * dz) * xd.transpose();
  g.pb = sc * dz * ap.transpose();
  g.pa = sc * (ad.prompt.b.transpose() * dz) * pd.transpose();
  return loss / static_cast<double>(n);
}

}  // namespace detail

// Trains a low-rank adapter on (prompt, completion) examples. Every
// `checkpoint_every` steps the merged model is scored; the best-scoring
// checkpoint is returned (earliest on ties). A non-finite loss stops training;
// only checkpoints assessed before that point are candidates.
inline FinetuneResult finetune(const TinyLM& base, std::span<const LmExample> data, const CheckpointScorer& scorer,
                               const LoraConfig& cfg = {}) {
  if (data.empty()) throw PreconditionError("fine-tuning needs a non-empty dataset");
  if (cfg.rank <= 0 || cfg.checkpoint_every == 0 || cfg.batch_examples == 0)
    throw ValidationError("rank, batch size and checkpoint cadence must be positive");
  if (cfg.dropout < 0.0f || cfg.dropout >= 1.0f) throw ValidationError("dropout must lie in [0, 1)");
  for (const auto& ex : data) base.check_context(ex.prompt.size(), ex.response.size());

  FinetuneResult result;
  result.adapter = LoraAdapter::fresh(base, cfg);
  LoraAdapter ad = result.adapter;
  double best = -std::numeric_limits<double>::infinity();

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;

  detail::Adam adam(cfg.learning_rate);
  double loss_sum = 0;
  std::size_t loss_n = 0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<const LmExample*> batch;
    for (std::size_t b = 0; b < cfg.batch_examples; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(&data[order[cursor++]]);
    }
    detail::LoraGrad g;
    const double loss = detail::lora_batch(base, ad, batch, cfg.dropout, rng, g);
    if (!std::isfinite(loss)) {
      result.diverged = true;
      result.note = "loss became non-finite at step " + std::to_string(step);
      break;
    }
    loss_sum += loss;
    ++loss_n;
    Eigen::MatrixXf* params[] = {&ad.context.a, &ad.context.b, &ad.prompt.a, &ad.prompt.b, &ad.output.a, &ad.output.b};
    const Eigen::MatrixXf grads[] = {g.ca, g.cb, g.pa, g.pb, g.oa, g.ob};
    adam.step(params, grads);
    if (!ad.finite()) {
      result.diverged = true;
      result.note = "adapter weights became non-finite at step " + std::to_string(step);
      break;
    }
    if (step % cfg.checkpoint_every == 0) {
      auto model = merge(base, ad);
      const double score = scorer(*model);
      result.checkpoints.push_back({step, score, loss_sum / static_cast<double>(loss_n)});
      loss_sum = 0;
      loss_n = 0;
      if (score > best) {
        best = score;
        result.adapter = ad;
        result.best_step = step;
      }
    }
  }
  if (!result.best_step) {
    if (!result.diverged) {
      // Fewer steps than one checkpoint interval: the final weights stand.
      result.adapter = ad;
      result.note = "no checkpoint reached; returning final weights";
    } else {
      result.note += "; no checkpoint reached, returning the untrained adapter";
    }
  }
  result.model = merge(base, result.adapter);
  return result;
}

}  // namespace grammarctl::llm

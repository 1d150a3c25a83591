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
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "grammarctl/core/errors.hpp"
#include "grammarctl/core/text.hpp"
#include "grammarctl/llm/chat.hpp"

namespace grammarctl::llm {

using TokenId = std::int32_t;

// Word-level vocabulary over the shared tokenizer.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0, kBos = 1, kEos = 2, kSep = 3, kUnk = 4;

  Vocabulary() : words_{"<pad>", "<bos>", "<eos>", "<sep>", "<unk>"} { reindex(); }

  // Tokens seen at least `min_count` times, most frequent first (ties by
  // byte order), capped at `max_size` entries including the specials.
  static Vocabulary build(std::span<const std::string> texts, std::size_t min_count = 1,
                          std::size_t max_size = 50000) {
    std::map<std::string, std::size_t> counts;
    for (const auto& t : texts)
      for (auto& tok : text::token_strings(t)) ++counts[tok];
    std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocabulary v;
    for (const auto& [w, c] : items) {
      if (c < min_count || v.words_.size() >= max_size) break;
      v.words_.push_back(w);
    }
    v.reindex();
    return v;
  }

  static Vocabulary from_words(std::vector<std::string> words) {
    Vocabulary v;
    v.words_ = std::move(words);
    if (v.words_.size() < 5 || v.words_[0] != "<pad>" || v.words_[2] != "<eos>")
      throw ParseError("vocabulary must start with the special tokens");
    v.reindex();
    return v;
  }

  std::size_t size() const { return words_.size(); }
  const std::string& word(TokenId id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& words() const { return words_; }
  bool is_special(TokenId id) const { return id >= 0 && id <= kUnk; }

  TokenId id(std::string_view w) const {
    auto it = index_.find(std::string(w));
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(std::string_view w) const { return index_.count(std::string(w)) > 0; }

  std::vector<TokenId> encode(std::string_view s) const {
    std::vector<TokenId> out;
    for (const auto& t : text::tokenize(s)) out.push_back(id(t.text));
    return out;
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::vector<std::string> toks;
    for (auto i : ids)
      if (!is_special(i)) toks.push_back(word(i));
    return text::detokenize(toks);
  }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = static_cast<TokenId>(i);
  }

  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

// Next-token interface used by guided decoding and fine-tuning. `prompt` is
// the conditioning text, `prefix` the response generated so far.
class LogitModel {
 public:
  virtual ~LogitModel() = default;
  virtual std::string id() const = 0;
  virtual const Vocabulary& vocab() const = 0;
  virtual std::size_t max_context() const = 0;
  virtual Eigen::VectorXf next_token_logits(std::span<const TokenId> prompt, std::span<const TokenId> prefix) const = 0;

  std::size_t vocab_size() const { return vocab().size(); }
  TokenId eos() const { return Vocabulary::kEos; }

  void check_context(std::size_t prompt_len, std::size_t prefix_len) const {
    if (prompt_len + 1 + prefix_len > max_context())
      throw ContextOverflowError("sequence of " + std::to_string(prompt_len + 1 + prefix_len) +
                                 " tokens exceeds the context of " + std::to_string(max_context()));
  }
};

struct TinyLmShape {
  int dim = 32;
  int hidden = 128;
  int context = 3;  // response tokens visible to the next-token predictor

  bool operator==(const TinyLmShape&) const = default;
};

// Feed-forward neural LM: the last few response tokens plus the mean prompt
// embedding feed one tanh layer followed by a softmax over the vocabulary.
//   h = tanh(Wc [e(t-3); e(t-2); e(t-1)] + Wp mean(e(prompt)) + b)
//   logits = Wo h + bo
class TinyLM : public LogitModel {
 public:
  struct Params {
    Eigen::MatrixXf emb;  // dim x V
    Eigen::MatrixXf wc;   // hidden x context*dim
    Eigen::MatrixXf wp;   // hidden x dim
    Eigen::VectorXf b;    // hidden
    Eigen::MatrixXf wo;   // V x hidden
    Eigen::VectorXf bo;   // V
  };

  TinyLM(std::string id, Vocabulary vocab, TinyLmShape shape, std::size_t max_context, std::uint64_t seed)
      : id_(std::move(id)), vocab_(std::move(vocab)), shape_(shape), max_context_(max_context) {
    const int v = static_cast<int>(vocab_.size());
    std::mt19937_64 rng(seed);
    auto init = [&](Eigen::MatrixXf& m, int rows, int cols, float scale) {
      std::normal_distribution<float> nd(0.0f, scale);
      m.resize(rows, cols);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    };
    init(p_.emb, shape_.dim, v, 0.3f);
    init(p_.wc, shape_.hidden, shape_.context * shape_.dim, 1.0f / std::sqrt(static_cast<float>(shape_.context * shape_.dim)));
    init(p_.wp, shape_.hidden, shape_.dim, 1.0f / std::sqrt(static_cast<float>(shape_.dim)));
    init(p_.wo, v, shape_.hidden, 1.0f / std::sqrt(static_cast<float>(shape_.hidden)));
    p_.b = Eigen::VectorXf::Zero(shape_.hidden);
    p_.bo = Eigen::VectorXf::Zero(v);
  }

  TinyLM(std::string id, Vocabulary vocab, TinyLmShape shape, std::size_t max_context, Params params)
      : id_(std::move(id)), vocab_(std::move(vocab)), shape_(shape), max_context_(max_context), p_(std::move(params)) {}

  std::string id() const override { return id_; }
  const Vocabulary& vocab() const override { return vocab_; }
  std::size_t max_context() const override { return max_context_; }
  const TinyLmShape& shape() const { return shape_; }
  const Params& params() const { return p_; }
  Params& mutable_params() { return p_; }

  std::size_t parameter_count() const {
    return static_cast<std::size_t>(p_.emb.size() + p_.wc.size() + p_.wp.size() + p_.b.size() + p_.wo.size() +
                                    p_.bo.size());
  }

  Eigen::VectorXf prompt_vector(std::span<const TokenId> prompt) const {
    Eigen::VectorXf m = Eigen::VectorXf::Zero(shape_.dim);
    if (prompt.empty()) return m;
    for (auto t : prompt) m += p_.emb.col(t);
    return m / static_cast<float>(prompt.size());
  }

  // The context window for predicting position `at` of the response.
  std::vector<TokenId> window(std::span<const TokenId> prefix, std::size_t at) const {
    std::vector<TokenId> w(static_cast<std::size_t>(shape_.context), Vocabulary::kSep);
    for (int k = 0; k < shape_.context; ++k) {
      const auto back = static_cast<std::ptrdiff_t>(at) - shape_.context + k;
      if (back >= 0) w[static_cast<std::size_t>(k)] = prefix[static_cast<std::size_t>(back)];
    }
    return w;
  }

  Eigen::VectorXf context_vector(std::span<const TokenId> prefix, std::size_t at) const {
    Eigen::VectorXf x(shape_.context * shape_.dim);
    auto w = window(prefix, at);
    for (int k = 0; k < shape_.context; ++k) x.segment(k * shape_.dim, shape_.dim) = p_.emb.col(w[static_cast<std::size_t>(k)]);
    return x;
  }

  Eigen::VectorXf logits_from(const Eigen::VectorXf& ctx, const Eigen::VectorXf& prompt_vec) const {
    Eigen::VectorXf h = (p_.wc * ctx + p_.wp * prompt_vec + p_.b).array().tanh().matrix();
    return p_.wo * h + p_.bo;
  }

  Eigen::VectorXf next_token_logits(std::span<const TokenId> prompt, std::span<const TokenId> prefix) const override {
    check_context(prompt.size(), prefix.size());
    check_ids(prompt);
    check_ids(prefix);
    return logits_from(context_vector(prefix, prefix.size()), prompt_vector(prompt));
  }

  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    {
      std::ofstream v(dir / "vocab.txt");
      for (const auto& w : vocab_.words()) v << w << '\n';
    }
    std::ofstream out(dir / "model.bin", std::ios::binary);
    out.write("GCLM", 4);
    const std::int64_t header[5] = {shape_.dim, shape_.hidden, shape_.context, static_cast<std::int64_t>(max_context_),
                                    static_cast<std::int64_t>(vocab_.size())};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    for (const auto* m : {&p_.emb, &p_.wc, &p_.wp, &p_.wo})
      out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(float)));
    for (const auto* v : {&p_.b, &p_.bo})
      out.write(reinterpret_cast<const char*>(v->data()), static_cast<std::streamsize>(v->size() * sizeof(float)));
    std::ofstream(dir / "model.id") << id_ << '\n';
    if (!out) throw RuntimeFailure("cannot write model to " + dir.string());
  }

  static std::shared_ptr<TinyLM> load(const std::filesystem::path& dir) {
    std::ifstream vin(dir / "vocab.txt");
    if (!vin) throw LookupError("no language model in " + dir.string());
    std::vector<std::string> words;
    for (std::string w; std::getline(vin, w);) words.push_back(w);
    auto vocab = Vocabulary::from_words(std::move(words));
    std::ifstream in(dir / "model.bin", std::ios::binary);
    char magic[4];
    std::int64_t h[5];
    if (!in.read(magic, 4) || std::memcmp(magic, "GCLM", 4) != 0 || !in.read(reinterpret_cast<char*>(h), sizeof h))
      throw ParseError("not a language model file: " + (dir / "model.bin").string());
    if (h[4] != static_cast<std::int64_t>(vocab.size())) throw ParseError("vocabulary size mismatch in " + dir.string());
    TinyLmShape shape{static_cast<int>(h[0]), static_cast<int>(h[1]), static_cast<int>(h[2])};
    Params p;
    const auto v = static_cast<Eigen::Index>(vocab.size());
    p.emb.resize(shape.dim, v);
    p.wc.resize(shape.hidden, shape.context * shape.dim);
    p.wp.resize(shape.hidden, shape.dim);
    p.wo.resize(v, shape.hidden);
    p.b.resize(shape.hidden);
    p.bo.resize(v);
    for (auto* m : {&p.emb, &p.wc, &p.wp, &p.wo})
      in.read(reinterpret_cast<char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(float)));
    for (auto* vec : {&p.b, &p.bo})
      in.read(reinterpret_cast<char*>(vec->data()), static_cast<std::streamsize>(vec->size() * sizeof(float)));
    if (!in) throw ParseError("truncated language model file in " + dir.string());
    std::string id = "tiny-lm";
    if (std::ifstream idf(dir / "model.id"); idf) std::getline(idf, id);
    return std::make_shared<TinyLM>(id, std::move(vocab), shape, static_cast<std::size_t>(h[3]), std::move(p));
  }

 private:
  void check_ids(std::span<const TokenId> ids) const {
    for (auto t : ids)
      if (t < 0 || static_cast<std::size_t>(t) >= vocab_.size())
        throw PreconditionError("token id " + std::to_string(t) + " outside the vocabulary");
  }

  std::string id_;
  Vocabulary vocab_;
  TinyLmShape shape_;
  std::size_t max_context_;
  Params p_;
};

// One (prompt, response) pair in token ids.
struct LmExample {
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;
};

inline LmExample make_example(const Vocabulary& vocab, std::string_view prompt, std::string_view response) {
  return {vocab.encode(prompt), vocab.encode(response)};
}

// Single-string prompt for a chat request: message contents in order.
inline std::string flatten_messages(std::span<const ChatMessage> messages) {
  std::string out;
  for (const auto& m : messages) {
    if (!out.empty()) out += '\n';
    out += m.content;
  }
  return out;
}

// Greedy decoding until end-of-sequence or `max_tokens`.
inline std::vector<TokenId> greedy_decode(const LogitModel& lm, std::span<const TokenId> prompt, std::size_t max_tokens) {
  std::vector<TokenId> out;
  while (out.size() < max_tokens) {
    if (prompt.size() + 1 + out.size() >= lm.max_context()) break;
    Eigen::VectorXf l = lm.next_token_logits(prompt, out);
    Eigen::Index best = 0;
    l.maxCoeff(&best);  // first maximum on ties
    if (static_cast<TokenId>(best) == lm.eos()) break;
    out.push_back(static_cast<TokenId>(best));
  }
  return out;
}

struct LmTrainOptions {
  std::size_t epochs = 8;
  std::size_t batch_positions = 256;
  float learning_rate = 3e-3f;
  std::uint64_t seed = 1;
};

namespace detail {

struct Adam {
  float lr, b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
  long t = 0;
  std::vector<Eigen::MatrixXf> m, v;

  explicit Adam(float learning_rate) : lr(learning_rate) {}

  void step(std::span<Eigen::MatrixXf* const> params, std::span<const Eigen::MatrixXf> grads) {
    if (m.empty())
      for (auto* p : params) {
        m.push_back(Eigen::MatrixXf::Zero(p->rows(), p->cols()));
        v.push_back(Eigen::MatrixXf::Zero(p->rows(), p->cols()));
      }
    ++t;
    const float c1 = 1.0f - std::pow(b1, static_cast<float>(t)), c2 = 1.0f - std::pow(b2, static_cast<float>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = b1 * m[i] + (1.0f - b1) * grads[i];
      v[i] = b2 * v[i] + (1.0f - b2) * grads[i].cwiseProduct(grads[i]);
      params[i]->array() -= lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + eps);
    }
  }
};

// (example, position) pairs; position == response.size() predicts <eos>.
inline std::vector<std::pair<std::size_t, std::size_t>> positions(std::span<const LmExample> data) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t e = 0; e < data.size(); ++e)
    for (std::size_t j = 0; j <= data[e].response.size(); ++j) out.emplace_back(e, j);
  return out;
}

inline TokenId target_at(const LmExample& ex, std::size_t j) {
  return j < ex.response.size() ? ex.response[j] : Vocabulary::kEos;
}

inline void softmax_columns(Eigen::MatrixXf& logits) {
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    auto col = logits.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
}

}  // namespace detail

// Mean cross-entropy per predicted token.
inline double lm_loss(const TinyLM& lm, std::span<const LmExample> data) {
  double loss = 0;
  std::size_t n = 0;
  for (const auto& ex : data) {
    const auto pv = lm.prompt_vector(ex.prompt);
    for (std::size_t j = 0; j <= ex.response.size(); ++j) {
      Eigen::VectorXf l = lm.logits_from(lm.context_vector(ex.response, j), pv);
      const float mx = l.maxCoeff();
      const double lse = mx + std::log((l.array() - mx).exp().sum());
      loss += lse - l(detail::target_at(ex, j));
      ++n;
    }
  }
  return n ? loss / static_cast<double>(n) : 0.0;
}

// Full-parameter training with Adam on shuffled token positions.
inline void train_lm(TinyLM& lm, std::span<const LmExample> data, const LmTrainOptions& opt = {}) {
  if (data.empty()) throw PreconditionError("language model training needs examples");
  for (const auto& ex : data) lm.check_context(ex.prompt.size(), ex.response.size());
  auto& p = lm.mutable_params();
  const auto& s = lm.shape();
  auto pos = detail::positions(data);
  std::vector<Eigen::VectorXf> pvecs;
  for (const auto& ex : data) pvecs.push_back(lm.prompt_vector(ex.prompt));
  std::mt19937_64 rng(opt.seed);
  detail::Adam adam(opt.learning_rate);
  Eigen::MatrixXf* params[] = {&p.emb, &p.wc, &p.wp, nullptr, &p.wo, nullptr};
  Eigen::MatrixXf b = p.b, bo = p.bo;
  params[3] = &b;
  params[5] = &bo;

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(pos.begin(), pos.end(), rng);
    for (std::size_t start = 0; start < pos.size(); start += opt.batch_positions) {
      const auto n = static_cast<Eigen::Index>(std::min(opt.batch_positions, pos.size() - start));
      Eigen::MatrixXf x(s.context * s.dim, n), pv(s.dim, n);
      std::vector<std::vector<TokenId>> windows(static_cast<std::size_t>(n));
      for (Eigen::Index c = 0; c < n; ++c) {
        const auto [e, j] = pos[start + static_cast<std::size_t>(c)];
        windows[static_cast<std::size_t>(c)] = lm.window(data[e].response, j);
        for (int k = 0; k < s.context; ++k)
          x.block(k * s.dim, c, s.dim, 1) = p.emb.col(windows[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)]);
        pv.col(c) = data[e].prompt.empty() ? Eigen::VectorXf::Zero(s.dim) : lm.prompt_vector(data[e].prompt);
      }
      p.b = b.col(0);
      p.bo = bo.col(0);
      Eigen::MatrixXf h = ((p.wc * x + p.wp * pv).colwise() + p.b).array().tanh().matrix();
      Eigen::MatrixXf probs = (p.wo * h).colwise() + p.bo;
      detail::softmax_columns(probs);
      for (Eigen::Index c = 0; c < n; ++c) {
        const auto [e, j] = pos[start + static_cast<std::size_t>(c)];
        probs(detail::target_at(data[e], j), c) -= 1.0f;
      }
      probs /= static_cast<float>(n);
      std::vector<Eigen::MatrixXf> g(6);
      g[4] = probs * h.transpose();
      g[5] = probs.rowwise().sum();
      Eigen::MatrixXf dz = (p.wo.transpose() * probs).cwiseProduct((1.0f - h.array().square()).matrix());
      g[1] = dz * x.transpose();
      g[2] = dz * pv.transpose();
      g[3] = dz.rowwise().sum();
      Eigen::MatrixXf dx = p.wc.transpose() * dz, dp = p.wp.transpose() * dz;
      g[0] = Eigen::MatrixXf::Zero(p.emb.rows(), p.emb.cols());
      for (Eigen::Index c = 0; c < n; ++c) {
        for (int k = 0; k < s.context; ++k)
          g[0].col(windows[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)]) += dx.block(k * s.dim, c, s.dim, 1);
        const auto& prompt = data[pos[start + static_cast<std::size_t>(c)].first].prompt;
        if (prompt.empty()) continue;
        const Eigen::VectorXf share = dp.col(c) / static_cast<float>(prompt.size());
        for (auto t : prompt) g[0].col(t) += share;
      }
      adam.step(params, g);
    }
    p.b = b.col(0);
    p.bo = bo.col(0);
  }
}

}  // namespace grammarctl::llm

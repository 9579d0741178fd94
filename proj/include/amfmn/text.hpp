// SPDX-License-Identifier: Apache-2.0
//
// Sentence and keyword encoders: tokenizer, vocabulary, shared word
// embeddings, a bidirectional GRU with mean pooling, and the keyword MLP.
#pragma once

#include <cctype>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "amfmn/tensor.hpp"

namespace amfmn {

using TokenSeq = std::vector<std::string>;

/// Lowercases ASCII letters, deletes ASCII punctuation and splits on whitespace.
/// Bytes >= 0x80 pass through untouched.
inline TokenSeq tokenize(std::string_view raw) {
  TokenSeq tokens;
  std::string current;
  for (char ch : raw) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 0x80 && std::isspace(u)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else if (u < 0x80 && std::ispunct(u)) {
      continue;
    } else {
      current.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

inline std::string join_tokens(const TokenSeq& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

class Vocabulary {
 public:
  static constexpr std::size_t kUnknown = 0;
  static constexpr std::string_view kUnknownToken = "<unk>";

  Vocabulary() : words_{std::string(kUnknownToken)} {}

  std::size_t add(const std::string& word) {
    if (auto it = index_.find(word); it != index_.end()) return it->second;
    const std::size_t id = words_.size();
    words_.push_back(word);
    index_.emplace(word, id);
    return id;
  }

  void add_all(const TokenSeq& tokens) {
    for (const auto& t : tokens) add(t);
  }

  std::size_t index_of(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnknown : it->second;
  }

  const std::string& word(std::size_t index) const { return words_.at(index); }
  std::size_t size() const noexcept { return words_.size(); }
  const std::vector<std::string>& words() const noexcept { return words_; }

  /// One token per line; line n holds index n+1.
  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write vocabulary file " + path);
    for (std::size_t i = 1; i < words_.size(); ++i) os << words_[i] << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read vocabulary file " + path);
    Vocabulary v;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      if (line.empty()) throw FormatError(path + ":" + std::to_string(line_no) + ": empty token");
      if (v.index_.count(line)) throw FormatError(path + ":" + std::to_string(line_no) + ": duplicate token '" + line + "'");
      v.add(line);
    }
    return v;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Word embedding matrix shared by the sentence and keyword branches.
struct EmbeddingTable {
  Tensor weights;  // [vocab x dim]

  std::size_t dim() const { return weights.extent(1); }
  std::size_t rows() const { return weights.extent(0); }

  std::span<const double> row(std::size_t index) const {
    if (index >= rows()) throw DimensionError("embedding index " + std::to_string(index) + " out of range");
    return weights.values().subspan(index * dim(), dim());
  }

  static EmbeddingTable random(std::size_t vocab, std::size_t dim, Rng& rng) {
    return {rng.normal_tensor({vocab, dim}, 1.0)};
  }
};

/// One GRU direction. Gate blocks are stacked reset, update, candidate.
struct GruDirection {
  Tensor w_input;   // [3H x E]
  Tensor w_hidden;  // [3H x H]
  Tensor b_input;   // [3H]
  Tensor b_hidden;  // [3H]

  std::size_t hidden() const { return w_hidden.extent(1); }
  std::size_t input() const { return w_input.extent(1); }

  static GruDirection zeros(std::size_t input, std::size_t hidden) {
    return {Tensor({3 * hidden, input}), Tensor({3 * hidden, hidden}), Tensor({3 * hidden}),
            Tensor({3 * hidden})};
  }

  static GruDirection random(std::size_t input, std::size_t hidden, Rng& rng) {
    const double ki = 1.0 / std::sqrt(static_cast<double>(input));
    const double kh = 1.0 / std::sqrt(static_cast<double>(hidden));
    return {rng.uniform_tensor({3 * hidden, input}, -ki, ki),
            rng.uniform_tensor({3 * hidden, hidden}, -kh, kh),
            rng.uniform_tensor({3 * hidden}, -kh, kh), rng.uniform_tensor({3 * hidden}, -kh, kh)};
  }

  /// r = s(Wx+b + Uh+c), z likewise, n = tanh(Wx+b + r*(Uh+c)), h' = (1-z)n + z h.
  std::vector<double> step(std::span<const double> x, std::span<const double> h) const {
    const std::size_t hs = hidden();
    const auto gi = matvec(w_input, x);
    const auto gh = matvec(w_hidden, h);
    std::vector<double> next(hs);
    for (std::size_t j = 0; j < hs; ++j) {
      const double r = sigmoid(gi[j] + b_input[j] + gh[j] + b_hidden[j]);
      const double z = sigmoid(gi[hs + j] + b_input[hs + j] + gh[hs + j] + b_hidden[hs + j]);
      const double n = std::tanh(gi[2 * hs + j] + b_input[2 * hs + j] + r * (gh[2 * hs + j] + b_hidden[2 * hs + j]));
      next[j] = (1.0 - z) * n + z * h[j];
    }
    return next;
  }
};

struct GruParams {
  GruDirection forward;
  GruDirection backward;

  std::size_t hidden() const { return forward.hidden(); }
};

struct TextEncoding {
  std::vector<std::vector<double>> steps;  // s_t
  std::vector<double> pooled;              // mean of steps
};

/// Bidirectional GRU; s_t is the average of forward and backward states at t,
/// and the pooled vector is the mean over t.
inline TextEncoding bigru_encode(const TokenSeq& tokens, const Vocabulary& vocab,
                                 const EmbeddingTable& table, const GruParams& params) {
  if (tokens.empty()) throw ValidationError("bigru_encode: empty text");
  const std::size_t steps = tokens.size(), hs = params.hidden();
  std::vector<std::span<const double>> embedded;
  embedded.reserve(steps);
  for (const auto& tok : tokens) embedded.push_back(table.row(vocab.index_of(tok)));

  std::vector<std::vector<double>> fwd(steps), bwd(steps);
  std::vector<double> h(hs, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    h = params.forward.step(embedded[t], h);
    fwd[t] = h;
  }
  h.assign(hs, 0.0);
  for (std::size_t t = steps; t-- > 0;) {
    h = params.backward.step(embedded[t], h);
    bwd[t] = h;
  }

  TextEncoding enc;
  enc.steps.resize(steps);
  enc.pooled.assign(hs, 0.0);
  for (std::size_t t = 0; t < steps; ++t) {
    enc.steps[t].resize(hs);
    for (std::size_t j = 0; j < hs; ++j) {
      enc.steps[t][j] = 0.5 * (fwd[t][j] + bwd[t][j]);
      enc.pooled[j] += enc.steps[t][j];
    }
  }
  for (double& v : enc.pooled) v /= static_cast<double>(steps);
  return enc;
}

/// One hidden layer with tanh; linear output.
struct Mlp {
  Tensor w1, b1, w2, b2;

  static Mlp zeros(std::size_t in, std::size_t hidden, std::size_t out) {
    return {Tensor({hidden, in}), Tensor({hidden}), Tensor({out, hidden}), Tensor({out})};
  }

  static Mlp random(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    const double k1 = 1.0 / std::sqrt(static_cast<double>(in));
    const double k2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    return {rng.uniform_tensor({hidden, in}, -k1, k1), rng.uniform_tensor({hidden}, -k1, k1),
            rng.uniform_tensor({out, hidden}, -k2, k2), rng.uniform_tensor({out}, -k2, k2)};
  }

  std::vector<double> forward(std::span<const double> x) const {
    auto hidden = matvec(w1, x);
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = std::tanh(hidden[i] + b1[i]);
    auto out = matvec(w2, hidden);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b2[i];
    return out;
  }
};

/// Each phrase runs through the shared GRU; phrase vectors are averaged and
/// passed through the MLP. Returns nullopt when there are no keywords.
inline std::optional<TextEncoding> encode_keywords(const std::vector<TokenSeq>& keywords,
                                                   const Vocabulary& vocab,
                                                   const EmbeddingTable& table,
                                                   const GruParams& params, const Mlp& mlp) {
  std::vector<const TokenSeq*> phrases;
  for (const auto& k : keywords)
    if (!k.empty()) phrases.push_back(&k);
  if (phrases.empty()) return std::nullopt;

  TextEncoding enc;
  std::vector<double> mean(params.hidden(), 0.0);
  for (const TokenSeq* phrase : phrases) {
    auto state = bigru_encode(*phrase, vocab, table, params).pooled;
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += state[j];
    enc.steps.push_back(std::move(state));
  }
  for (double& v : mean) v /= static_cast<double>(phrases.size());
  enc.pooled = mlp.forward(mean);
  return enc;
}

}  // namespace amfmn

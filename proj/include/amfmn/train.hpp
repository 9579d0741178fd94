// SPDX-License-Identifier: Apache-2.0
//
// Mini-batch Adam on the projection heads with a step learning-rate decay.
#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "amfmn/loss.hpp"
#include "amfmn/retrieval.hpp"

namespace amfmn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::span<const Tensor* const> params, AdamConfig cfg = {}) : cfg_(cfg) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }

  void step(std::span<Tensor* const> params, std::span<Tensor* const> grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      Tensor& p = *params[k];
      const Tensor& g = *grads[k];
      Tensor& m = m_[k];
      Tensor& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = m[i] / c1, vhat = v[i] / c2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  std::size_t epochs = 150;
  std::size_t batch_size = 128;
  double learning_rate = 1e-4;
  double decay = 0.7;
  std::size_t decay_every = 20;
  AdamConfig adam;
  MarginParams margin = MarginParams::dynamic(0.6, 5.0);
  double bleu_weight = kDefaultBleuWeight;
  QueryMode mode = QueryMode::joint;
  std::size_t eval_every = 1;  // validation cadence in epochs; 0 disables
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs == 0 || batch_size < 2 || decay_every == 0) {
      throw ValidationError("epochs, decay interval must be positive and batch size at least 2");
    }
    if (!(learning_rate >= 0.0) || !(decay > 0.0)) throw ValidationError("learning rate and decay must be positive");
    margin.validate();
  }

  double rate_at(std::size_t epoch) const {
    return learning_rate * std::pow(decay, static_cast<double>(epoch / decay_every));
  }
};

struct EpochRecord {
  std::size_t epoch;
  double learning_rate;
  double train_loss;
  double val_mr;  // NaN when not evaluated this epoch
};

/// Encoded training split plus prior similarities priors[caption][image].
struct TrainingData {
  EncodedSplit train;
  Tensor priors;
  std::optional<EncodedSplit> validation;
};

/// priors[c][i] = S(caption c, the five captions of image i), over the images
/// and captions of one split.
inline Tensor compute_priors(const Dataset& ds, std::span<const std::size_t> indices, double bleu_weight) {
  std::vector<std::vector<TokenSeq>> refs;
  for (std::size_t i : indices) {
    refs.emplace_back();
    for (const auto& s : ds.entries.at(i).sentences) refs.back().push_back(tokenize(s));
  }
  Tensor priors({indices.size() * kSentencesPerImage, indices.size()});
  for (std::size_t img = 0; img < refs.size(); ++img) {
    for (std::size_t s = 0; s < kSentencesPerImage; ++s) {
      const std::size_t c = img * kSentencesPerImage + s;
      for (std::size_t other = 0; other < refs.size(); ++other)
        priors.at(c, other) = prior_similarity(refs[img][s], refs[other], bleu_weight);
    }
  }
  return priors;
}

inline TrainingData prepare_training(const Model& model, const Dataset& ds, std::span<const std::size_t> train_idx,
                                     std::span<const std::size_t> val_idx, const TrainConfig& cfg) {
  TrainingData d;
  d.train = encode_split(model, ds, train_idx, cfg.mode);
  d.priors = compute_priors(ds, train_idx, cfg.bleu_weight);
  if (!val_idx.empty()) d.validation = encode_split(model, ds, val_idx, cfg.mode);
  return d;
}

/// Assembles the B x B batch for the given caption indices.
inline PairBatch make_batch(const Model& model, const TrainingData& data, std::span<const std::size_t> captions) {
  const std::size_t b = captions.size();
  PairBatch batch;
  std::vector<TextFeatures> texts;
  for (std::size_t c : captions) {
    batch.visuals.push_back(data.train.visuals[data.train.caption_image[c]]);
    texts.push_back(data.train.texts[c]);
  }
  batch.guided = guide_pairs(model.vga, batch.visuals, texts);
  batch.priors = Tensor({b, b});
  for (std::size_t a = 0; a < b; ++a)
    for (std::size_t t = 0; t < b; ++t)
      batch.priors.at(a, t) = data.priors.at(captions[t], data.train.caption_image[captions[a]]);
  return batch;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains only the projection heads; encoders stay at their seeded values.
inline std::vector<EpochRecord> train(const TrainConfig& cfg, const TrainingData& data, Model& model,
                                      const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const std::size_t n = data.train.texts.size();
  if (n < 2) throw ValidationError("train: need at least two captions");

  auto params = model.heads.parameters();
  Adam adam(std::vector<const Tensor*>(params.begin(), params.end()), cfg.adam);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<EpochRecord> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.rate_at(epoch);
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 1 < n; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n - start);
      if (len < 2) break;
      const PairBatch batch = make_batch(model, data, std::span<const std::size_t>(order).subspan(start, len));
      HeadGradients g = grad_projection(batch, model.heads, cfg.margin);
      adam.step(params, g.parameters(), lr);
      loss_sum += g.loss;
      ++batches;
    }
    EpochRecord rec{epoch + 1, lr, batches ? loss_sum / static_cast<double>(batches) : 0.0,
                    std::numeric_limits<double>::quiet_NaN()};
    const bool eval_now = cfg.eval_every != 0 && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs);
    if (data.validation && eval_now) rec.val_mr = mean_recall(evaluate(model, *data.validation));
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

}  // namespace amfmn

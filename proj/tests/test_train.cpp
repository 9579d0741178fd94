// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "amfmn/train.hpp"
#include "test_util.hpp"

using namespace amfmn;

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::vector({1.0, -2.0, 3.0});
  Tensor g = Tensor::vector({0.5, -4.0, 0.0});
  const std::array<const Tensor*, 1> shapes{&p};
  Adam adam(shapes);
  std::array<Tensor*, 1> ps{&p}, gs{&g};
  adam.step(ps, gs, 0.1);
  // Bias correction makes the first update lr * sign(g).
  EXPECT_NEAR(p[0], 0.9, 1e-7);
  EXPECT_NEAR(p[1], -1.9, 1e-7);
  EXPECT_EQ(p[2], 3.0);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Adam, MinimizesQuadratic) {
  Tensor p = Tensor::vector({5.0, -3.0});
  const std::array<const Tensor*, 1> shapes{&p};
  Adam adam(shapes);
  for (int i = 0; i < 2000; ++i) {
    Tensor g = Tensor::vector({2.0 * (p[0] - 1.0), 2.0 * (p[1] + 2.0)});
    std::array<Tensor*, 1> ps{&p}, gs{&g};
    adam.step(ps, gs, 0.05);
  }
  EXPECT_NEAR(p[0], 1.0, 1e-3);
  EXPECT_NEAR(p[1], -2.0, 1e-3);
}

TEST(Schedule, StepDecay) {
  TrainConfig c;
  c.learning_rate = 1e-4;
  EXPECT_DOUBLE_EQ(c.rate_at(0), 1e-4);
  EXPECT_DOUBLE_EQ(c.rate_at(19), 1e-4);
  EXPECT_NEAR(c.rate_at(20), 0.7e-4, 1e-18);
  EXPECT_NEAR(c.rate_at(45), 0.49e-4, 1e-18);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.margin = MarginParams::dynamic(0.6, 0.0);
  EXPECT_THROW(c.validate(), ValidationError);
}

namespace {

struct Tiny {
  explicit Tiny(const std::string& name) : dir(name) {}
  testutil::TempDir dir;
  Dataset ds;
  Model model;
};

std::unique_ptr<Tiny> tiny_setup(const std::string& name, std::size_t n = 8) {
  auto t = std::make_unique<Tiny>(name);
  write_fixture(t->dir.path(), make_fixture(3, n, true, 64));
  t->ds = load_dataset(t->dir.path());
  t->model = Model::create(testutil::tiny_config(VgaVariant::soft), t->ds.build_vocabulary());
  return t;
}

}  // namespace

TEST(Priors, DiagonalBlocksAreOne) {
  auto t = tiny_setup("train_priors");
  std::vector<std::size_t> idx{0, 1, 2};
  const Tensor p = compute_priors(t->ds, idx, 0.5);
  ASSERT_EQ(p.shape(), (Shape{15, 3}));
  for (std::size_t c = 0; c < 15; ++c) {
    EXPECT_EQ(p.at(c, c / 5), 1.0);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_GE(p.at(c, i), 0.0);
      EXPECT_LE(p.at(c, i), 1.0);
    }
  }
}

TEST(Train, LossDecreasesAndOnlyHeadsChange) {
  auto t = tiny_setup("train_loss");
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-2;
  cfg.eval_every = 5;
  std::vector<std::size_t> all(t->ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const TrainingData data = prepare_training(t->model, t->ds, all, std::vector<std::size_t>{0, 1}, cfg);

  const Model before = t->model;
  std::size_t callbacks = 0;
  const auto hist = train(cfg, data, t->model, [&](const EpochRecord&) { ++callbacks; });
  ASSERT_EQ(hist.size(), 15u);
  EXPECT_EQ(callbacks, 15u);
  EXPECT_LT(hist.back().train_loss, hist.front().train_loss);
  EXPECT_TRUE(std::isnan(hist[0].val_mr));
  EXPECT_FALSE(std::isnan(hist[4].val_mr));
  EXPECT_FALSE(std::isnan(hist.back().val_mr));
  EXPECT_NE(t->model.heads.visual, before.heads.visual);
  EXPECT_EQ(t->model.mvsa.mask_projection, before.mvsa.mask_projection);
  EXPECT_EQ(t->model.vga.first.weight, before.vga.first.weight);
  EXPECT_EQ(t->model.embedding.weights, before.embedding.weights);
}

TEST(Train, Deterministic) {
  auto a = tiny_setup("train_det_a"), b = tiny_setup("train_det_b");
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e-2;
  std::vector<std::size_t> all(a->ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto da = prepare_training(a->model, a->ds, all, {}, cfg);
  const auto ha = train(cfg, da, a->model);
  const auto db = prepare_training(b->model, b->ds, all, {}, cfg);
  const auto hb = train(cfg, db, b->model);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(ha[e].train_loss, hb[e].train_loss);
  EXPECT_EQ(a->model.heads.gate.weight, b->model.heads.gate.weight);
}

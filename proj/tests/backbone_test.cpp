#include <gtest/gtest.h>

#include <algorithm>

#include "grcn/backbone.hpp"
#include "grcn/error.hpp"
#include "grcn/ops.hpp"
#include "support/finite_diff.hpp"

namespace grcn {
namespace {

using testing::random_tensor;

Tensor random_clip(std::size_t t, const BackboneConfig& cfg, Rng& rng) {
  Tensor clip({t, cfg.input_channels, cfg.height, cfg.width});
  for (auto& v : clip.data()) v = rng.uniform();
  return clip;
}

TEST(Backbone, DefaultResolutionLadder) {
  BackboneConfig cfg;
  const std::vector<Shape> expected{{16, 16, 16}, {32, 8, 8}, {64, 4, 4}};
  EXPECT_EQ(percept_shapes(cfg), expected);
  Rng rng(1);
  auto percepts = extract_percepts(cfg, init_backbone(cfg, rng), random_clip(2, cfg, rng));
  ASSERT_EQ(percepts.size(), 2u);
  for (const auto& step : percepts) {
    ASSERT_EQ(step.size(), 3u);
    for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(step[l].shape(), expected[l]);
  }
}

TEST(Backbone, EmitsTopStagesOnly) {
  BackboneConfig cfg;
  cfg.height = cfg.width = 32;
  cfg.channels = {4, 5, 6, 7, 8};
  cfg.pool = {2, 2, 2, 2, 2};
  cfg.levels = 2;
  const std::vector<Shape> expected{{7, 2, 2}, {8, 1, 1}};
  EXPECT_EQ(percept_shapes(cfg), expected);
}

TEST(Backbone, ZeroWeightsGiveZeroPercepts) {
  BackboneConfig cfg;
  Rng rng(2);
  for (const auto& step : extract_percepts(cfg, zero_backbone(cfg), random_clip(3, cfg, rng)))
    for (const auto& p : step) EXPECT_EQ(p, Tensor(p.shape()));
}

TEST(Backbone, IdenticalFramesGiveIdenticalPercepts) {
  BackboneConfig cfg;
  Rng rng(3);
  Tensor frame = random_clip(1, cfg, rng);
  const Tensor frames[] = {frame.slice0(0), frame.slice0(0)};
  auto percepts = extract_percepts(cfg, init_backbone(cfg, rng), stack0(frames));
  for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(percepts[0][l], percepts[1][l]);
}

TEST(Backbone, FramePermutationPermutesPercepts) {
  BackboneConfig cfg;
  Rng rng(4);
  BackboneParams p = init_backbone(cfg, rng);
  Tensor clip = random_clip(4, cfg, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<Tensor> frames;
  for (std::size_t i : perm) frames.push_back(clip.slice0(i));
  auto original = extract_percepts(cfg, p, clip);
  auto permuted = extract_percepts(cfg, p, stack0(frames));
  for (std::size_t t = 0; t < perm.size(); ++t)
    for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(permuted[t][l], original[perm[t]][l]);
}

TEST(Backbone, SingleStageHandOracle) {
  // centre-tap kernel: the stage reduces to max over each window of relu(x)
  BackboneConfig cfg;
  cfg.height = cfg.width = 4;
  cfg.channels = {1};
  cfg.pool = {2};
  cfg.levels = 1;
  BackboneParams p = zero_backbone(cfg);
  p.kernels[0].at({0, 0, 1, 1}) = 1.0;
  Tensor clip({1, 1, 4, 4}, std::vector<double>{-1, -2, 3, -4,  //
                                                -5, -6, 0.5, 1,  //
                                                2, -1, -1, -1,  //
                                                0.25, 4, -3, -2});
  Tensor out = extract_percepts(cfg, p, clip)[0][0];
  EXPECT_EQ(out, Tensor({1, 2, 2}, std::vector<double>{0, 3, 4, 0}));
}

TEST(Backbone, MatchesPerFrameComposition) {
  BackboneConfig cfg;
  cfg.height = cfg.width = 8;
  cfg.channels = {3, 4};
  cfg.pool = {2, 2};
  cfg.levels = 2;
  Rng rng(5);
  BackboneParams p = init_backbone(cfg, rng);
  Tensor clip = random_clip(3, cfg, rng);
  auto percepts = extract_percepts(cfg, p, clip);
  for (std::size_t t = 0; t < 3; ++t) {
    Tensor x = clip.slice0(t);
    for (std::size_t s = 0; s < 2; ++s) {
      x = pool2d(relu(conv2d(x, p.kernels[s], &p.biases[s], Conv2dOptions::same(3, 3))), PoolMode::max, {});
      EXPECT_EQ(percepts[t][s], x);
    }
  }
}

TEST(Backbone, GradientsMatchFiniteDifferences) {
  BackboneConfig cfg;
  cfg.input_channels = 2;
  cfg.height = cfg.width = 4;
  cfg.channels = {3, 2};
  cfg.pool = {2, 2};
  cfg.levels = 2;
  Rng rng(6);
  BackboneParams p = init_backbone(cfg, rng);
  for (auto& b : p.biases) b = random_tensor(b.shape(), rng, 0.5);
  const Tensor w0 = random_tensor({3, 2, 2}, rng), w1 = random_tensor({2, 1, 1}, rng);
  std::vector<Tensor> inputs{p.kernels[0], p.biases[0], p.kernels[1], p.biases[1], random_clip(2, cfg, rng)};
  auto loss = [&](Tape& tape, const std::vector<Var>& v) {
    Backbone<Var> b{{v[0], v[2]}, {v[1], v[3]}};
    auto percepts = extract_percepts(cfg, b, v[4]);
    std::vector<Var> terms;
    for (const auto& step : percepts) {
      terms.push_back(sum(hadamard(step[0], tape.constant(w0))));
      terms.push_back(sum(hadamard(step[1], tape.constant(w1))));
    }
    return sum(mean(terms));
  };
  EXPECT_LT(testing::max_gradient_error(loss, inputs), 1e-6);
}

TEST(Backbone, ConfigErrorsNameTheKey) {
  auto key_of = [](const BackboneConfig& c) {
    try {
      c.validate();
    } catch (const ConfigError& e) {
      return e.key();
    }
    return std::string();
  };
  BackboneConfig c;
  c.pool = {2, 2};
  EXPECT_EQ(key_of(c), "backbone.pool");
  c = {};
  c.height = 30;
  EXPECT_EQ(key_of(c), "backbone.pool");
  c = {};
  c.levels = 4;
  EXPECT_EQ(key_of(c), "backbone.levels");
  c = {};
  c.pool = {2, 1, 2};
  EXPECT_EQ(key_of(c), "backbone.pool");
}

TEST(Backbone, WrongFrameSizeIsAnError) {
  BackboneConfig cfg;
  Rng rng(7);
  EXPECT_THROW(extract_percepts(cfg, init_backbone(cfg, rng), Tensor({2, 1, 28, 28})), DimensionError);
  EXPECT_THROW(extract_percepts(cfg, init_backbone(cfg, rng), Tensor({1, 32, 32})), DimensionError);
}

}  // namespace
}  // namespace grcn

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "grcn/error.hpp"
#include "grcn/model.hpp"
#include "grcn/ops.hpp"
#include "support/finite_diff.hpp"

namespace grcn {
namespace {

using testing::random_tensor;

const Architecture kAll[] = {Architecture::gru_rcn, Architecture::stacked_gru_rcn, Architecture::bidir_gru_rcn,
                             Architecture::fc_gru_baseline};

ModelConfig small(Architecture a) {
  ModelConfig c;
  c.architecture = a;
  c.backbone.height = c.backbone.width = 8;
  c.backbone.channels = {2, 3};
  c.backbone.pool = {2, 2};
  c.backbone.levels = 2;
  c.hidden = {2, 3};
  c.classes = 3;
  c.dropout = 0.5;
  return c;
}

Tensor random_clip(std::size_t t, const ModelConfig& c, Rng& rng) {
  Tensor clip({t, c.backbone.input_channels, c.backbone.height, c.backbone.width});
  for (auto& v : clip.data()) v = rng.uniform();
  return clip;
}

// Run a forward pass with its own tape and return the probabilities.
Tensor run(const Model& m, const Tensor& clip, bool training, Rng* rng) {
  Tape tape;
  return forward(m, bind(tape, m), tape.constant(clip), training, rng).value();
}

TEST(Model, OutputIsAProbabilityVector) {
  Rng rng(1);
  for (auto a : kAll) {
    Model m = init_model(small(a), rng);
    for (bool training : {false, true}) {
      Tensor p = run(m, random_clip(3, m.config, rng), training, &rng);
      ASSERT_EQ(p.shape(), Shape{3}) << to_string(a);
      double total = 0.0;
      for (double v : p.data()) {
        EXPECT_GE(v, 0.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-10) << to_string(a);
    }
  }
}

TEST(Model, ZeroWeightsGiveUniformOutput) {
  Rng rng(2);
  for (auto a : kAll) {
    Model m = zero_model(small(a));
    Tensor p = predict(m, random_clip(2, m.config, rng));
    for (double v : p.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15) << to_string(a);
    // zero heads alone are enough
    Model r = init_model(small(a), rng);
    for (auto& h : r.params.heads) h.weight = Tensor(h.weight.shape());
    p = predict(r, random_clip(2, r.config, rng));
    for (double v : p.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15) << to_string(a);
  }
}

TEST(Model, SingleLevelIsTheHeadSoftmax) {
  ModelConfig c = small(Architecture::gru_rcn);
  c.backbone.levels = 1;
  c.hidden = {3};
  Rng rng(3);
  Model m = init_model(c, rng);
  Tensor clip = random_clip(3, c, rng);
  auto percepts = extract_percepts(c.backbone, m.params.backbone, clip);
  std::vector<Tensor> xs;
  for (const auto& step : percepts) xs.push_back(step[0]);
  Tensor h = run_layer(m.params.layers[0], xs, Tensor({3, 2, 2})).back();
  Tensor expected = softmax(affine(global_avg_pool(h), m.params.heads[0].weight, &m.params.heads[0].bias));
  EXPECT_LT(max_abs_diff(predict(m, clip), expected), 1e-15);
}

TEST(Model, HeadsAreAveragedAsProbabilities) {
  Tape tape;
  const Var parts[] = {tape.constant(Tensor::vector({0.8, 0.2})), tape.constant(Tensor::vector({0.4, 0.6}))};
  Tensor avg = mean(parts).value();
  EXPECT_NEAR(avg[0], 0.6, 1e-15);
  EXPECT_NEAR(avg[1], 0.4, 1e-15);

  ModelConfig c = small(Architecture::gru_rcn);
  Rng rng(4);
  Model m = init_model(c, rng);
  Tensor clip = random_clip(2, c, rng);
  auto percepts = extract_percepts(c.backbone, m.params.backbone, clip);
  Tensor expected({3});
  for (std::size_t l = 0; l < 2; ++l) {
    std::vector<Tensor> xs;
    for (const auto& step : percepts) xs.push_back(step[l]);
    const Shape& s = xs[0].shape();
    Tensor h = run_layer(m.params.layers[l], xs, Tensor({c.hidden[l], s[1], s[2]})).back();
    Tensor p = softmax(affine(global_avg_pool(h), m.params.heads[l].weight, &m.params.heads[l].bias));
    for (std::size_t k = 0; k < 3; ++k) expected[k] += p[k] / 2.0;
  }
  EXPECT_LT(max_abs_diff(predict(m, clip), expected), 1e-15);
}

TEST(Model, BaselineMatchesHandComposedOracle) {
  ModelConfig c = small(Architecture::fc_gru_baseline);
  Rng rng(5);
  Model m = init_model(c, rng);
  for (auto& b : {&m.params.fc->b, &m.params.fc->b_z, &m.params.fc->b_r}) *b = random_tensor(b->shape(), rng, 0.5);
  Tensor clip = random_clip(1, c, rng);
  Tensor top = extract_percepts(c.backbone, m.params.backbone, clip)[0][1];
  Tensor h = gru_step(*m.params.fc, global_avg_pool(top), Tensor({3}));
  Tensor expected = softmax(affine(h, m.params.heads[0].weight, &m.params.heads[0].bias));
  EXPECT_LT(max_abs_diff(predict(m, clip), expected), 1e-15);
}

TEST(Model, BaselineDefaultsToTopLevelWidth) {
  ModelConfig c = small(Architecture::fc_gru_baseline);
  Rng rng(6);
  Model m = init_model(c, rng);
  EXPECT_EQ(m.params.fc->W.shape(), (Shape{3, 3}));
  EXPECT_EQ(m.params.heads.size(), 1u);
  EXPECT_TRUE(m.params.layers.empty());
  c.fc_hidden = 5;
  EXPECT_EQ(init_model(c, rng).params.fc->U.shape(), (Shape{5, 5}));
}

TEST(Model, BaselineIsTheTopLevelPointwiseReduction) {
  // one stage on 2x2 frames: the only level is 1x1
  ModelConfig conv;
  conv.backbone.input_channels = 2;
  conv.backbone.height = conv.backbone.width = 2;
  conv.backbone.channels = {3};
  conv.backbone.pool = {2};
  conv.backbone.levels = 1;
  conv.hidden = {4};
  conv.kernel = 1;
  conv.classes = 3;
  ModelConfig fc = conv;
  fc.architecture = Architecture::fc_gru_baseline;

  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Model a = init_model(conv, rng);
    auto& l = a.params.layers[0];
    for (Tensor* b : {&l.b, &l.b_z, &l.b_r}) *b = random_tensor(b->shape(), rng, 0.5);
    Model b = init_model(fc, rng);
    b.params.backbone = a.params.backbone;
    b.params.heads = a.params.heads;
    b.params.fc = GRUParams{l.W.reshaped({4, 3}), l.W_z.reshaped({4, 3}), l.W_r.reshaped({4, 3}),
                            l.U.reshaped({4, 4}), l.U_z.reshaped({4, 4}), l.U_r.reshaped({4, 4}),
                            l.b,                  l.b_z,                  l.b_r};
    Tensor clip = random_clip(4, conv, rng);
    EXPECT_LT(max_abs_diff(predict(a, clip), predict(b, clip)), 1e-12);
  }
}

TEST(Model, BidirectionalHeadsSeeTwiceTheChannels) {
  Rng rng(8);
  Model m = init_model(small(Architecture::bidir_gru_rcn), rng);
  ASSERT_EQ(m.params.heads.size(), 2u);
  EXPECT_EQ(m.params.heads[0].weight.shape(), (Shape{3, 4}));
  EXPECT_EQ(m.params.heads[1].weight.shape(), (Shape{3, 6}));
  EXPECT_EQ(m.params.reverse_layers.size(), 2u);
}

TEST(Model, StackedLayersGetBottomUpKernels) {
  Rng rng(9);
  Model m = init_model(small(Architecture::stacked_gru_rcn), rng);
  ASSERT_EQ(m.params.extras.size(), 2u);
  EXPECT_FALSE(m.params.extras[0]);
  ASSERT_TRUE(m.params.extras[1]);
  EXPECT_EQ(m.params.extras[1]->W_zl.shape(), (Shape{3, 2, 3, 3}));
  EXPECT_FALSE(m.params.extras[1]->W_hl);
}

TEST(Model, InventoryOrder) {
  Rng rng(10);
  Model m = init_model(small(Architecture::stacked_gru_rcn), rng);
  auto inv = parameter_inventory(m.params);
  std::vector<std::string> names;
  for (const auto& [n, s] : inv) names.push_back(n);
  const std::vector<std::string> head{"level0.fwd.W", "level0.fwd.W_z", "level0.fwd.W_r", "level0.fwd.U",
                                      "level0.fwd.U_z", "level0.fwd.U_r", "level0.fwd.b", "level0.fwd.b_z",
                                      "level0.fwd.b_r"};
  EXPECT_TRUE(std::equal(head.begin(), head.end(), names.begin()));
  auto pos = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) - names.begin(); };
  EXPECT_LT(pos("level1.fwd.b_r"), pos("level1.stack.W_zl"));
  EXPECT_LT(pos("level1.stack.W_rl"), pos("head0.weight"));
  EXPECT_LT(pos("head1.bias"), pos("backbone.stage0.kernel"));
  EXPECT_EQ(names.back(), "backbone.stage1.bias");

  std::size_t recurrent = 0;
  for (const auto& [n, s] : inv)
    if (n.starts_with("level") && n.find(".fwd.") != std::string::npos) recurrent += s;
  EXPECT_EQ(recurrent, param_count({3, 3, 2, 2}, true) + param_count({3, 3, 3, 3}, true));
}

TEST(Model, InferenceIsDeterministicAndDropoutReproducible) {
  Rng rng(11);
  for (auto a : kAll) {
    Model m = init_model(small(a), rng);
    Tensor clip = random_clip(3, m.config, rng);
    EXPECT_EQ(predict(m, clip), predict(m, clip));
    EXPECT_EQ(run(m, clip, false, nullptr), predict(m, clip));
    Rng r1(42), r2(42), r3(43);
    Tensor t1 = run(m, clip, true, &r1), t2 = run(m, clip, true, &r2), t3 = run(m, clip, true, &r3);
    EXPECT_EQ(t1, t2);
    EXPECT_NE(t1, t3);
  }
}

TEST(Model, FrozenBackboneHasNoGradient) {
  ModelConfig c = small(Architecture::gru_rcn);
  Rng rng(12);
  for (bool frozen : {false, true}) {
    c.backbone.frozen = frozen;
    Model m = init_model(c, rng);
    Tape tape;
    auto bound = bind(tape, m);
    auto g = tape.backward(neg_log_prob(forward(m, bound, tape.constant(random_clip(2, c, rng)), false, nullptr), 1));
    EXPECT_EQ(g.has(bound.backbone.kernels[0]), !frozen);
    EXPECT_TRUE(g.has(bound.layers[0].W));
  }
}

TEST(Dropout, MaskExpectationIsIdentity) {
  Rng rng(13);
  const double p = 0.7;
  const Tensor feature = random_tensor({6}, rng, 1.0);
  Tensor avg({6});
  const int masks = 20000;
  std::size_t zeros = 0;
  for (int i = 0; i < masks; ++i) {
    Tensor mask = dropout_mask(6, p, rng);
    for (std::size_t k = 0; k < 6; ++k) {
      avg[k] += mask[k] * feature[k] / masks;
      zeros += mask[k] == 0.0;
      if (mask[k] != 0.0) EXPECT_DOUBLE_EQ(mask[k], 1.0 / (1.0 - p));
    }
  }
  for (std::size_t k = 0; k < 6; ++k) EXPECT_LT(std::abs(avg[k] - feature[k]) / std::abs(feature[k]), 0.05);
  EXPECT_NEAR(static_cast<double>(zeros) / (6.0 * masks), p, 0.01);
}

TEST(Fusion, Examples) {
  Tensor a = Tensor::vector({0.2, 0.5, 0.3});
  for (auto [wa, wb] : {std::pair{1.0, 2.0}, {3.0, 0.5}, {0.0, 1.0}}) EXPECT_LT(max_abs_diff(fuse_streams(a, a, wa, wb), a), 1e-15);
  Tensor f = fuse_streams(Tensor::vector({1, 0}), Tensor::vector({0, 1}), 1, 2);
  EXPECT_NEAR(f[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(f[1], 2.0 / 3.0, 1e-15);
  EXPECT_EQ(fuse_streams(Tensor::vector({1, 0}), Tensor::vector({0, 1})), f);
}

TEST(Fusion, ArgmaxInvariantToWeightScale) {
  Rng rng(14);
  auto argmax = [](const Tensor& t) { return std::max_element(t.data().begin(), t.data().end()) - t.data().begin(); };
  for (int trial = 0; trial < 200; ++trial) {
    Tensor a = random_tensor({5}, rng, 1.0), b = random_tensor({5}, rng, 1.0);
    const double wa = rng.uniform(0.1, 3), wb = rng.uniform(0.1, 3), s = rng.uniform(0.01, 100);
    EXPECT_EQ(argmax(fuse_streams(a, b, wa, wb)), argmax(fuse_streams(a, b, s * wa, s * wb)));
  }
}

TEST(Fusion, Errors) {
  EXPECT_THROW(fuse_streams(Tensor({2}), Tensor({3})), DimensionError);
  EXPECT_THROW(fuse_streams(Tensor({2}), Tensor({2}), 0, 0), std::invalid_argument);
  EXPECT_THROW(fuse_streams(Tensor({2}), Tensor({2}), -1, 2), std::invalid_argument);
}

TEST(ModelConfig, ErrorsNameTheKey) {
  auto key_of = [](const ModelConfig& c) {
    try {
      c.validate();
    } catch (const ConfigError& e) {
      return e.key();
    }
    return std::string();
  };
  ModelConfig c;
  EXPECT_EQ(key_of(c), "");
  c.hidden = {8, 8};
  EXPECT_EQ(key_of(c), "model.hidden");
  c = {};
  c.dropout = 1.0;
  EXPECT_EQ(key_of(c), "model.dropout");
  c = {};
  c.kernel = 2;
  EXPECT_EQ(key_of(c), "model.kernel");
  EXPECT_THROW(parse_architecture("lstm"), ConfigError);
  EXPECT_EQ(parse_architecture("bidir_gru_rcn"), Architecture::bidir_gru_rcn);
  EXPECT_EQ(parse_stream("framediff"), Stream::framediff);
}

}  // namespace
}  // namespace grcn

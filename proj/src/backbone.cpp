#include "grcn/backbone.hpp"

#include <cmath>
#include <string>

#include "grcn/error.hpp"
#include "grcn/ops.hpp"

namespace grcn {

void BackboneConfig::validate() const {
  if (input_channels == 0) throw ConfigError("backbone.input_channels", "must be >= 1");
  if (channels.empty()) throw ConfigError("backbone.channels", "at least one stage is required");
  if (pool.size() != channels.size())
    throw ConfigError("backbone.pool", "needs one factor per stage (" + std::to_string(channels.size()) + ")");
  for (std::size_t c : channels)
    if (c == 0) throw ConfigError("backbone.channels", "widths must be >= 1");
  if (levels == 0 || levels > channels.size())
    throw ConfigError("backbone.levels", "must be in [1, " + std::to_string(channels.size()) + "]");
  std::size_t h = height, w = width;
  for (std::size_t s = 0; s < pool.size(); ++s) {
    if (pool[s] < 2) throw ConfigError("backbone.pool", "factors must be >= 2 so resolution decreases");
    if (h % pool[s] != 0 || w % pool[s] != 0 || h < pool[s] || w < pool[s])
      throw ConfigError("backbone.pool", "stage " + std::to_string(s) + " cannot pool " + std::to_string(h) + "x" +
                                             std::to_string(w) + " by " + std::to_string(pool[s]));
    h /= pool[s];
    w /= pool[s];
  }
}

namespace {

Shape kernel_shape(const BackboneConfig& cfg, std::size_t s) {
  return {cfg.channels[s], s == 0 ? cfg.input_channels : cfg.channels[s - 1], 3, 3};
}

}  // namespace

BackboneParams init_backbone(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  BackboneParams p;
  for (std::size_t s = 0; s < cfg.stages(); ++s) {
    const Shape k = kernel_shape(cfg, s);
    const double bound = std::sqrt(6.0 / static_cast<double>(k[1] * 9));
    Tensor t(k);
    for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    p.kernels.push_back(std::move(t));
    p.biases.push_back(Tensor({cfg.channels[s]}));
  }
  return p;
}

BackboneParams zero_backbone(const BackboneConfig& cfg) {
  cfg.validate();
  BackboneParams p;
  for (std::size_t s = 0; s < cfg.stages(); ++s) {
    p.kernels.push_back(Tensor(kernel_shape(cfg, s)));
    p.biases.push_back(Tensor({cfg.channels[s]}));
  }
  return p;
}

Backbone<Var> bind(Tape& tape, const BackboneParams& params, bool trainable) {
  Backbone<Var> out;
  for (std::size_t s = 0; s < params.kernels.size(); ++s) {
    out.kernels.push_back(trainable ? tape.variable(params.kernels[s]) : tape.constant(params.kernels[s]));
    out.biases.push_back(trainable ? tape.variable(params.biases[s]) : tape.constant(params.biases[s]));
  }
  return out;
}

std::vector<Shape> percept_shapes(const BackboneConfig& cfg) {
  cfg.validate();
  std::vector<Shape> out;
  std::size_t h = cfg.height, w = cfg.width;
  for (std::size_t s = 0; s < cfg.stages(); ++s) {
    h /= cfg.pool[s];
    w /= cfg.pool[s];
    if (s + cfg.levels >= cfg.stages()) out.push_back({cfg.channels[s], h, w});
  }
  return out;
}

PerceptStack extract_percepts(const BackboneConfig& cfg, const Backbone<Var>& params, Var clip) {
  const Shape& s = clip.shape();
  if (s.size() != 4 || s[1] != cfg.input_channels || s[2] != cfg.height || s[3] != cfg.width)
    throw DimensionError("backbone expects T x " + std::to_string(cfg.input_channels) + " x " +
                         std::to_string(cfg.height) + " x " + std::to_string(cfg.width) + " clips, got " +
                         shape_string(s));
  if (params.kernels.size() != cfg.stages()) throw DimensionError("backbone parameters do not match the config");
  const std::size_t frames = s[0];
  PerceptStack out(frames);
  Var x = clip;
  for (std::size_t st = 0; st < cfg.stages(); ++st) {
    const std::size_t f = cfg.pool[st];
    x = pool2d(relu(conv2d(x, params.kernels[st], params.biases[st], Conv2dOptions::same(3, 3))), PoolMode::max,
               {f, f, f, f});
    if (st + cfg.levels >= cfg.stages())
      for (std::size_t t = 0; t < frames; ++t) out[t].push_back(index0(x, t));
  }
  return out;
}

std::vector<std::vector<Tensor>> extract_percepts(const BackboneConfig& cfg, const BackboneParams& params,
                                                  const Tensor& clip) {
  Tape tape;
  auto stack = extract_percepts(cfg, bind(tape, params, false), tape.constant(clip));
  std::vector<std::vector<Tensor>> out;
  for (const auto& step : stack) {
    out.emplace_back();
    for (const auto& v : step) out.back().push_back(v.value());
  }
  return out;
}

}  // namespace grcn

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "grcn/backbone.hpp"
#include "grcn/cells.hpp"
#include "grcn/rng.hpp"
#include "grcn/tape.hpp"
#include "grcn/tensor.hpp"

namespace grcn {

enum class Architecture { gru_rcn, stacked_gru_rcn, bidir_gru_rcn, fc_gru_baseline };
enum class Stream { rgb, framediff };

std::string to_string(Architecture a);
std::string to_string(Stream s);
// Throw ConfigError(key) for unknown names.
Architecture parse_architecture(const std::string& name, const std::string& key = "model.architecture");
Stream parse_stream(const std::string& name, const std::string& key = "model.stream");

struct ModelConfig {
  Architecture architecture = Architecture::gru_rcn;
  BackboneConfig backbone;
  std::vector<std::size_t> hidden{16, 32, 64};  // one per percept level
  std::size_t kernel = 3;                       // k1 = k2
  double dropout = 0.7;
  std::size_t classes = 8;
  Stream stream = Stream::rgb;
  bool stacked_candidate_input = false;  // W_hl in stacked layers
  std::size_t fc_hidden = 0;             // baseline GRU width; 0 = top level's width

  // Throws ConfigError naming the offending key.
  void validate() const;
  std::size_t baseline_hidden() const { return fc_hidden ? fc_hidden : hidden.back(); }
};

template <class T>
struct Head {
  T weight, bias;  // classes x features, classes
};

// All parameters of a model. `visit` walks them in checkpoint order:
// recurrent layers, stacked extras, heads, backbone.
template <class T>
struct ModelState {
  std::vector<ConvGru<T>> layers;           // forward recurrences, one per level
  std::vector<ConvGru<T>> reverse_layers;   // bidirectional only
  std::optional<FcGru<T>> fc;               // baseline only
  std::vector<std::optional<StackedExtra<T>>> extras;  // stacked only; [0] empty
  std::vector<Head<T>> heads;
  Backbone<T> backbone;

  template <class Self, class F>
  static void visit(Self& s, F&& f) {
    auto prefixed = [&](const std::string& prefix) {
      return [&f, prefix](const auto& name, auto& slot) { f(prefix + name, slot); };
    };
    for (std::size_t l = 0; l < s.layers.size(); ++l)
      ConvGru<T>::visit(s.layers[l], prefixed("level" + std::to_string(l) + ".fwd."));
    for (std::size_t l = 0; l < s.reverse_layers.size(); ++l)
      ConvGru<T>::visit(s.reverse_layers[l], prefixed("level" + std::to_string(l) + ".bwd."));
    if (s.fc) FcGru<T>::visit(*s.fc, prefixed("fc."));
    for (std::size_t l = 0; l < s.extras.size(); ++l)
      if (s.extras[l]) StackedExtra<T>::visit(*s.extras[l], prefixed("level" + std::to_string(l) + ".stack."));
    for (std::size_t l = 0; l < s.heads.size(); ++l) {
      f("head" + std::to_string(l) + ".weight", s.heads[l].weight);
      f("head" + std::to_string(l) + ".bias", s.heads[l].bias);
    }
    Backbone<T>::visit(s.backbone, prefixed("backbone."));
  }
};

using ModelParams = ModelState<Tensor>;

struct Model {
  ModelConfig config;
  ModelParams params;
};

// Random initialisation: recurrent layers as init_conv_gru, heads Glorot
// with zero bias, backbone He-uniform.
Model init_model(const ModelConfig& cfg, Rng& rng);
// Every parameter zero.
Model zero_model(const ModelConfig& cfg);

// Parameter names and element counts in checkpoint order.
std::vector<std::pair<std::string, std::size_t>> parameter_inventory(const ModelParams& params);
std::size_t total_parameters(const ModelParams& params);

// Model parameters on a tape. The backbone is bound as constants when the
// config freezes it.
ModelState<Var> bind(Tape& tape, const Model& model, bool trainable = true);

// Inverted dropout mask: each entry 0 with probability p, else 1 / (1 - p).
Tensor dropout_mask(std::size_t size, double p, Rng& rng);

// Class probabilities for a T x C x H x W clip. With `training` set, each
// head's pooled feature goes through a fresh dropout mask drawn from `rng`.
// fc_gru_baseline models are routed to forward_fc_baseline.
Var forward(const Model& model, const ModelState<Var>& bound, Var clip, bool training, Rng* rng);

// Top percept level, averaged over space per frame, through a fully
// connected GRU and a single head.
Var forward_fc_baseline(const Model& model, const ModelState<Var>& bound, Var clip, bool training, Rng* rng);

// Inference-mode probabilities (no dropout).
Tensor predict(const Model& model, const Tensor& clip);

// (weight_a a + weight_b b) / (weight_a + weight_b).
Tensor fuse_streams(const Tensor& scores_a, const Tensor& scores_b, double weight_a = 1.0, double weight_b = 2.0);

}  // namespace grcn

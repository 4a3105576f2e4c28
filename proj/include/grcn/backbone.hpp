#pragma once

#include <cstddef>
#include <vector>

#include "grcn/rng.hpp"
#include "grcn/tape.hpp"
#include "grcn/tensor.hpp"

namespace grcn {

// Small VGG-like percept extractor: stages of conv3x3 + ReLU + max-pool.
// The last `levels` stages are emitted as percepts, lowest resolution last.
struct BackboneConfig {
  std::size_t input_channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<std::size_t> channels{16, 32, 64};  // per stage
  std::vector<std::size_t> pool{2, 2, 2};         // per stage, >= 2
  std::size_t levels = 3;                         // emitted stages, counted from the top
  bool frozen = false;                            // no gradient updates

  // Throws ConfigError on inconsistent settings.
  void validate() const;
  std::size_t stages() const { return channels.size(); }
};

template <class T>
struct Backbone {
  std::vector<T> kernels;  // stage s: channels[s] x in x 3 x 3
  std::vector<T> biases;

  template <class Self, class F>
  static void visit(Self& s, F&& f) {
    for (std::size_t i = 0; i < s.kernels.size(); ++i) {
      f("stage" + std::to_string(i) + ".kernel", s.kernels[i]);
      f("stage" + std::to_string(i) + ".bias", s.biases[i]);
    }
  }
};

using BackboneParams = Backbone<Tensor>;

// He-uniform kernels, zero biases.
BackboneParams init_backbone(const BackboneConfig& cfg, Rng& rng);
BackboneParams zero_backbone(const BackboneConfig& cfg);
Backbone<Var> bind(Tape& tape, const BackboneParams& params, bool trainable);

// O_x x N1 x N2 of every emitted level.
std::vector<Shape> percept_shapes(const BackboneConfig& cfg);

// percepts[t][l] for a T x C x H x W clip. Frames are processed as one
// batch but independently of each other.
using PerceptStack = std::vector<std::vector<Var>>;
PerceptStack extract_percepts(const BackboneConfig& cfg, const Backbone<Var>& params, Var clip);

// Eager form.
std::vector<std::vector<Tensor>> extract_percepts(const BackboneConfig& cfg, const BackboneParams& params,
                                                  const Tensor& clip);

}  // namespace grcn

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "grcn/rng.hpp"
#include "grcn/tape.hpp"
#include "grcn/tensor.hpp"

namespace grcn {

// Gated recurrent cells. Every parameter struct is a template over the slot
// type: `Tensor` for stored parameters, `Var` once bound to a tape. Field
// order is the checkpoint order.
//
//   z  = sigmoid(W_z x + U_z h + b_z)
//   r  = sigmoid(W_r x + U_r h + b_r)
//   h~ = tanh(W x + U (r . h) + b)
//   h' = (1 - z) . h + z . h~
//
// The convolutional cell replaces each product with a stride-1 zero-padded
// convolution, so h keeps the spatial size of x.

// Fully-connected GRU: W* are O_h x O_x, U* are O_h x O_h, b* are O_h.
template <class T>
struct FcGru {
  T W, W_z, W_r, U, U_z, U_r, b, b_z, b_r;

  template <class Self, class F>
  static void visit(Self& s, F&& f) {
    f("W", s.W), f("W_z", s.W_z), f("W_r", s.W_r), f("U", s.U), f("U_z", s.U_z), f("U_r", s.U_r);
    f("b", s.b), f("b_z", s.b_z), f("b_r", s.b_r);
  }
};

// Convolutional GRU layer: W* are O_h x O_x x k1 x k2 kernels, U* are
// O_h x O_h x k1 x k2, b* are O_h. Kernel sides must be odd.
template <class T>
struct ConvGru {
  T W, W_z, W_r, U, U_z, U_r, b, b_z, b_r;

  template <class Self, class F>
  static void visit(Self& s, F&& f) {
    f("W", s.W), f("W_z", s.W_z), f("W_r", s.W_r), f("U", s.U), f("U_z", s.U_z), f("U_r", s.U_r);
    f("b", s.b), f("b_z", s.b_z), f("b_r", s.b_r);
  }
};

// Bottom-up kernels of a stacked layer, applied to the (pooled) hidden state
// of the layer below: O_h x O_below x k1 x k2. The lower state feeds the
// update and reset gates. `W_hl`, when present, also feeds it to the
// candidate (off by default).
template <class T>
struct StackedExtra {
  T W_zl, W_rl;
  std::optional<T> W_hl;

  template <class Self, class F>
  static void visit(Self& s, F&& f) {
    f("W_zl", s.W_zl), f("W_rl", s.W_rl);
    if (s.W_hl) f("W_hl", *s.W_hl);
  }
};

using GRUParams = FcGru<Tensor>;
using ConvGRULayerParams = ConvGru<Tensor>;
using StackedExtraParams = StackedExtra<Tensor>;

// Bind stored parameters to a tape as differentiable (or constant) leaves.
template <template <class> class P>
P<Var> bind(Tape& tape, const P<Tensor>& params, bool trainable = true) {
  std::vector<const Tensor*> src;
  P<Tensor>::visit(params, [&](const char*, const Tensor& t) { src.push_back(&t); });
  P<Var> out;
  if constexpr (requires { out.W_hl; }) {
    if (params.W_hl) out.W_hl.emplace();
  }
  std::size_t i = 0;
  P<Var>::visit(out, [&](const char*, Var& v) {
    v = trainable ? tape.variable(*src[i]) : tape.constant(*src[i]);
    ++i;
  });
  return out;
}

// Total element count of every tensor in a parameter struct.
template <template <class> class P>
std::size_t allocated_elements(const P<Tensor>& params) {
  std::size_t n = 0;
  P<Tensor>::visit(params, [&](const char*, const Tensor& t) { n += t.size(); });
  return n;
}

// ---------------------------------------------------------------- shapes

struct ConvGruDims {
  std::size_t k1 = 3, k2 = 3;
  std::size_t input_channels = 1;   // O_x
  std::size_t hidden_channels = 1;  // O_h
};

// 3 k1 k2 (O_x O_h + O_h O_h), plus 3 O_h when biases are included.
std::size_t param_count(const ConvGruDims& dims, bool include_bias);

// Element count of a stacked layer's bottom-up kernels.
std::size_t stacked_extra_param_count(std::size_t k1, std::size_t k2, std::size_t below_channels,
                                      std::size_t hidden_channels, bool candidate_input);

// Validates kernel shapes (odd sides, consistent channels); throws DimensionError.
ConvGruDims conv_gru_dims(const ConvGRULayerParams& params);

// ---------------------------------------------------------------- init

// Input-to-hidden weights uniform with variance 2 / (fan_in + fan_out);
// hidden-to-hidden orthogonal for 1x1 kernels, otherwise the same uniform
// scheme; biases zero.
ConvGRULayerParams init_conv_gru(const ConvGruDims& dims, Rng& rng);
GRUParams init_fc_gru(std::size_t input_size, std::size_t hidden_size, Rng& rng);
StackedExtraParams init_stacked_extra(std::size_t k1, std::size_t k2, std::size_t below_channels,
                                      std::size_t hidden_channels, bool candidate_input, Rng& rng);
ConvGRULayerParams zero_conv_gru(const ConvGruDims& dims);
GRUParams zero_fc_gru(std::size_t input_size, std::size_t hidden_size);

// Glorot-uniform tensor of the given shape.
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
// Random n x n orthogonal matrix.
Tensor random_orthogonal(std::size_t n, Rng& rng);

// ---------------------------------------------------------------- recorded steps

Var gru_step(const FcGru<Var>& p, Var x, Var h_prev);
Var convgru_step(const ConvGru<Var>& p, Var x, Var h_prev);
// `h_below` must already be at the spatial size of `x`.
Var stacked_convgru_step(const ConvGru<Var>& p, const StackedExtra<Var>& extra, Var x, Var h_below, Var h_prev);

struct LayerRun {
  std::vector<Var> hiddens;  // one per time step
  Var final;                 // == hiddens.back()
};

LayerRun run_layer(const ConvGru<Var>& p, std::span<const Var> inputs, Var h0);
// run_layer from a zero initial state.
LayerRun run_layer(const ConvGru<Var>& p, std::span<const Var> inputs);

// One level of a stack: the bottom level has no `extra`.
template <class T>
struct StackLayer {
  ConvGru<T> cell;
  std::optional<StackedExtra<T>> extra;
};

// Integer max-pooling factor taking `below` (C x H x W) to `target_h x target_w`.
// Throws DimensionError when the ratio is not integral.
std::pair<std::size_t, std::size_t> bridge_factor(const Shape& below, std::size_t target_h, std::size_t target_w);

// Runs all levels over `percepts[t][l]`. At each step the levels advance
// bottom-up; level l > 0 receives level l-1's new state max-pooled to its
// own resolution. Returns every level's final state.
std::vector<Var> run_stack(std::span<const StackLayer<Var>> layers, const std::vector<std::vector<Var>>& percepts);

// Concatenation [final_fwd ; final_bwd] along channels, where the backward
// encoder reads the sequence in reverse.
Var bidirectional_encode(const ConvGru<Var>& fwd, const ConvGru<Var>& bwd, std::span<const Var> inputs);

// ---------------------------------------------------------------- eager forms

Tensor gru_step(const GRUParams& p, const Tensor& x, const Tensor& h_prev);
Tensor convgru_step(const ConvGRULayerParams& p, const Tensor& x, const Tensor& h_prev);
Tensor stacked_convgru_step(const ConvGRULayerParams& p, const StackedExtraParams& extra, const Tensor& x,
                            const Tensor& h_below, const Tensor& h_prev);
std::vector<Tensor> run_layer(const ConvGRULayerParams& p, std::span<const Tensor> inputs, const Tensor& h0);
std::vector<Tensor> run_stack(std::span<const StackLayer<Tensor>> layers,
                              const std::vector<std::vector<Tensor>>& percepts);
Tensor bidirectional_encode(const ConvGRULayerParams& fwd, const ConvGRULayerParams& bwd,
                            std::span<const Tensor> inputs);

}  // namespace grcn

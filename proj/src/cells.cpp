#include "grcn/cells.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "grcn/error.hpp"
#include "grcn/ops.hpp"

namespace grcn {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

void check_kernel(const Shape& k, std::size_t out, std::size_t in, std::size_t k1, std::size_t k2, const char* name) {
  require(k.size() == 4 && k[0] == out && k[1] == in && k[2] == k1 && k[3] == k2,
          std::string("conv GRU kernel ") + name + " has shape " + shape_string(k) + ", expected " +
              shape_string({out, in, k1, k2}));
}

Conv2dOptions same_padding(const Shape& kernel) { return Conv2dOptions::same(kernel[2], kernel[3]); }

Var conv(Var x, Var k, std::optional<Var> b = std::nullopt) { return conv2d(x, k, b, same_padding(k.shape())); }

void check_step_inputs(const ConvGruDims& d, const Shape& x, const Shape& h) {
  require(x.size() == 3 && x[0] == d.input_channels,
          "conv GRU input must be " + std::to_string(d.input_channels) + " x N1 x N2, got " + shape_string(x));
  require(h.size() == 3 && h[0] == d.hidden_channels && h[1] == x[1] && h[2] == x[2],
          "conv GRU state " + shape_string(h) + " does not match input " + shape_string(x) + " with " +
              std::to_string(d.hidden_channels) + " hidden channels");
}

ConvGruDims dims_of(const ConvGru<Var>& p) {
  const Shape& w = p.W.shape();
  require(w.size() == 4, "conv GRU kernel W must be rank 4, got " + shape_string(w));
  ConvGruDims d{w[2], w[3], w[1], w[0]};
  require(d.k1 % 2 == 1 && d.k2 % 2 == 1,
          "conv GRU kernels must have odd sides for same padding, got " + std::to_string(d.k1) + "x" +
              std::to_string(d.k2));
  for (const Var* k : {&p.W, &p.W_z, &p.W_r})
    check_kernel(k->shape(), d.hidden_channels, d.input_channels, d.k1, d.k2, "W");
  for (const Var* k : {&p.U, &p.U_z, &p.U_r})
    check_kernel(k->shape(), d.hidden_channels, d.hidden_channels, d.k1, d.k2, "U");
  for (const Var* b : {&p.b, &p.b_z, &p.b_r})
    require(b->shape() == Shape{d.hidden_channels}, "conv GRU bias has shape " + shape_string(b->shape()));
  return d;
}

Var blend(Var z, Var h_prev, Var candidate) {
  return add(hadamard(one_minus(z), h_prev), hadamard(z, candidate));
}

// The three input-side convolutions share one im2col by concatenating their
// kernels along output channels, and likewise the two recurrent gate
// convolutions. Each output element is computed exactly as by the separate
// convolutions.
struct Fused {
  std::size_t hidden;
  Var input_kernels, input_bias;  // [W_z ; W_r ; W], [b_z ; b_r ; b]
  Var gate_kernels;               // [U_z ; U_r]
  Var U;
};

Fused fuse(const ConvGru<Var>& p) {
  const Var ik[] = {p.W_z, p.W_r, p.W};
  const Var ib[] = {p.b_z, p.b_r, p.b};
  const Var gk[] = {p.U_z, p.U_r};
  return {p.W.shape()[0], concat0(ik), concat0(ib), concat0(gk), p.U};
}

struct Terms {
  Var z, r, candidate;
};

Terms split3(Var all, std::size_t oh, bool has_candidate = true) {
  Terms t{slice0(all, 0, oh), slice0(all, oh, oh), {}};
  if (has_candidate) t.candidate = slice0(all, 2 * oh, oh);
  return t;
}

// Input-side pre-activations for every step, from one batched convolution.
std::vector<Terms> input_terms(const Fused& f, std::span<const Var> xs) {
  std::vector<Terms> out;
  out.reserve(xs.size());
  if (xs.size() == 1) {
    out.push_back(split3(conv(xs[0], f.input_kernels, f.input_bias), f.hidden));
    return out;
  }
  Var all = conv(stack0(xs), f.input_kernels, f.input_bias);
  for (std::size_t t = 0; t < xs.size(); ++t) out.push_back(split3(index0(all, t), f.hidden));
  return out;
}

struct FusedExtra {
  Var kernels;  // [W_zl ; W_rl (; W_hl)]
  bool candidate;
};

FusedExtra fuse(const StackedExtra<Var>& e) {
  std::vector<Var> parts{e.W_zl, e.W_rl};
  if (e.W_hl) parts.push_back(*e.W_hl);
  return {concat0(parts), e.W_hl.has_value()};
}

Var step(const Fused& f, const Terms& in, const Terms* below, Var h) {
  Terms rec = split3(conv(h, f.gate_kernels), f.hidden, false);
  Var z = sigmoid(add(below ? add(in.z, below->z) : in.z, rec.z));
  Var r = sigmoid(add(below ? add(in.r, below->r) : in.r, rec.r));
  Var input = (below && below->candidate.valid()) ? add(in.candidate, below->candidate) : in.candidate;
  Var candidate = tanh(add(input, conv(hadamard(r, h), f.U)));
  return blend(z, h, candidate);
}

Terms below_terms(const FusedExtra& e, std::size_t oh, Var h_below) {
  return split3(conv(h_below, e.kernels), oh, e.candidate);
}

}  // namespace

// ---------------------------------------------------------------- shapes

std::size_t param_count(const ConvGruDims& d, bool include_bias) {
  const std::size_t weights =
      3 * d.k1 * d.k2 * (d.input_channels * d.hidden_channels + d.hidden_channels * d.hidden_channels);
  return weights + (include_bias ? 3 * d.hidden_channels : 0);
}

std::size_t stacked_extra_param_count(std::size_t k1, std::size_t k2, std::size_t below_channels,
                                      std::size_t hidden_channels, bool candidate_input) {
  return (candidate_input ? 3 : 2) * k1 * k2 * below_channels * hidden_channels;
}

ConvGruDims conv_gru_dims(const ConvGRULayerParams& p) {
  Tape tape;
  return dims_of(bind(tape, p, false));
}

// ---------------------------------------------------------------- init

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor random_orthogonal(std::size_t n, Rng& rng) {
  // Modified Gram-Schmidt on the rows of a random matrix.
  Tensor q({n, n});
  for (auto& v : q.data()) v = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* row = q.raw() + i * n;
    for (std::size_t j = 0; j < i; ++j) {
      const double* prev = q.raw() + j * n;
      double dot = 0.0;
      for (std::size_t k = 0; k < n; ++k) dot += row[k] * prev[k];
      for (std::size_t k = 0; k < n; ++k) row[k] -= dot * prev[k];
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < n; ++k) norm += row[k] * row[k];
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericalError("degenerate random matrix in orthogonal init");
    for (std::size_t k = 0; k < n; ++k) row[k] /= norm;
  }
  return q;
}

ConvGRULayerParams zero_conv_gru(const ConvGruDims& d) {
  const Shape w{d.hidden_channels, d.input_channels, d.k1, d.k2};
  const Shape u{d.hidden_channels, d.hidden_channels, d.k1, d.k2};
  const Shape b{d.hidden_channels};
  return {Tensor(w), Tensor(w), Tensor(w), Tensor(u), Tensor(u), Tensor(u), Tensor(b), Tensor(b), Tensor(b)};
}

GRUParams zero_fc_gru(std::size_t input_size, std::size_t hidden_size) {
  const Shape w{hidden_size, input_size};
  const Shape u{hidden_size, hidden_size};
  const Shape b{hidden_size};
  return {Tensor(w), Tensor(w), Tensor(w), Tensor(u), Tensor(u), Tensor(u), Tensor(b), Tensor(b), Tensor(b)};
}

ConvGRULayerParams init_conv_gru(const ConvGruDims& d, Rng& rng) {
  if (d.k1 % 2 == 0 || d.k2 % 2 == 0) throw DimensionError("conv GRU kernels must have odd sides");
  ConvGRULayerParams p = zero_conv_gru(d);
  const std::size_t area = d.k1 * d.k2;
  for (Tensor* w : {&p.W, &p.W_z, &p.W_r})
    *w = glorot_uniform(w->shape(), d.input_channels * area, d.hidden_channels * area, rng);
  for (Tensor* u : {&p.U, &p.U_z, &p.U_r}) {
    if (area == 1)
      *u = random_orthogonal(d.hidden_channels, rng).reshaped(u->shape());
    else
      *u = glorot_uniform(u->shape(), d.hidden_channels * area, d.hidden_channels * area, rng);
  }
  return p;
}

GRUParams init_fc_gru(std::size_t input_size, std::size_t hidden_size, Rng& rng) {
  GRUParams p = zero_fc_gru(input_size, hidden_size);
  for (Tensor* w : {&p.W, &p.W_z, &p.W_r}) *w = glorot_uniform(w->shape(), input_size, hidden_size, rng);
  for (Tensor* u : {&p.U, &p.U_z, &p.U_r}) *u = random_orthogonal(hidden_size, rng);
  return p;
}

StackedExtraParams init_stacked_extra(std::size_t k1, std::size_t k2, std::size_t below_channels,
                                      std::size_t hidden_channels, bool candidate_input, Rng& rng) {
  const Shape s{hidden_channels, below_channels, k1, k2};
  const std::size_t fan_in = below_channels * k1 * k2, fan_out = hidden_channels * k1 * k2;
  StackedExtraParams e{glorot_uniform(s, fan_in, fan_out, rng), glorot_uniform(s, fan_in, fan_out, rng), {}};
  if (candidate_input) e.W_hl = glorot_uniform(s, fan_in, fan_out, rng);
  return e;
}

// ---------------------------------------------------------------- recorded steps

Var gru_step(const FcGru<Var>& p, Var x, Var h) {
  const Shape& w = p.W.shape();
  require(w.size() == 2, "GRU weight W must be a matrix, got " + shape_string(w));
  const std::size_t oh = w[0], ox = w[1];
  for (const Var* m : {&p.W, &p.W_z, &p.W_r})
    require(m->shape() == Shape{oh, ox}, "GRU input weight has shape " + shape_string(m->shape()));
  for (const Var* m : {&p.U, &p.U_z, &p.U_r})
    require(m->shape() == Shape{oh, oh}, "GRU recurrent weight has shape " + shape_string(m->shape()));
  require(x.shape() == Shape{ox}, "GRU input has shape " + shape_string(x.shape()) + ", expected [" +
                                      std::to_string(ox) + "]");
  require(h.shape() == Shape{oh}, "GRU state has shape " + shape_string(h.shape()) + ", expected [" +
                                      std::to_string(oh) + "]");

  Var z = sigmoid(add(affine(x, p.W_z, p.b_z), affine(h, p.U_z, std::nullopt)));
  Var r = sigmoid(add(affine(x, p.W_r, p.b_r), affine(h, p.U_r, std::nullopt)));
  Var candidate = tanh(add(affine(x, p.W, p.b), affine(hadamard(r, h), p.U, std::nullopt)));
  return blend(z, h, candidate);
}

Var convgru_step(const ConvGru<Var>& p, Var x, Var h) {
  check_step_inputs(dims_of(p), x.shape(), h.shape());
  const Fused f = fuse(p);
  const Var xs[] = {x};
  return step(f, input_terms(f, xs)[0], nullptr, h);
}

Var stacked_convgru_step(const ConvGru<Var>& p, const StackedExtra<Var>& e, Var x, Var h_below, Var h) {
  const ConvGruDims d = dims_of(p);
  check_step_inputs(d, x.shape(), h.shape());
  const Shape& hb = h_below.shape();
  require(hb.size() == 3 && hb[1] == x.shape()[1] && hb[2] == x.shape()[2],
          "lower-layer state " + shape_string(hb) + " is not at the input resolution " + shape_string(x.shape()));
  for (const Var* k : {&e.W_zl, &e.W_rl})
    check_kernel(k->shape(), d.hidden_channels, hb[0], d.k1, d.k2, "W_zl/W_rl");
  if (e.W_hl) check_kernel(e.W_hl->shape(), d.hidden_channels, hb[0], d.k1, d.k2, "W_hl");

  const Fused f = fuse(p);
  const Var xs[] = {x};
  const Terms below = below_terms(fuse(e), d.hidden_channels, h_below);
  return step(f, input_terms(f, xs)[0], &below, h);
}

LayerRun run_layer(const ConvGru<Var>& p, std::span<const Var> inputs, Var h0) {
  if (inputs.empty()) throw DimensionError("run_layer needs at least one time step");
  const ConvGruDims d = dims_of(p);
  for (const Var& x : inputs) {
    require(x.shape() == inputs.front().shape(), "run_layer inputs change shape over time");
    check_step_inputs(d, x.shape(), h0.shape());
  }
  const Fused f = fuse(p);
  LayerRun out;
  out.hiddens.reserve(inputs.size());
  Var h = h0;
  for (const Terms& in : input_terms(f, inputs)) {
    h = step(f, in, nullptr, h);
    out.hiddens.push_back(h);
  }
  out.final = h;
  return out;
}

LayerRun run_layer(const ConvGru<Var>& p, std::span<const Var> inputs) {
  if (inputs.empty()) throw DimensionError("run_layer needs at least one time step");
  const Shape& x = inputs.front().shape();
  require(x.size() == 3, "run_layer inputs must be C x H x W, got " + shape_string(x));
  const std::size_t oh = p.W.shape()[0];
  return run_layer(p, inputs, inputs.front().tape().constant(Tensor({oh, x[1], x[2]})));
}

std::pair<std::size_t, std::size_t> bridge_factor(const Shape& below, std::size_t th, std::size_t tw) {
  require(below.size() == 3, "stacked lower state must be C x H x W, got " + shape_string(below));
  if (below[1] % th != 0 || below[2] % tw != 0 || below[1] < th || below[2] < tw)
    throw DimensionError("cannot pool " + shape_string(below) + " to " + std::to_string(th) + "x" +
                         std::to_string(tw) + " with an integer factor");
  return {below[1] / th, below[2] / tw};
}

std::vector<Var> run_stack(std::span<const StackLayer<Var>> layers, const std::vector<std::vector<Var>>& percepts) {
  if (layers.empty()) throw DimensionError("run_stack needs at least one layer");
  if (percepts.empty()) throw DimensionError("run_stack needs at least one time step");
  for (const auto& step : percepts)
    require(step.size() == layers.size(), "run_stack: percept level count " + std::to_string(step.size()) +
                                              " != layer count " + std::to_string(layers.size()));
  require(!layers.front().extra, "the bottom stack layer takes no lower-layer input");

  Tape& tape = percepts.front().front().tape();
  const std::size_t levels = layers.size();
  std::vector<Var> h(levels);
  std::vector<Fused> cells;
  std::vector<std::optional<FusedExtra>> extras;
  std::vector<std::vector<Terms>> inputs;
  for (std::size_t l = 0; l < levels; ++l) {
    const Shape& x = percepts.front()[l].shape();
    require(x.size() == 3, "percept must be C x H x W, got " + shape_string(x));
    const ConvGruDims d = dims_of(layers[l].cell);
    h[l] = tape.constant(Tensor({d.hidden_channels, x[1], x[2]}));
    std::vector<Var> xs;
    for (const auto& s : percepts) {
      require(s[l].shape() == x, "run_stack: level " + std::to_string(l) + " percepts change shape over time");
      check_step_inputs(d, x, h[l].shape());
      xs.push_back(s[l]);
    }
    cells.push_back(fuse(layers[l].cell));
    inputs.push_back(input_terms(cells.back(), xs));
    extras.push_back(layers[l].extra ? std::optional(fuse(*layers[l].extra)) : std::nullopt);
    if (l > 0 && layers[l].extra) {
      const std::size_t below_channels = layers[l - 1].cell.W.shape()[0];
      for (const Var* k : {&layers[l].extra->W_zl, &layers[l].extra->W_rl})
        check_kernel(k->shape(), d.hidden_channels, below_channels, d.k1, d.k2, "W_zl/W_rl");
      if (layers[l].extra->W_hl)
        check_kernel(layers[l].extra->W_hl->shape(), d.hidden_channels, below_channels, d.k1, d.k2, "W_hl");
      bridge_factor(h[l - 1].shape(), x[1], x[2]);
    }
  }
  for (std::size_t t = 0; t < percepts.size(); ++t) {
    for (std::size_t l = 0; l < levels; ++l) {
      if (!extras[l]) {
        h[l] = step(cells[l], inputs[l][t], nullptr, h[l]);
        continue;
      }
      const Shape& x = percepts[t][l].shape();
      const auto [fh, fw] = bridge_factor(h[l - 1].shape(), x[1], x[2]);
      Var pooled = (fh == 1 && fw == 1) ? h[l - 1] : pool2d(h[l - 1], PoolMode::max, {fh, fw, fh, fw});
      const Terms below = below_terms(*extras[l], cells[l].hidden, pooled);
      h[l] = step(cells[l], inputs[l][t], &below, h[l]);
    }
  }
  return h;
}

Var bidirectional_encode(const ConvGru<Var>& fwd, const ConvGru<Var>& bwd, std::span<const Var> inputs) {
  if (inputs.empty()) throw DimensionError("bidirectional_encode needs at least one time step");
  std::vector<Var> reversed(inputs.rbegin(), inputs.rend());
  const Var parts[] = {run_layer(fwd, inputs).final, run_layer(bwd, reversed).final};
  return concat0(parts);
}

// ---------------------------------------------------------------- eager forms

Tensor gru_step(const GRUParams& p, const Tensor& x, const Tensor& h) {
  Tape tape;
  return gru_step(bind(tape, p, false), tape.constant(x), tape.constant(h)).value();
}

Tensor convgru_step(const ConvGRULayerParams& p, const Tensor& x, const Tensor& h) {
  Tape tape;
  return convgru_step(bind(tape, p, false), tape.constant(x), tape.constant(h)).value();
}

Tensor stacked_convgru_step(const ConvGRULayerParams& p, const StackedExtraParams& e, const Tensor& x,
                            const Tensor& h_below, const Tensor& h) {
  Tape tape;
  return stacked_convgru_step(bind(tape, p, false), bind(tape, e, false), tape.constant(x), tape.constant(h_below),
                              tape.constant(h))
      .value();
}

namespace {
std::vector<Var> constants(Tape& tape, std::span<const Tensor> ts) {
  std::vector<Var> out;
  out.reserve(ts.size());
  for (const auto& t : ts) out.push_back(tape.constant(t));
  return out;
}
}  // namespace

std::vector<Tensor> run_layer(const ConvGRULayerParams& p, std::span<const Tensor> inputs, const Tensor& h0) {
  Tape tape;
  auto run = run_layer(bind(tape, p, false), constants(tape, inputs), tape.constant(h0));
  std::vector<Tensor> out;
  for (const auto& h : run.hiddens) out.push_back(h.value());
  return out;
}

std::vector<Tensor> run_stack(std::span<const StackLayer<Tensor>> layers,
                              const std::vector<std::vector<Tensor>>& percepts) {
  Tape tape;
  std::vector<StackLayer<Var>> bound;
  for (const auto& l : layers) {
    StackLayer<Var> b{bind(tape, l.cell, false), std::nullopt};
    if (l.extra) b.extra = bind(tape, *l.extra, false);
    bound.push_back(std::move(b));
  }
  std::vector<std::vector<Var>> steps;
  for (const auto& step : percepts) steps.push_back(constants(tape, step));
  std::vector<Tensor> out;
  for (const auto& h : run_stack(bound, steps)) out.push_back(h.value());
  return out;
}

Tensor bidirectional_encode(const ConvGRULayerParams& fwd, const ConvGRULayerParams& bwd,
                            std::span<const Tensor> inputs) {
  Tape tape;
  return bidirectional_encode(bind(tape, fwd, false), bind(tape, bwd, false), constants(tape, inputs)).value();
}

}  // namespace grcn

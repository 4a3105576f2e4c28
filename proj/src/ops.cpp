#include "grcn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "grcn/error.hpp"
#include "grcn/gemm.hpp"

namespace grcn {
namespace {

// ---------------------------------------------------------------------------
// convolution geometry

struct ConvGeometry {
  std::size_t batch = 1;  // images in the input (1 for rank-3)
  bool batched = false;
  std::size_t c_in = 0, h = 0, w = 0;
  std::size_t c_out = 0, kh = 0, kw = 0;
  std::size_t h_out = 0, w_out = 0;
  Conv2dOptions opts;

  std::size_t col_rows() const { return c_in * kh * kw; }
  std::size_t col_cols() const { return h_out * w_out; }
  bool pointwise() const {
    return kh == 1 && kw == 1 && opts.pad_h == 0 && opts.pad_w == 0 && opts.stride_h == 1 && opts.stride_w == 1;
  }
  Shape output_shape() const {
    if (batched) return {batch, c_out, h_out, w_out};
    return {c_out, h_out, w_out};
  }
};

ConvGeometry conv_geometry(const Shape& in, const Shape& k, const Conv2dOptions& opts) {
  ConvGeometry g;
  g.opts = opts;
  if (in.size() == 4) {
    g.batched = true;
    g.batch = in[0];
  } else if (in.size() != 3) {
    throw DimensionError("conv2d input must be C x H x W or N x C x H x W, got " + shape_string(in));
  }
  const std::size_t off = g.batched ? 1 : 0;
  g.c_in = in[off];
  g.h = in[off + 1];
  g.w = in[off + 2];
  if (k.size() != 4) throw DimensionError("conv2d kernels must be C_out x C_in x kh x kw, got " + shape_string(k));
  g.c_out = k[0];
  g.kh = k[2];
  g.kw = k[3];
  if (k[1] != g.c_in)
    throw DimensionError("conv2d kernel expects " + std::to_string(k[1]) + " input channels, input has " +
                         std::to_string(g.c_in));
  if (opts.stride_h == 0 || opts.stride_w == 0) throw DimensionError("conv2d stride must be >= 1");
  if (g.kh > g.h + 2 * opts.pad_h || g.kw > g.w + 2 * opts.pad_w)
    throw DimensionError("conv2d kernel " + shape_string(k) + " larger than padded input " + shape_string(in));
  g.h_out = (g.h + 2 * opts.pad_h - g.kh) / opts.stride_h + 1;
  g.w_out = (g.w + 2 * opts.pad_w - g.kw) / opts.stride_w + 1;
  return g;
}

void check_bias(const Shape& b, std::size_t c_out, const char* op) {
  if (b.size() != 1 || b[0] != c_out)
    throw DimensionError(std::string(op) + " bias must have shape [" + std::to_string(c_out) + "], got " +
                         shape_string(b));
}

void im2col(const ConvGeometry& g, const double* img, double* col) {
  const auto hw_out = g.col_cols();
  const auto w = static_cast<std::ptrdiff_t>(g.w);
  for (std::size_t c = 0; c < g.c_in; ++c) {
    const double* plane = img + c * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = col + ((c * g.kh + i) * g.kw + j) * hw_out;
        const auto shift = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(g.opts.pad_w);
        // valid output columns: 0 <= ox * stride + shift < w
        std::size_t lo = 0, hi = g.w_out;
        if (g.opts.stride_w == 1) {
          lo = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(-shift, 0, static_cast<std::ptrdiff_t>(g.w_out)));
          hi = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(w - shift, static_cast<std::ptrdiff_t>(lo),
                                                                    static_cast<std::ptrdiff_t>(g.w_out)));
        }
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.opts.stride_h + i) - static_cast<std::ptrdiff_t>(g.opts.pad_h);
          double* dst = row + oy * g.w_out;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) {
            std::fill(dst, dst + g.w_out, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(y) * g.w;
          if (g.opts.stride_w == 1) {
            std::fill(dst, dst + lo, 0.0);
            std::copy(src + (static_cast<std::ptrdiff_t>(lo) + shift), src + (static_cast<std::ptrdiff_t>(hi) + shift),
                      dst + lo);
            std::fill(dst + hi, dst + g.w_out, 0.0);
            continue;
          }
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.opts.stride_w) + shift;
            dst[ox] = (x < 0 || x >= w) ? 0.0 : src[x];
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* col, double* img) {
  const auto hw_out = g.col_cols();
  for (std::size_t c = 0; c < g.c_in; ++c) {
    double* plane = img + c * g.h * g.w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = col + ((c * g.kh + i) * g.kw + j) * hw_out;
        for (std::size_t oy = 0; oy < g.h_out; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * g.opts.stride_h + i) - static_cast<std::ptrdiff_t>(g.opts.pad_h);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
          double* dst = plane + static_cast<std::size_t>(y) * g.w;
          const double* src = row + oy * g.w_out;
          for (std::size_t ox = 0; ox < g.w_out; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * g.opts.stride_w + j) - static_cast<std::ptrdiff_t>(g.opts.pad_w);
            if (x >= 0 && x < static_cast<std::ptrdiff_t>(g.w)) dst[x] += src[ox];
          }
        }
      }
    }
  }
}

Tensor conv2d_forward(const Tensor& input, const Tensor& kernels, const Tensor* bias, const ConvGeometry& g) {
  Tensor out(g.output_shape());
  const std::size_t in_stride = g.c_in * g.h * g.w;
  const std::size_t out_stride = g.c_out * g.col_cols();
  std::vector<double> col(g.pointwise() ? 0 : g.col_rows() * g.col_cols());
  for (std::size_t n = 0; n < g.batch; ++n) {
    double* o = out.raw() + n * out_stride;
    if (bias)
      for (std::size_t c = 0; c < g.c_out; ++c) std::fill(o + c * g.col_cols(), o + (c + 1) * g.col_cols(), (*bias)[c]);
    const double* img = input.raw() + n * in_stride;
    const double* cols = img;
    if (!g.pointwise()) {
      im2col(g, img, col.data());
      cols = col.data();
    }
    gemm::nn(g.c_out, g.col_cols(), g.col_rows(), kernels.raw(), cols, o);
  }
  return out;
}

void conv2d_backward(const ConvGeometry& g, const Tensor& input, const Tensor& kernels, const Tensor& grad_out,
                     Tensor* grad_input, Tensor* grad_kernels, Tensor* grad_bias) {
  const std::size_t in_stride = g.c_in * g.h * g.w;
  const std::size_t out_stride = g.c_out * g.col_cols();
  std::vector<double> col(g.pointwise() ? 0 : g.col_rows() * g.col_cols());
  std::vector<double> dcol(grad_input && !g.pointwise() ? g.col_rows() * g.col_cols() : 0);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* go = grad_out.raw() + n * out_stride;
    if (grad_bias)
      for (std::size_t c = 0; c < g.c_out; ++c) {
        double s = 0.0;
        for (std::size_t p = 0; p < g.col_cols(); ++p) s += go[c * g.col_cols() + p];
        (*grad_bias)[c] += s;
      }
    if (grad_kernels) {
      const double* img = input.raw() + n * in_stride;
      const double* cols = img;
      if (!g.pointwise()) {
        im2col(g, img, col.data());
        cols = col.data();
      }
      gemm::nt(g.c_out, g.col_rows(), g.col_cols(), go, cols, grad_kernels->raw());
    }
    if (grad_input) {
      double* gi = grad_input->raw() + n * in_stride;
      if (g.pointwise()) {
        gemm::tn(g.col_rows(), g.col_cols(), g.c_out, kernels.raw(), go, gi);
      } else {
        std::fill(dcol.begin(), dcol.end(), 0.0);
        gemm::tn(g.col_rows(), g.col_cols(), g.c_out, kernels.raw(), go, dcol.data());
        col2im_add(g, dcol.data(), gi);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// pooling

struct PoolGeometry {
  std::size_t planes = 0, h = 0, w = 0, h_out = 0, w_out = 0;
  Pool2dOptions opts;
  Shape out_shape;
};

PoolGeometry pool_geometry(const Shape& in, const Pool2dOptions& opts) {
  if (in.size() != 3 && in.size() != 4)
    throw DimensionError("pool2d input must be C x H x W or N x C x H x W, got " + shape_string(in));
  if (opts.stride_h == 0 || opts.stride_w == 0 || opts.window_h == 0 || opts.window_w == 0)
    throw DimensionError("pool2d window and stride must be >= 1");
  PoolGeometry g;
  g.opts = opts;
  g.h = in[in.size() - 2];
  g.w = in[in.size() - 1];
  if (opts.window_h > g.h || opts.window_w > g.w)
    throw DimensionError("pool2d window " + std::to_string(opts.window_h) + "x" + std::to_string(opts.window_w) +
                         " larger than input " + shape_string(in));
  g.planes = shape_size(in) / (g.h * g.w);
  g.h_out = (g.h - opts.window_h) / opts.stride_h + 1;
  g.w_out = (g.w - opts.window_w) / opts.stride_w + 1;
  g.out_shape = in;
  g.out_shape[in.size() - 2] = g.h_out;
  g.out_shape[in.size() - 1] = g.w_out;
  return g;
}

// Offset (within the plane) of the first maximum of a window.
std::size_t window_argmax(const PoolGeometry& g, const double* plane, std::size_t oy, std::size_t ox) {
  std::size_t best = (oy * g.opts.stride_h) * g.w + ox * g.opts.stride_w;
  for (std::size_t i = 0; i < g.opts.window_h; ++i)
    for (std::size_t j = 0; j < g.opts.window_w; ++j) {
      const std::size_t off = (oy * g.opts.stride_h + i) * g.w + ox * g.opts.stride_w + j;
      if (plane[off] > plane[best]) best = off;
    }
  return best;
}

Tensor pool2d_forward(const Tensor& input, PoolMode mode, const PoolGeometry& g) {
  Tensor out(g.out_shape);
  const double area = static_cast<double>(g.opts.window_h * g.opts.window_w);
  for (std::size_t p = 0; p < g.planes; ++p) {
    const double* plane = input.raw() + p * g.h * g.w;
    double* o = out.raw() + p * g.h_out * g.w_out;
    for (std::size_t oy = 0; oy < g.h_out; ++oy)
      for (std::size_t ox = 0; ox < g.w_out; ++ox) {
        if (mode == PoolMode::max) {
          o[oy * g.w_out + ox] = plane[window_argmax(g, plane, oy, ox)];
        } else {
          double s = 0.0;
          for (std::size_t i = 0; i < g.opts.window_h; ++i)
            for (std::size_t j = 0; j < g.opts.window_w; ++j)
              s += plane[(oy * g.opts.stride_h + i) * g.w + ox * g.opts.stride_w + j];
          o[oy * g.w_out + ox] = s / area;
        }
      }
  }
  return out;
}

void pool2d_backward(const Tensor& input, PoolMode mode, const PoolGeometry& g, const Tensor& grad_out,
                     Tensor& grad_in) {
  const double area = static_cast<double>(g.opts.window_h * g.opts.window_w);
  for (std::size_t p = 0; p < g.planes; ++p) {
    const double* plane = input.raw() + p * g.h * g.w;
    const double* go = grad_out.raw() + p * g.h_out * g.w_out;
    double* gi = grad_in.raw() + p * g.h * g.w;
    for (std::size_t oy = 0; oy < g.h_out; ++oy)
      for (std::size_t ox = 0; ox < g.w_out; ++ox) {
        const double gv = go[oy * g.w_out + ox];
        if (mode == PoolMode::max) {
          gi[window_argmax(g, plane, oy, ox)] += gv;
        } else {
          for (std::size_t i = 0; i < g.opts.window_h; ++i)
            for (std::size_t j = 0; j < g.opts.window_w; ++j)
              gi[(oy * g.opts.stride_h + i) * g.w + ox * g.opts.stride_w + j] += gv / area;
        }
      }
  }
}

// ---------------------------------------------------------------------------
// helpers

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + " shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

void accumulate(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += src[i];
}

double sigmoid_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

void check_affine(const Shape& x, const Shape& w) {
  if (x.size() != 1 || w.size() != 2 || w[1] != x[0])
    throw DimensionError("affine expects weight D_out x D_in and input D_in, got " + shape_string(w) + " and " +
                         shape_string(x));
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor* bias, const Conv2dOptions& opts) {
  const auto g = conv_geometry(input.shape(), kernels.shape(), opts);
  if (bias) check_bias(bias->shape(), g.c_out, "conv2d");
  return conv2d_forward(input, kernels, bias, g);
}

Var conv2d(Var input, Var kernels, std::optional<Var> bias, const Conv2dOptions& opts) {
  const auto g = conv_geometry(input.shape(), kernels.shape(), opts);
  if (bias) check_bias(bias->shape(), g.c_out, "conv2d");
  auto backward = [g](const BackwardArgs& a) {
    conv2d_backward(g, *a.inputs[0], *a.inputs[1], a.grad_output, a.grad_inputs[0], a.grad_inputs[1],
                    a.grad_inputs.size() > 2 ? a.grad_inputs[2] : nullptr);
  };
  auto forward = [g](std::span<const Tensor* const> in) {
    return conv2d_forward(*in[0], *in[1], in.size() > 2 ? in[2] : nullptr, g);
  };
  if (bias) return input.tape().record("conv2d", {input, kernels, *bias}, forward, backward);
  return input.tape().record("conv2d", {input, kernels}, forward, backward);
}

// ---------------------------------------------------------------------------
// pooling

Tensor pool2d(const Tensor& input, PoolMode mode, const Pool2dOptions& opts) {
  return pool2d_forward(input, mode, pool_geometry(input.shape(), opts));
}

Var pool2d(Var input, PoolMode mode, const Pool2dOptions& opts) {
  const auto g = pool_geometry(input.shape(), opts);
  return input.tape().record(
      mode == PoolMode::max ? "maxpool2d" : "avgpool2d", {input},
      [g, mode](std::span<const Tensor* const> in) { return pool2d_forward(*in[0], mode, g); },
      [g, mode](const BackwardArgs& a) {
        if (a.grad_inputs[0]) pool2d_backward(*a.inputs[0], mode, g, a.grad_output, *a.grad_inputs[0]);
      });
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.rank() != 3) throw DimensionError("global_avg_pool expects C x H x W, got " + shape_string(input.shape()));
  const std::size_t c = input.dim(0);
  const std::size_t hw = input.dim(1) * input.dim(2);
  Tensor out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) s += input[ch * hw + p];
    out[ch] = s / static_cast<double>(hw);
  }
  return out;
}

Var global_avg_pool(Var input) {
  if (input.shape().size() != 3)
    throw DimensionError("global_avg_pool expects C x H x W, got " + shape_string(input.shape()));
  return input.tape().record(
      "global_avg_pool", {input}, [](std::span<const Tensor* const> in) { return global_avg_pool(*in[0]); },
      [](const BackwardArgs& a) {
        if (!a.grad_inputs[0]) return;
        const std::size_t c = a.inputs[0]->dim(0);
        const std::size_t hw = a.inputs[0]->size() / c;
        Tensor& gi = *a.grad_inputs[0];
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double g = a.grad_output[ch] / static_cast<double>(hw);
          for (std::size_t p = 0; p < hw; ++p) gi[ch * hw + p] += g;
        }
      });
}

// ---------------------------------------------------------------------------
// affine

Tensor affine(const Tensor& input, const Tensor& weight, const Tensor* bias) {
  check_affine(input.shape(), weight.shape());
  const std::size_t rows = weight.dim(0);
  const std::size_t cols = weight.dim(1);
  if (bias) check_bias(bias->shape(), rows, "affine");
  Tensor out({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = bias ? (*bias)[i] : 0.0;
    const double* w = weight.raw() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) acc = std::fma(w[j], input[j], acc);
    out[i] = acc;
  }
  return out;
}

Var affine(Var input, Var weight, std::optional<Var> bias) {
  check_affine(input.shape(), weight.shape());
  if (bias) check_bias(bias->shape(), weight.shape()[0], "affine");
  auto forward = [](std::span<const Tensor* const> in) {
    return affine(*in[0], *in[1], in.size() > 2 ? in[2] : nullptr);
  };
  auto backward = [](const BackwardArgs& a) {
    const Tensor& x = *a.inputs[0];
    const Tensor& w = *a.inputs[1];
    const std::size_t rows = w.dim(0);
    const std::size_t cols = w.dim(1);
    const Tensor& g = a.grad_output;
    if (Tensor* gx = a.grad_inputs[0])
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) (*gx)[j] += w[i * cols + j] * g[i];
    if (Tensor* gw = a.grad_inputs[1])
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) (*gw)[i * cols + j] += g[i] * x[j];
    if (a.grad_inputs.size() > 2) accumulate(a.grad_inputs[2], g);
  };
  if (bias) return input.tape().record("affine", {input, weight, *bias}, forward, backward);
  return input.tape().record("affine", {input, weight}, forward, backward);
}

// ---------------------------------------------------------------------------
// element-wise

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "hadamard");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Tensor sigmoid(const Tensor& x) { return map(x, sigmoid_scalar); }
Tensor tanh(const Tensor& x) { return map(x, [](double v) { return std::tanh(v); }); }
Tensor relu(const Tensor& x) { return map(x, [](double v) { return v > 0.0 ? v : 0.0; }); }
Tensor scale(const Tensor& x, double factor) { return map(x, [factor](double v) { return v * factor; }); }
Tensor one_minus(const Tensor& x) { return map(x, [](double v) { return 1.0 - v; }); }

Var add(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "add");
  return a.tape().record(
      "add", {a, b}, [](std::span<const Tensor* const> in) { return add(*in[0], *in[1]); },
      [](const BackwardArgs& g) {
        accumulate(g.grad_inputs[0], g.grad_output);
        accumulate(g.grad_inputs[1], g.grad_output);
      });
}

Var sub(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "sub");
  return a.tape().record(
      "sub", {a, b}, [](std::span<const Tensor* const> in) { return sub(*in[0], *in[1]); },
      [](const BackwardArgs& g) {
        accumulate(g.grad_inputs[0], g.grad_output);
        if (Tensor* gb = g.grad_inputs[1])
          for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] -= g.grad_output[i];
      });
}

Var hadamard(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "hadamard");
  return a.tape().record(
      "hadamard", {a, b}, [](std::span<const Tensor* const> in) { return hadamard(*in[0], *in[1]); },
      [](const BackwardArgs& g) {
        const Tensor& x = *g.inputs[0];
        const Tensor& y = *g.inputs[1];
        if (Tensor* gx = g.grad_inputs[0])
          for (std::size_t i = 0; i < x.size(); ++i) (*gx)[i] += g.grad_output[i] * y[i];
        if (Tensor* gy = g.grad_inputs[1])
          for (std::size_t i = 0; i < y.size(); ++i) (*gy)[i] += g.grad_output[i] * x[i];
      });
}

Var sigmoid(Var x) {
  return x.tape().record(
      "sigmoid", {x}, [](std::span<const Tensor* const> in) { return sigmoid(*in[0]); },
      [](const BackwardArgs& g) {
        if (Tensor* gx = g.grad_inputs[0])
          for (std::size_t i = 0; i < gx->size(); ++i) {
            const double s = g.output[i];
            (*gx)[i] += g.grad_output[i] * s * (1.0 - s);
          }
      });
}

Var tanh(Var x) {
  return x.tape().record(
      "tanh", {x}, [](std::span<const Tensor* const> in) { return tanh(*in[0]); },
      [](const BackwardArgs& g) {
        if (Tensor* gx = g.grad_inputs[0])
          for (std::size_t i = 0; i < gx->size(); ++i) {
            const double t = g.output[i];
            (*gx)[i] += g.grad_output[i] * (1.0 - t * t);
          }
      });
}

Var relu(Var x) {
  return x.tape().record(
      "relu", {x}, [](std::span<const Tensor* const> in) { return relu(*in[0]); },
      [](const BackwardArgs& g) {
        if (Tensor* gx = g.grad_inputs[0])
          for (std::size_t i = 0; i < gx->size(); ++i)
            if ((*g.inputs[0])[i] > 0.0) (*gx)[i] += g.grad_output[i];
      });
}

Var scale(Var x, double factor) {
  return x.tape().record(
      "scale", {x}, [factor](std::span<const Tensor* const> in) { return scale(*in[0], factor); },
      [factor](const BackwardArgs& g) {
        if (Tensor* gx = g.grad_inputs[0])
          for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] += g.grad_output[i] * factor;
      });
}

Var one_minus(Var x) {
  return x.tape().record(
      "one_minus", {x}, [](std::span<const Tensor* const> in) { return one_minus(*in[0]); },
      [](const BackwardArgs& g) {
        if (Tensor* gx = g.grad_inputs[0])
          for (std::size_t i = 0; i < gx->size(); ++i) (*gx)[i] -= g.grad_output[i];
      });
}

// ---------------------------------------------------------------------------
// softmax

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 1) throw DimensionError("softmax expects a vector, got " + shape_string(logits.shape()));
  const double top = *std::max_element(logits.data().begin(), logits.data().end());
  Tensor out(logits.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    total += out[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= total;
  return out;
}

Var softmax(Var logits) {
  if (logits.shape().size() != 1)
    throw DimensionError("softmax expects a vector, got " + shape_string(logits.shape()));
  return logits.tape().record(
      "softmax", {logits}, [](std::span<const Tensor* const> in) { return softmax(*in[0]); },
      [](const BackwardArgs& g) {
        Tensor* gx = g.grad_inputs[0];
        if (!gx) return;
        double dot = 0.0;
        for (std::size_t i = 0; i < g.output.size(); ++i) dot += g.grad_output[i] * g.output[i];
        for (std::size_t i = 0; i < g.output.size(); ++i) (*gx)[i] += g.output[i] * (g.grad_output[i] - dot);
      });
}

// ---------------------------------------------------------------------------
// structural

Tensor concat0(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat0 of an empty list");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw DimensionError("concat0 needs rank >= 1");
  Shape shape = first;
  shape[0] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size() || !std::equal(first.begin() + 1, first.end(), p.shape().begin() + 1))
      throw DimensionError("concat0 trailing shape mismatch " + shape_string(p.shape()) + " vs " + shape_string(first));
    shape[0] += p.dim(0);
  }
  std::vector<double> data;
  data.reserve(shape_size(shape));
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Tensor(std::move(shape), std::move(data));
}

Var concat0(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat0 of an empty list");
  std::vector<Tensor> probe;
  for (const auto& p : parts) probe.push_back(Tensor(p.shape()));
  concat0(probe);  // validates shapes
  return parts.front().tape().record(
      "concat0", parts,
      [](std::span<const Tensor* const> in) {
        std::vector<Tensor> copies;
        copies.reserve(in.size());
        for (const Tensor* t : in) copies.push_back(*t);
        return concat0(copies);
      },
      [](const BackwardArgs& g) {
        std::size_t offset = 0;
        for (std::size_t i = 0; i < g.inputs.size(); ++i) {
          const std::size_t n = g.inputs[i]->size();
          if (Tensor* gi = g.grad_inputs[i])
            for (std::size_t k = 0; k < n; ++k) (*gi)[k] += g.grad_output[offset + k];
          offset += n;
        }
      });
}

Var index0(Var x, std::size_t index) {
  const Shape& s = x.shape();
  if (s.empty() || index >= s[0])
    throw DimensionError("index0 " + std::to_string(index) + " out of range for " + shape_string(s));
  return x.tape().record(
      "index0", {x}, [index](std::span<const Tensor* const> in) { return in[0]->slice0(index); },
      [index](const BackwardArgs& g) {
        Tensor* gx = g.grad_inputs[0];
        if (!gx) return;
        const std::size_t n = g.grad_output.size();
        for (std::size_t k = 0; k < n; ++k) (*gx)[index * n + k] += g.grad_output[k];
      });
}

Var slice0(Var x, std::size_t begin, std::size_t count) {
  const Shape& s = x.shape();
  if (s.empty() || count == 0 || begin + count > s[0])
    throw DimensionError("slice0 [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for " + shape_string(s));
  Shape out = s;
  out[0] = count;
  const std::size_t inner = shape_size(s) / s[0];
  return x.tape().record(
      "slice0", {x},
      [=](std::span<const Tensor* const> in) {
        const double* src = in[0]->raw() + begin * inner;
        return Tensor(out, std::vector<double>(src, src + count * inner));
      },
      [=](const BackwardArgs& g) {
        Tensor* gx = g.grad_inputs[0];
        if (!gx) return;
        double* dst = gx->raw() + begin * inner;
        for (std::size_t k = 0; k < count * inner; ++k) dst[k] += g.grad_output[k];
      });
}

Var stack0(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("stack0 of an empty list");
  const Shape& first = parts.front().shape();
  for (const auto& p : parts)
    if (p.shape() != first)
      throw DimensionError("stack0 shape mismatch " + shape_string(p.shape()) + " vs " + shape_string(first));
  return parts.front().tape().record(
      "stack0", parts,
      [](std::span<const Tensor* const> in) {
        std::vector<Tensor> copies;
        copies.reserve(in.size());
        for (const Tensor* t : in) copies.push_back(*t);
        return stack0(copies);
      },
      [](const BackwardArgs& g) {
        const std::size_t n = g.grad_output.size() / g.inputs.size();
        for (std::size_t i = 0; i < g.inputs.size(); ++i)
          if (Tensor* gi = g.grad_inputs[i])
            for (std::size_t k = 0; k < n; ++k) (*gi)[k] += g.grad_output[i * n + k];
      });
}

Var sum(Var x) {
  return x.tape().record(
      "sum", {x},
      [](std::span<const Tensor* const> in) {
        double s = 0.0;
        for (double v : in[0]->data()) s += v;
        return Tensor::scalar(s);
      },
      [](const BackwardArgs& g) {
        if (Tensor* gx = g.grad_inputs[0])
          for (auto& v : gx->data()) v += g.grad_output[0];
      });
}

Var mean(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("mean of an empty list");
  for (const auto& p : parts)
    if (p.shape() != parts.front().shape())
      throw DimensionError("mean shape mismatch " + shape_string(p.shape()) + " vs " +
                           shape_string(parts.front().shape()));
  return parts.front().tape().record(
      "mean", parts,
      [](std::span<const Tensor* const> in) {
        Tensor out(in[0]->shape());
        for (const Tensor* t : in)
          for (std::size_t i = 0; i < out.size(); ++i) out[i] += (*t)[i];
        const double n = static_cast<double>(in.size());
        for (auto& v : out.data()) v /= n;
        return out;
      },
      [](const BackwardArgs& g) {
        const double n = static_cast<double>(g.inputs.size());
        for (Tensor* gi : g.grad_inputs)
          if (gi)
            for (std::size_t i = 0; i < gi->size(); ++i) (*gi)[i] += g.grad_output[i] / n;
      });
}

Var neg_log_prob(Var probabilities, std::size_t label, double floor) {
  const Shape& s = probabilities.shape();
  if (s.size() != 1) throw DimensionError("neg_log_prob expects a vector, got " + shape_string(s));
  if (label >= s[0])
    throw DimensionError("label " + std::to_string(label) + " out of range for " + std::to_string(s[0]) + " classes");
  return probabilities.tape().record(
      "neg_log_prob", {probabilities},
      [label, floor](std::span<const Tensor* const> in) {
        return Tensor::scalar(-std::log(std::max((*in[0])[label], floor)));
      },
      [label, floor](const BackwardArgs& g) {
        Tensor* gp = g.grad_inputs[0];
        const double p = (*g.inputs[0])[label];
        if (gp && p > floor) (*gp)[label] -= g.grad_output[0] / p;
      });
}

}  // namespace grcn

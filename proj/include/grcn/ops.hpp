#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "grcn/tape.hpp"
#include "grcn/tensor.hpp"

namespace grcn {

// Each op exists twice: an eager form on Tensors and a recorded form on Vars
// that appends the op to the Vars' tape. Both run the same kernel.

struct Conv2dOptions {
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;

  // Stride 1 with floor(k/2) zero padding: odd kernels keep the spatial size.
  static Conv2dOptions same(std::size_t kh, std::size_t kw) { return {kh / 2, kw / 2, 1, 1}; }
};

// Cross-correlation of a C_in x H x W map (or an N x C_in x H x W batch,
// each image independently) with C_out x C_in x kh x kw kernels. Positions
// outside the input read as zero. `bias` (C_out) is optional.
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor* bias, const Conv2dOptions& opts);
Var conv2d(Var input, Var kernels, std::optional<Var> bias, const Conv2dOptions& opts);

enum class PoolMode { max, avg };

struct Pool2dOptions {
  std::size_t window_h = 2;
  std::size_t window_w = 2;
  std::size_t stride_h = 2;
  std::size_t stride_w = 2;
};

// Per-channel window reduction over C x H x W or N x C x H x W, no padding.
// Max pooling routes gradient to the first maximum in row-major window order.
Tensor pool2d(const Tensor& input, PoolMode mode, const Pool2dOptions& opts);
Var pool2d(Var input, PoolMode mode, const Pool2dOptions& opts);

// C x H x W -> C, arithmetic mean over each channel's H x W entries.
Tensor global_avg_pool(const Tensor& input);
Var global_avg_pool(Var input);

// weight (D_out x D_in) * input (D_in) + bias (D_out, optional).
Tensor affine(const Tensor& input, const Tensor& weight, const Tensor* bias);
Var affine(Var input, Var weight, std::optional<Var> bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor one_minus(const Tensor& x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var sigmoid(Var x);
Var tanh(Var x);
Var relu(Var x);
Var scale(Var x, double factor);
Var one_minus(Var x);

// Numerically stable softmax of a vector (max subtracted before exp).
Tensor softmax(const Tensor& logits);
Var softmax(Var logits);

// Concatenate along the leading axis (channels for C x H x W maps).
Tensor concat0(std::span<const Tensor> parts);
Var concat0(std::span<const Var> parts);

// Leading-axis slice x[index].
Var index0(Var x, std::size_t index);

// Leading-axis range x[begin, begin + count), rank kept.
Var slice0(Var x, std::size_t begin, std::size_t count);

// Stack equally shaped values along a new leading axis.
Var stack0(std::span<const Var> parts);

// Sum of all entries, as a scalar.
Var sum(Var x);

// Element-wise arithmetic mean of equally shaped values.
Var mean(std::span<const Var> parts);

// -log(max(p[label], floor)) for a probability vector p.
Var neg_log_prob(Var probabilities, std::size_t label, double floor = 1e-12);

}  // namespace grcn

#pragma once

#include <cstddef>
#include <span>

#include "noisyforge/tensor.hpp"

// Differentiable tensor operations. Every op takes an optional tape; when the
// tape is non-null and at least one input requires grad, the op records its
// backward rule and the output requires grad. Reductions and dot products
// accumulate in double precision.
namespace noisyforge::ops {

// a[m x k] . b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

// Cross-correlation of input[N x C x H x W] with kernel[F x C x kh x kw].
Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding,
              Tape* tape = nullptr);

// Subgradient at exactly 0 is 0.
Tensor relu(const Tensor& x, Tape* tape = nullptr);

// Windowed max over input[N x C x H x W]. Ties route the gradient to the
// first maximum in row-major scan order.
Tensor max_pool2d(const Tensor& input, std::size_t window, std::size_t stride, Tape* tape = nullptr);

// Mean over the batch of -log softmax(logits)[label]; returns a scalar.
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tape* tape = nullptr);

// x[N x M] + bias[M] for every row.
Tensor add_bias(const Tensor& x, const Tensor& bias, Tape* tape = nullptr);
// x[N x C x ...] + bias[C] for every sample and spatial position.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias, Tape* tape = nullptr);

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& a, float factor, Tape* tape = nullptr);
Tensor sum(const Tensor& a, Tape* tape = nullptr);
Tensor reshape(const Tensor& a, Shape shape, Tape* tape = nullptr);

}  // namespace noisyforge::ops

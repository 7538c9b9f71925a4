#pragma once

#include <vector>

#include "fsdm/tensor.hpp"

// Differentiable operations over Tensor. Every function returns a fresh
// tensor; gradients flow to every input that requires grad.
namespace fsdm::ops {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
// Row b of x [B, ...] multiplied by factors[b].
Tensor scale_rows(const Tensor& x, const std::vector<double>& factors);
Tensor square(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor gelu(const Tensor& a);

// y's shape must be a suffix of x's shape; y is broadcast over the leading axes.
Tensor add_broadcast(const Tensor& x, const Tensor& y);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// [B, ...] -> [B]
Tensor sum_rows(const Tensor& a);
// Mean over one axis, removing it. With canonical_order the summands of each
// output element are sorted first, so the result is bitwise invariant to any
// permutation along that axis.
Tensor mean_axis(const Tensor& a, int axis, bool canonical_order = false);

Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& parts, int axis);
// Rows [begin, end) along axis 0.
Tensor slice0(const Tensor& a, int64_t begin, int64_t end);
// Gathers along axis 0; repeated indices are allowed.
Tensor index0(const Tensor& a, const std::vector<int64_t>& rows);
// [n0, ...] stacked from equally shaped tensors.
Tensor stack0(const std::vector<Tensor>& parts);

// 2-D or batched 3-D product with optional transposition of either operand.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
// x [..., in], weight [out, in], bias [out] (may be undefined) -> [..., out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
// x [B, C, H, W], weight [O, C, k, k], bias [O] (may be undefined)
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);
Tensor upsample_nearest2x(const Tensor& x);

// x [B, C, ...]; statistics per (sample, group); gamma/beta [C].
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, double eps = 1e-5);
// Normalizes the last axis; gamma/beta sized to it.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor softmax(const Tensor& x);

// x [B, C, ...] * scale[B, C] + shift[B, C], broadcast over trailing axes.
// Either modulation tensor may be undefined.
Tensor channel_affine(const Tensor& x, const Tensor& scale, const Tensor& shift);

// Mean squared difference over all elements.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace fsdm::ops

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "vivit/tensor.hpp"

// Primitive differentiable ops. Every function returns a fresh tensor,
// validates shapes/dtypes, checks the output for non-finite values, and
// records a backward rule on the active tape when an input requires grad.
namespace vivit::ops {

// [batch..., m, k] x [batch..., k, n] -> [batch..., m, n]; leading dims must
// match exactly. dA = dC.B^T, dB = A^T.dC.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor transpose_last2(const Tensor& x);

// Hyperrectangle crop: out[i...] = x[starts + i...].
Tensor slice(const Tensor& x, const std::vector<std::int64_t>& starts,
             const std::vector<std::int64_t>& sizes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor index_select(const Tensor& x, std::size_t axis, const std::vector<std::int64_t>& indices);
// [s...] -> [n, s...] by copying.
Tensor expand_leading(const Tensor& x, std::int64_t n);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// b.shape must be a trailing suffix of x.shape; b is broadcast over the
// leading axes (bias add, positional-embedding add).
Tensor add_broadcast(const Tensor& x, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

Tensor softmax(const Tensor& x);      // last axis, max-subtracted
Tensor log_softmax(const Tensor& x);  // last axis, stable
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);
Tensor gelu(const Tensor& x);  // tanh approximation

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);

// x[lead..., in] . w[in, out] + b[out]; composition of primitives.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace vivit::ops

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "swt/tensor.hpp"

// Differentiable operations. Broadcasting is limited to "trailing" forms
// where the smaller operand matches the trailing dimensions of the larger
// one (bias rows, per-feature scales, positional tables).
namespace swt {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

// y has the shape of x's trailing dims.
Tensor add_trailing(const Tensor& x, const Tensor& y);
Tensor mul_trailing(const Tensor& x, const Tensor& y);

Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);  // requires x > 0
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);   // requires x > 0
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);  // exact erf form
Tensor softplus(const Tensor& x);
Tensor log_sigmoid(const Tensor& x);

// 0.5 x^2 / beta for |x| <= beta, |x| - beta / 2 otherwise.
Tensor smooth_l1(const Tensor& x, double beta);

// ELU(x) + 1: x + 1 for x >= 0, exp(x) otherwise. Strictly positive.
Tensor elu_plus_one(const Tensor& x);

// max(x, floor). Gradient flows only where x >= floor. When counter is
// given, it is incremented by the number of clamped entries.
Tensor clamp_min(const Tensor& x, double floor, std::size_t* counter = nullptr);

// a: [..., k] (leading dims flattened), b: [k, n] -> [..., n].
Tensor matmul(const Tensor& a, const Tensor& b);
// a: [N, m, k], b: [N, k, n] -> [N, m, n].
Tensor bmm(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, std::size_t axis);
// Normalizes each last-axis vector to zero mean, unit (biased) variance.
Tensor layer_norm(const Tensor& x, double eps = 1e-5);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reduces the last axis: [..., n] -> [...].
Tensor sum_last(const Tensor& x);
Tensor mean_last(const Tensor& x);

// D[n, i, j] = ||a[n,i,:] - b[n,j,:]||^2 via the Gram expansion
// ||a||^2 + ||b||^2 - 2 a.b, clamped at 0.
Tensor pairwise_sqdist(const Tensor& a, const Tensor& b);

// x: [B, L, D], row: [D] -> [B, L+1, D] with row at position 0.
Tensor prepend_row(const Tensor& x, const Tensor& row);
// x viewed as [R, D]; rows with replace[r] != 0 become `row`.
Tensor replace_rows(const Tensor& x, const Tensor& row, std::span<const std::uint8_t> replace);
// x viewed as [R, D] -> [rows.size(), D].
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);

// x: [B, L, parts*H*d]; takes chunk `part` and lays heads out as [B*H, L, d].
Tensor split_heads(const Tensor& x, std::size_t parts, std::size_t part, std::size_t heads);
// x: [B*H, L, d] -> [B, L, H*d].
Tensor merge_heads(const Tensor& x, std::size_t heads);

// Mean softmax cross-entropy. logits: [B, C].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace swt

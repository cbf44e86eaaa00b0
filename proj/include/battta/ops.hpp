#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "battta/tensor.hpp"

// Differentiable operations. Each one records a Node when any input requires
// a gradient; shapes are checked eagerly and violations raise DimensionError.
namespace battta::ops {

// [m x k] . [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// x[n x d] + bias[d] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
// x * s where s is a one-element tensor (learnable logit scale).
Tensor mul_scalar(const Tensor& x, const Tensor& s);
Tensor exp(const Tensor& x);
Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// [n x d] -> [n]
Tensor sum_rows(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// Rows of x[n x d] selected by `index` (repeats allowed).
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);

// Mean of x[n x d] rows per group. `group[i]` in [0, groups) or -1 to skip the
// row. Empty groups yield zero rows.
Tensor segment_mean(const Tensor& x, std::span<const int> group, std::size_t groups);

// Row-wise normalisation over the last axis, then gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// exp(x_i / t) / sum_j exp(x_j / t) on a 1-D tensor.
Tensor softmax(const Tensor& x, double temperature);
// Row-wise softmax / log-softmax of x[n x c] / t.
Tensor softmax_rows(const Tensor& x, double temperature);
Tensor log_softmax_rows(const Tensor& x, double temperature);

// -sum_c p log p per row of p[n x c], with 0 log 0 = 0. -> [n]
Tensor entropy_rows(const Tensor& p);

// Cosine similarity of two 1-D tensors -> scalar.
Tensor cosine_sim(const Tensor& v, const Tensor& z);
// Rows divided by their L2 norm. A zero-norm row raises DegenerateInputError
// naming the row index.
Tensor l2_normalize_rows(const Tensor& x);
// Pairwise cosine similarity of a[n x d] rows against b[m x d] rows -> [n x m].
Tensor cosine_matrix(const Tensor& a, const Tensor& b);

// Multi-head self-attention over qkv[(batch*tokens) x 3w] laid out as
// [q | k | v] per row. Returns [(batch*tokens) x w].
Tensor self_attention(const Tensor& qkv, std::size_t batch, std::size_t tokens, std::size_t heads);

}  // namespace battta::ops

#pragma once

#include <span>
#include <vector>

#include "mhsum/num/tensor.hpp"

// Differentiable tensor operations. Every op computes eagerly and, when a
// Graph is active and some input requires a gradient, records its backward
// rule on that graph.
namespace mhsum::num {

inline constexpr double kCosineEps = 1e-12;

// Matrix products on 2-D tensors.
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]·[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]·[n,k]^T
Tensor transpose(const Tensor& a);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// x[m,n] + bias broadcast over rows; bias has n elements.
Tensor add_bias(const Tensor& x, const Tensor& bias);
/// Row m of x[m,n] multiplied by w[m]; w has m elements.
Tensor scale_rows(const Tensor& x, const Tensor& w);

Tensor sum(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& a);
/// tanh approximation; smooth everywhere, which keeps finite-difference
/// checks meaningful.
Tensor gelu(const Tensor& a);

/// Normalizes over the last dim, then applies gain and bias (each sized to
/// the last dim).
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Softmax along `axis`, max-subtracted.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Pairwise cosine similarity: out[i,j] = cos(a_i, b_j), denominator clamped
/// at kCosineEps.
Tensor cosine_rows(const Tensor& a, const Tensor& b);
/// Row-aligned cosine: out[i,0] = cos(a_i, b_i).
Tensor cosine_pairs(const Tensor& a, const Tensor& b);
/// Row-aligned dot product: out[i,0] = a_i · b_i.
Tensor dot_pairs(const Tensor& a, const Tensor& b);

/// Concatenation of 2-D tensors along axis 0 (rows) or 1 (cols).
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);

/// Gathers rows of table[V,B] for each id.
Tensor embed_lookup(const Tensor& table, std::span<const int> ids);

/// Mean of -log softmax(logits[t])[target[t]] over positions whose target
/// differs from `ignore_id`.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_id = -1);

}  // namespace mhsum::num

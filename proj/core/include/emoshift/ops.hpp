#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "emoshift/autograd.hpp"

// Differentiable primitives. Every op validates shapes eagerly (DimensionError), computes its
// forward value immediately and records a backward closure on the operands' tape.
namespace emoshift::ops {

/// A contiguous block of rows belonging to one sequence in a stacked batch.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

/// a[m x n] + bias[1 x n] broadcast over rows; the only broadcasting the engine allows.
template <typename T>
Var<T> add_row(Var<T> a, Var<T> bias);

template <typename T>
Var<T> scale(Var<T> a, T s);

/// Elementwise product.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

/// Sum of all entries as a [1 x 1] tensor.
template <typename T>
Var<T> sum(Var<T> a);

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5));

/// tanh approximation of GELU.
template <typename T>
Var<T> gelu(Var<T> x);

/// Rows of `table` selected by `ids`.
template <typename T>
Var<T> embedding(Var<T> table, std::span<const int> ids);

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts);

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end);

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end);

/// Row-wise softmax with max subtraction.
template <typename T>
Var<T> softmax_rows(Var<T> x);

/// Mean over rows with mask[r] of -log softmax(logits[r])[targets[r]]. Unmasked rows get exactly
/// zero gradient. Throws std::invalid_argument("no supervised positions") on an all-false mask.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets, std::span<const std::uint8_t> mask);

/// Multi-head causal self-attention over stacked sequences. `qkv` is [N x 3d] laid out as
/// [Q | K | V]; each segment attends only within itself and only to earlier-or-equal positions.
template <typename T>
Var<T> causal_attention(Var<T> qkv, std::span<const Segment> segments, std::size_t n_heads);

/// Inverted dropout; identity when rate == 0.
template <typename T>
Var<T> dropout(Var<T> x, double rate, std::mt19937_64& rng);

}  // namespace emoshift::ops

#pragma once

#include <cstddef>

// Raw row-major matrix kernels shared by the tape ops and the incremental decoder.
// Each output row is computed independently of every other row, so results for a row do not
// depend on how many rows are batched together.
namespace emoshift::kernels {

/// C[m x n] (+)= A[m x k] * B[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);

/// C[m x n] (+)= A[m x k] * B[n x k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);

/// C[k x n] (+)= A[m x k]^T * B[m x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate);

template <typename T>
void transpose(const T* a, T* out, std::size_t rows, std::size_t cols);

}  // namespace emoshift::kernels

namespace emoshift::kernels {

/// Normalizes one row: out = (x - mean) * rstd * gamma + beta. Optionally returns xhat and rstd.
template <typename T>
void layer_norm_row(const T* x, const T* gamma, const T* beta, std::size_t n, T eps, T* out, T* xhat, T* rstd);

template <typename T>
T gelu(T x);

template <typename T>
T gelu_grad(T x);

/// Causal attention for a single query row against `count` keys/values (positions 0..count-1).
/// Keys and values are read with the given row stride. Writes the `count` probabilities into
/// `probs` and the weighted value sum (dh wide) into `out`.
template <typename T>
void attention_row(const T* q, const T* keys, const T* values, std::size_t stride, std::size_t count, std::size_t dh,
                   T scale, T* probs, T* out);

}  // namespace emoshift::kernels

#include "emoshift/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace emoshift::kernels {

namespace {

// Accumulates an RB x width tile of C from rows of B, walking the shared dimension in order.
// A's element for tile row r and step p sits at a[r * a_row + p * a_step]. Every output element
// sees the same sequence of adds whatever RB is, so batching rows never changes a row's result.
template <typename T, std::size_t RB, std::size_t JB>
inline void tile(const T* a, std::size_t a_row, std::size_t a_step, const T* b, std::size_t ldb, T* c,
                 std::size_t ldc, std::size_t steps, std::size_t width) {
  T acc[RB][JB];
  if (width == JB) {
    for (std::size_t r = 0; r < RB; ++r)
      for (std::size_t j = 0; j < JB; ++j) acc[r][j] = c[r * ldc + j];
    for (std::size_t p = 0; p < steps; ++p) {
      const T* __restrict brow = b + p * ldb;
      for (std::size_t r = 0; r < RB; ++r) {
        const T av = a[r * a_row + p * a_step];
        for (std::size_t j = 0; j < JB; ++j) acc[r][j] += av * brow[j];
      }
    }
    for (std::size_t r = 0; r < RB; ++r)
      for (std::size_t j = 0; j < JB; ++j) c[r * ldc + j] = acc[r][j];
    return;
  }
  for (std::size_t r = 0; r < RB; ++r)
    for (std::size_t j = 0; j < width; ++j) acc[r][j] = c[r * ldc + j];
  for (std::size_t p = 0; p < steps; ++p) {
    const T* __restrict brow = b + p * ldb;
    for (std::size_t r = 0; r < RB; ++r) {
      const T av = a[r * a_row + p * a_step];
      for (std::size_t j = 0; j < width; ++j) acc[r][j] += av * brow[j];
    }
  }
  for (std::size_t r = 0; r < RB; ++r)
    for (std::size_t j = 0; j < width; ++j) c[r * ldc + j] = acc[r][j];
}

template <typename T>
constexpr std::size_t kTileCols = 128 / sizeof(T);
constexpr std::size_t kTileRows = 4;

template <typename T>
void tiled(const T* a, std::size_t a_row, std::size_t a_step, const T* b, T* c, std::size_t rows, std::size_t steps,
           std::size_t n) {
  constexpr std::size_t JB = kTileCols<T>;
  std::size_t i = 0;
  for (; i + kTileRows <= rows; i += kTileRows) {
    for (std::size_t j = 0; j < n; j += JB) {
      tile<T, kTileRows, JB>(a + i * a_row, a_row, a_step, b + j, n, c + i * n + j, n, steps, std::min(JB, n - j));
    }
  }
  for (; i < rows; ++i) {
    for (std::size_t j = 0; j < n; j += JB) {
      tile<T, 1, JB>(a + i * a_row, a_row, a_step, b + j, n, c + i * n + j, n, steps, std::min(JB, n - j));
    }
  }
}

}  // namespace

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  tiled(a, k, std::size_t{1}, b, c, m, k, n);
}

template <typename T>
void transpose(const T* a, T* out, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
  }
}

template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  std::vector<T> bt(k * n);
  transpose(b, bt.data(), n, k);
  gemm_nn(a, bt.data(), c, m, k, n, accumulate);
}

template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * n, T(0));
  // Row p of C is column p of A against B, so A is walked with a unit row offset and a k step.
  tiled(a, std::size_t{1}, k, b, c, k, m, n);
}

template <typename T>
void layer_norm_row(const T* x, const T* gamma, const T* beta, std::size_t n, T eps, T* out, T* xhat, T* rstd) {
  T mean = 0;
  for (std::size_t j = 0; j < n; ++j) mean += x[j];
  mean /= static_cast<T>(n);
  T var = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const T d = x[j] - mean;
    var += d * d;
  }
  var /= static_cast<T>(n);
  const T rs = T(1) / std::sqrt(var + eps);
  for (std::size_t j = 0; j < n; ++j) {
    const T xh = (x[j] - mean) * rs;
    if (xhat != nullptr) xhat[j] = xh;
    out[j] = xh * gamma[j] + beta[j];
  }
  if (rstd != nullptr) *rstd = rs;
}

namespace {
template <typename T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2/pi)
template <typename T>
constexpr T kGeluA = T(0.044715);
}  // namespace

template <typename T>
T gelu(T x) {
  const T u = kGeluC<T> * (x + kGeluA<T> * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  const T u = kGeluC<T> * (x + kGeluA<T> * x * x * x);
  const T th = std::tanh(u);
  const T du = kGeluC<T> * (T(1) + T(3) * kGeluA<T> * x * x);
  return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
}

template <typename T>
void attention_row(const T* q, const T* keys, const T* values, std::size_t stride, std::size_t count, std::size_t dh,
                   T scale, T* probs, T* out) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < count; ++j) {
    const T* kj = keys + j * stride;
    T s = 0;
    for (std::size_t d = 0; d < dh; ++d) s += q[d] * kj[d];
    s *= scale;
    probs[j] = s;
    mx = std::max(mx, s);
  }
  T z = 0;
  for (std::size_t j = 0; j < count; ++j) {
    probs[j] = std::exp(probs[j] - mx);
    z += probs[j];
  }
  for (std::size_t j = 0; j < count; ++j) probs[j] /= z;
  std::fill(out, out + dh, T(0));
  for (std::size_t j = 0; j < count; ++j) {
    const T* vj = values + j * stride;
    const T pj = probs[j];
    for (std::size_t d = 0; d < dh; ++d) out[d] += pj * vj[d];
  }
}

#define EMOSHIFT_INSTANTIATE_KERNELS(T)                                                                          \
  template void gemm_nn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool);                \
  template void gemm_nt<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool);                \
  template void gemm_tn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t, bool);                \
  template void transpose<T>(const T*, T*, std::size_t, std::size_t);                                           \
  template void layer_norm_row<T>(const T*, const T*, const T*, std::size_t, T, T*, T*, T*);                   \
  template T gelu<T>(T);                                                                                         \
  template T gelu_grad<T>(T);                                                                                    \
  template void attention_row<T>(const T*, const T*, const T*, std::size_t, std::size_t, std::size_t, T, T*, T*);

EMOSHIFT_INSTANTIATE_KERNELS(float)
EMOSHIFT_INSTANTIATE_KERNELS(double)

}  // namespace emoshift::kernels

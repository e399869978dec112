#include "emoshift/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "emoshift/kernels.hpp"

namespace emoshift {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += " x ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

namespace ops {
namespace {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <typename T>
void require_same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw std::logic_error("operands live on different tapes");
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void axpy(Tensor<T>& dst, const Tensor<T>& src, T s = T(1)) {
  T* d = dst.data();
  const T* x = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s * x[i];
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  require_matrix(A, "matmul");
  require_matrix(B, "matmul");
  if (A.cols() != B.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor<T> out = Tensor<T>::matrix(m, n);
  kernels::gemm_nn(A.data(), B.data(), out.data(), m, k, n, false);
  return a.tape->record(std::move(out), {a, b}, [a, b, m, k, n](const Tensor<T>& g, Tape<T>& tape) {
    if (auto* ga = tape.grad_sink(a)) kernels::gemm_nt(g.data(), tape.value(b).data(), ga->data(), m, n, k, true);
    if (auto* gb = tape.grad_sink(b)) kernels::gemm_tn(tape.value(a).data(), g.data(), gb->data(), m, k, n, true);
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  axpy(out, b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](const Tensor<T>& g, Tape<T>& tape) {
    if (auto* ga = tape.grad_sink(a)) axpy(*ga, g);
    if (auto* gb = tape.grad_sink(b)) axpy(*gb, g);
  });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> bias) {
  require_same_tape(a, bias);
  const auto& A = a.value();
  const auto& B = bias.value();
  require_matrix(A, "add_row");
  if (B.rank() != 2 || B.rows() != 1 || B.cols() != A.cols()) {
    throw DimensionError("add_row: bias " + shape_str(B.shape()) + " does not broadcast over " + shape_str(A.shape()));
  }
  Tensor<T> out = A;
  const std::size_t n = A.cols();
  for (std::size_t r = 0; r < A.rows(); ++r) {
    T* row = out.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += B[j];
  }
  return a.tape->record(std::move(out), {a, bias}, [a, bias, n](const Tensor<T>& g, Tape<T>& tape) {
    if (auto* ga = tape.grad_sink(a)) axpy(*ga, g);
    if (auto* gb = tape.grad_sink(bias)) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const T* row = g.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) (*gb)[j] += row[j];
      }
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v *= s;
  return a.tape->record(std::move(out), {a}, [a, s](const Tensor<T>& g, Tape<T>& tape) {
    if (auto* ga = tape.grad_sink(a)) axpy(*ga, g, s);
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  const auto& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](const Tensor<T>& g, Tape<T>& tape) {
    if (auto* ga = tape.grad_sink(a)) {
      const auto& B = tape.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * B[i];
    }
    if (auto* gb = tape.grad_sink(b)) {
      const auto& A = tape.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * A[i];
    }
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T s = 0;
  for (auto v : a.value().vec()) s += v;
  return a.tape->record(Tensor<T>::scalar(s), {a}, [a](const Tensor<T>& g, Tape<T>& tape) {
    if (auto* ga = tape.grad_sink(a)) {
      const T gv = g[0];
      for (auto& v : ga->vec()) v += gv;
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps) {
  require_same_tape(x, gamma);
  require_same_tape(x, beta);
  const auto& X = x.value();
  require_matrix(X, "layer_norm");
  const std::size_t m = X.rows(), n = X.cols();
  for (const auto* p : {&gamma.value(), &beta.value()}) {
    if (p->rank() != 2 || p->rows() != 1 || p->cols() != n) {
      throw DimensionError("layer_norm: gain/bias " + shape_str(p->shape()) + " incompatible with " + shape_str(X.shape()));
    }
  }
  Tensor<T> out = Tensor<T>::matrix(m, n);
  auto xhat = std::make_shared<std::vector<T>>(m * n);
  auto rstd = std::make_shared<std::vector<T>>(m);
  const T* g = gamma.value().data();
  const T* b = beta.value().data();
  for (std::size_t r = 0; r < m; ++r) {
    kernels::layer_norm_row(X.data() + r * n, g, b, n, eps, out.data() + r * n, xhat->data() + r * n, rstd->data() + r);
  }
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, xhat, rstd, m, n](const Tensor<T>& go, Tape<T>& tape) {
                          const T* gam = tape.value(gamma).data();
                          if (auto* gg = tape.grad_sink(gamma)) {
                            for (std::size_t r = 0; r < m; ++r) {
                              for (std::size_t j = 0; j < n; ++j) (*gg)[j] += go(r, j) * (*xhat)[r * n + j];
                            }
                          }
                          if (auto* gb = tape.grad_sink(beta)) {
                            for (std::size_t r = 0; r < m; ++r) {
                              for (std::size_t j = 0; j < n; ++j) (*gb)[j] += go(r, j);
                            }
                          }
                          if (auto* gx = tape.grad_sink(x)) {
                            std::vector<T> dxhat(n);
                            for (std::size_t r = 0; r < m; ++r) {
                              const T* xh = xhat->data() + r * n;
                              T mean_d = 0, mean_dx = 0;
                              for (std::size_t j = 0; j < n; ++j) {
                                dxhat[j] = go(r, j) * gam[j];
                                mean_d += dxhat[j];
                                mean_dx += dxhat[j] * xh[j];
                              }
                              mean_d /= static_cast<T>(n);
                              mean_dx /= static_cast<T>(n);
                              const T rs = (*rstd)[r];
                              for (std::size_t j = 0; j < n; ++j) (*gx)(r, j) += rs * (dxhat[j] - mean_d - xh[j] * mean_dx);
                            }
                          }
                        });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v = kernels::gelu(v);
  return x.tape->record(std::move(out), {x}, [x](const Tensor<T>& g, Tape<T>& tape) {
    if (auto* gx = tape.grad_sink(x)) {
      const auto& X = tape.value(x);
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * kernels::gelu_grad(X[i]);
    }
  });
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const int> ids) {
  const auto& W = table.value();
  require_matrix(W, "embedding");
  const std::size_t n = W.cols();
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  Tensor<T> out = Tensor<T>::matrix(ids.size(), n);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= W.rows()) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[r]) + " outside table of " +
                              std::to_string(W.rows()) + " rows");
    }
    std::copy_n(W.data() + static_cast<std::size_t>(ids[r]) * n, n, out.data() + r * n);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape->record(std::move(out), {table}, [table, idv = std::move(idv), n](const Tensor<T>& g, Tape<T>& tape) {
    if (auto* gt = tape.grad_sink(table)) {
      for (std::size_t r = 0; r < idv.size(); ++r) {
        T* dst = gt->data() + static_cast<std::size_t>(idv[r]) * n;
        const T* src = g.data() + r * n;
        for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
      }
    }
  });
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Tape<T>* tape = parts[0].tape;
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.tape != tape) throw std::logic_error("operands live on different tapes");
    require_matrix(p.value(), "concat_rows");
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    m += p.rows();
  }
  Tensor<T> out = Tensor<T>::matrix(m, n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().vec().begin(), p.value().vec().end(), out.data() + off * n);
    off += p.rows();
  }
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  return tape->record(std::move(out), parts, [inputs = std::move(inputs), n](const Tensor<T>& g, Tape<T>& tp) {
    std::size_t off = 0;
    for (const auto& p : inputs) {
      const std::size_t rows = p.rows();
      if (auto* gp = tp.grad_sink(p)) {
        for (std::size_t i = 0; i < rows * n; ++i) (*gp)[i] += g[off * n + i];
      }
      off += rows;
    }
  });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end) {
  const auto& A = a.value();
  require_matrix(A, "slice_rows");
  if (begin >= end || end > A.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                         shape_str(A.shape()));
  }
  const std::size_t n = A.cols();
  Tensor<T> out({end - begin, n}, std::vector<T>(A.data() + begin * n, A.data() + end * n));
  return a.tape->record(std::move(out), {a}, [a, begin, n](const Tensor<T>& g, Tape<T>& tape) {
    if (auto* ga = tape.grad_sink(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[begin * n + i] += g[i];
    }
  });
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end) {
  const auto& A = a.value();
  require_matrix(A, "slice_cols");
  if (begin >= end || end > A.cols()) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                         shape_str(A.shape()));
  }
  const std::size_t m = A.rows(), n = A.cols(), w = end - begin;
  Tensor<T> out = Tensor<T>::matrix(m, w);
  for (std::size_t r = 0; r < m; ++r) std::copy_n(A.data() + r * n + begin, w, out.data() + r * w);
  return a.tape->record(std::move(out), {a}, [a, begin, m, n, w](const Tensor<T>& g, Tape<T>& tape) {
    if (auto* ga = tape.grad_sink(a)) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < w; ++j) (*ga)[r * n + begin + j] += g[r * w + j];
      }
    }
  });
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  const auto& X = x.value();
  require_matrix(X, "softmax_rows");
  const std::size_t m = X.rows(), n = X.cols();
  Tensor<T> out = X;
  for (std::size_t r = 0; r < m; ++r) {
    T* row = out.data() + r * n;
    const T mx = *std::max_element(row, row + n);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= z;
  }
  Tensor<T> saved = out;
  return x.tape->record(std::move(out), {x}, [x, y = std::move(saved), m, n](const Tensor<T>& g, Tape<T>& tape) {
    if (auto* gx = tape.grad_sink(x)) {
      for (std::size_t r = 0; r < m; ++r) {
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += g(r, j) * y(r, j);
        for (std::size_t j = 0; j < n; ++j) (*gx)(r, j) += y(r, j) * (g(r, j) - dot);
      }
    }
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  const auto& L = logits.value();
  require_matrix(L, "cross_entropy");
  const std::size_t m = L.rows(), v = L.cols();
  if (targets.size() != m || mask.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets and " +
                         std::to_string(mask.size()) + " mask entries for logits " + shape_str(L.shape()));
  }
  std::size_t count = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(targets[r]) + " outside vocabulary of " +
                              std::to_string(v));
    }
    ++count;
  }
  if (count == 0) throw std::invalid_argument("no supervised positions");

  auto probs = std::make_shared<std::vector<T>>(m * v, T(0));
  T total = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (!mask[r]) continue;
    const T* row = L.data() + r * v;
    T* p = probs->data() + r * v;
    const T mx = *std::max_element(row, row + v);
    T z = 0;
    for (std::size_t j = 0; j < v; ++j) {
      p[j] = std::exp(row[j] - mx);
      z += p[j];
    }
    for (std::size_t j = 0; j < v; ++j) p[j] /= z;
    total += std::log(z) + mx - row[targets[r]];
  }
  const T inv = T(1) / static_cast<T>(count);
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> msk(mask.begin(), mask.end());
  return logits.tape->record(
      Tensor<T>::scalar(total * inv), {logits},
      [logits, probs, tgt = std::move(tgt), msk = std::move(msk), inv, v](const Tensor<T>& g, Tape<T>& tape) {
        auto* gl = tape.grad_sink(logits);
        if (gl == nullptr) return;
        const T s = g[0] * inv;
        for (std::size_t r = 0; r < msk.size(); ++r) {
          if (!msk[r]) continue;
          const T* p = probs->data() + r * v;
          T* dst = gl->data() + r * v;
          for (std::size_t j = 0; j < v; ++j) dst[j] += s * p[j];
          dst[tgt[r]] -= s;
        }
      });
}

template <typename T>
Var<T> causal_attention(Var<T> qkv, std::span<const Segment> segments, std::size_t n_heads) {
  const auto& X = qkv.value();
  require_matrix(X, "causal_attention");
  if (n_heads == 0 || X.cols() % (3 * n_heads) != 0) {
    throw DimensionError("causal_attention: width of " + shape_str(X.shape()) + " is not 3 * heads * head_dim for " +
                         std::to_string(n_heads) + " heads");
  }
  const std::size_t stride = X.cols();
  const std::size_t d = stride / 3;
  const std::size_t dh = d / n_heads;
  const T sc = T(1) / std::sqrt(static_cast<T>(dh));
  std::size_t expect = 0;
  std::size_t prob_size = 0;
  for (const auto& s : segments) {
    if (s.offset != expect || s.length == 0) throw DimensionError("causal_attention: segments must tile the rows");
    expect += s.length;
    prob_size += n_heads * s.length * (s.length + 1) / 2;
  }
  if (expect != X.rows()) {
    throw DimensionError("causal_attention: segments cover " + std::to_string(expect) + " rows of " + shape_str(X.shape()));
  }

  Tensor<T> out = Tensor<T>::matrix(X.rows(), d);
  auto probs = std::make_shared<std::vector<T>>(prob_size);
  std::size_t pp = 0;
  for (const auto& s : segments) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const T* base = X.data() + s.offset * stride;
      for (std::size_t t = 0; t < s.length; ++t) {
        kernels::attention_row(base + t * stride + h * dh, base + d + h * dh, base + 2 * d + h * dh, stride, t + 1, dh, sc,
                               probs->data() + pp, out.data() + (s.offset + t) * d + h * dh);
        pp += t + 1;
      }
    }
  }

  std::vector<Segment> segs(segments.begin(), segments.end());
  return qkv.tape->record(
      std::move(out), {qkv}, [qkv, probs, segs = std::move(segs), n_heads, d, dh, stride, sc](const Tensor<T>& g, Tape<T>& tape) {
        auto* gx = tape.grad_sink(qkv);
        if (gx == nullptr) return;
        const auto& X = tape.value(qkv);
        std::vector<T> dp;
        std::size_t pp = 0;
        for (const auto& s : segs) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const T* base = X.data() + s.offset * stride;
            T* gbase = gx->data() + s.offset * stride;
            for (std::size_t t = 0; t < s.length; ++t) {
              const T* p = probs->data() + pp;
              const T* go = g.data() + (s.offset + t) * d + h * dh;
              const T* q = base + t * stride + h * dh;
              dp.assign(t + 1, T(0));
              T dot = 0;
              for (std::size_t j = 0; j <= t; ++j) {
                const T* vj = base + j * stride + 2 * d + h * dh;
                T acc = 0;
                for (std::size_t e = 0; e < dh; ++e) acc += go[e] * vj[e];
                dp[j] = acc;
                dot += acc * p[j];
                T* gv = gbase + j * stride + 2 * d + h * dh;
                for (std::size_t e = 0; e < dh; ++e) gv[e] += p[j] * go[e];
              }
              T* gq = gbase + t * stride + h * dh;
              for (std::size_t j = 0; j <= t; ++j) {
                const T ds = p[j] * (dp[j] - dot) * sc;
                const T* kj = base + j * stride + d + h * dh;
                T* gk = gbase + j * stride + d + h * dh;
                for (std::size_t e = 0; e < dh; ++e) {
                  gq[e] += ds * kj[e];
                  gk[e] += ds * q[e];
                }
              }
              pp += t + 1;
            }
          }
        }
      });
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout rate must be < 1");
  const T keep_scale = T(1) / static_cast<T>(1.0 - rate);
  std::bernoulli_distribution keep(1.0 - rate);
  auto mask = std::make_shared<std::vector<T>>(x.value().size());
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = keep(rng) ? keep_scale : T(0);
    out[i] *= (*mask)[i];
  }
  return x.tape->record(std::move(out), {x}, [x, mask](const Tensor<T>& g, Tape<T>& tape) {
    if (auto* gx = tape.grad_sink(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (*mask)[i];
    }
  });
}

#define EMOSHIFT_INSTANTIATE_OPS(T)                                                                   \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                          \
  template Var<T> add<T>(Var<T>, Var<T>);                                                             \
  template Var<T> add_row<T>(Var<T>, Var<T>);                                                         \
  template Var<T> scale<T>(Var<T>, T);                                                                \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                             \
  template Var<T> sum<T>(Var<T>);                                                                     \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, T);                                           \
  template Var<T> gelu<T>(Var<T>);                                                                    \
  template Var<T> embedding<T>(Var<T>, std::span<const int>);                                         \
  template Var<T> concat_rows<T>(std::span<const Var<T>>);                                            \
  template Var<T> slice_rows<T>(Var<T>, std::size_t, std::size_t);                                    \
  template Var<T> slice_cols<T>(Var<T>, std::size_t, std::size_t);                                    \
  template Var<T> softmax_rows<T>(Var<T>);                                                            \
  template Var<T> cross_entropy<T>(Var<T>, std::span<const int>, std::span<const std::uint8_t>);      \
  template Var<T> causal_attention<T>(Var<T>, std::span<const Segment>, std::size_t);                 \
  template Var<T> dropout<T>(Var<T>, double, std::mt19937_64&);

EMOSHIFT_INSTANTIATE_OPS(float)
EMOSHIFT_INSTANTIATE_OPS(double)

}  // namespace ops
}  // namespace emoshift

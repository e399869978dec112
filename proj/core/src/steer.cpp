#include "emoshift/steer.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "emoshift/kernels.hpp"
#include "emoshift/model.hpp"
#include "emoshift/rng.hpp"

namespace emoshift {

template <typename T>
std::vector<Parameter<T>*> SteerBank<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& p : projections) out.push_back(&p);
  return out;
}

template <typename T>
void SteerBank<T>::set_trainable(bool on) {
  for (auto& p : projections) p.trainable = on;
}

template <typename T>
SteerBank<T> init_steer(const ModelConfig& config, double epsilon, SteerInit mode, double sigma, std::uint64_t seed) {
  if (!(epsilon > 0)) throw std::invalid_argument("steering epsilon must be positive");
  if (mode == SteerInit::kGaussian && !(sigma > 0)) throw std::invalid_argument("gaussian steering init needs sigma > 0");
  SteerBank<T> bank;
  bank.epsilon = epsilon;
  const std::size_t d = config.d_model;
  for (std::size_t e = 0; e < config.n_emotions; ++e) {
    Tensor<T> w = Tensor<T>::matrix(d, d);
    if (mode == SteerInit::kGaussian) {
      auto rng = make_rng(seed, "steer-init", e);
      for (auto& v : w.vec()) v = static_cast<T>(sigma * standard_normal(rng));
    }
    bank.projections.emplace_back("steer.W." + std::to_string(e), std::move(w));
  }
  return bank;
}

template <typename T>
std::size_t steer_param_count(const SteerBank<T>& bank) {
  std::size_t n = 0;
  for (const auto& p : bank.projections) n += p.value.size();
  return n;
}

template <typename T>
T steer_coefficient(const SteerBank<T>& bank, T alpha) {
  return static_cast<T>(alpha * static_cast<T>(bank.epsilon));
}

template <typename T>
void steer_row(const T* h, const Tensor<T>& projection, T coef, T* scratch, T* out) {
  const std::size_t d = projection.rows();
  kernels::gemm_nn(h, projection.data(), scratch, 1, d, d, false);
  for (std::size_t j = 0; j < d; ++j) out[j] = h[j] + coef * scratch[j];
}

template <typename T>
Var<T> steer_rows(Var<T> h, std::span<const SteerRows> rows, T alpha, SteerBank<T>& bank) {
  if (alpha < T(0)) throw std::invalid_argument("steering gain must be >= 0, got " + std::to_string(alpha));
  const auto& H = h.value();
  const std::size_t d = bank.d_model();
  if (H.rank() != 2 || H.cols() != d) {
    throw DimensionError("steer: hidden states " + shape_str(H.shape()) + " do not match steering width " +
                         std::to_string(d));
  }
  for (const auto& r : rows) {
    if (r.emotion < 0 || static_cast<std::size_t>(r.emotion) >= bank.n_emotions()) {
      throw std::out_of_range("steer: emotion id " + std::to_string(r.emotion) + " outside bank of " +
                              std::to_string(bank.n_emotions()));
    }
    if (r.begin > r.end || r.end > H.rows()) throw DimensionError("steer: row range outside " + shape_str(H.shape()));
  }

  Tape<T>& tape = *h.tape;
  std::vector<Var<T>> leaves(bank.n_emotions());
  std::vector<std::uint8_t> used(bank.n_emotions(), 0);
  std::vector<Var<T>> inputs{h};
  for (const auto& r : rows) {
    if (!used[r.emotion]) {
      used[r.emotion] = 1;
      leaves[r.emotion] = tape.param(bank.projections[r.emotion]);
      inputs.push_back(leaves[r.emotion]);
    }
  }

  const T coef = steer_coefficient(bank, alpha);
  Tensor<T> out = H;
  std::vector<T> v;
  for (const auto& r : rows) {
    const std::size_t m = r.end - r.begin;
    if (m == 0) continue;
    v.resize(m * d);
    kernels::gemm_nn(H.data() + r.begin * d, bank.projections[r.emotion].value.data(), v.data(), m, d, d, false);
    T* o = out.data() + r.begin * d;
    const T* hp = H.data() + r.begin * d;
    for (std::size_t i = 0; i < m * d; ++i) o[i] = hp[i] + coef * v[i];
  }

  std::vector<SteerRows> rv(rows.begin(), rows.end());
  return tape.record(std::move(out), std::span<const Var<T>>(inputs),
                     [h, leaves, rv = std::move(rv), coef, d](const Tensor<T>& g, Tape<T>& tp) {
                       const auto& H = tp.value(h);
                       auto* gh = tp.grad_sink(h);
                       if (gh != nullptr) {
                         for (std::size_t i = 0; i < g.size(); ++i) (*gh)[i] += g[i];
                       }
                       std::vector<T> scaled;
                       for (const auto& r : rv) {
                         const std::size_t m = r.end - r.begin;
                         if (m == 0) continue;
                         scaled.assign(g.data() + r.begin * d, g.data() + r.end * d);
                         for (auto& s : scaled) s *= coef;
                         const Var<T> w = leaves[r.emotion];
                         if (gh != nullptr) {
                           kernels::gemm_nt(scaled.data(), tp.value(w).data(), gh->data() + r.begin * d, m, d, d, true);
                         }
                         if (auto* gw = tp.grad_sink(w)) {
                           kernels::gemm_tn(H.data() + r.begin * d, scaled.data(), gw->data(), m, d, d, true);
                         }
                       }
                     });
}

template <typename T>
Var<T> steer(Var<T> h, int e, T alpha, SteerBank<T>& bank) {
  const SteerRows all{0, h.rows(), e};
  return steer_rows(h, std::span<const SteerRows>(&all, 1), alpha, bank);
}

#define EMOSHIFT_INSTANTIATE_STEER(T)                                                                       \
  template struct SteerBank<T>;                                                                             \
  template SteerBank<T> init_steer<T>(const ModelConfig&, double, SteerInit, double, std::uint64_t);         \
  template std::size_t steer_param_count<T>(const SteerBank<T>&);                                           \
  template T steer_coefficient<T>(const SteerBank<T>&, T);                                                  \
  template void steer_row<T>(const T*, const Tensor<T>&, T, T*, T*);                                        \
  template Var<T> steer_rows<T>(Var<T>, std::span<const SteerRows>, T, SteerBank<T>&);                      \
  template Var<T> steer<T>(Var<T>, int, T, SteerBank<T>&);

EMOSHIFT_INSTANTIATE_STEER(float)
EMOSHIFT_INSTANTIATE_STEER(double)

}  // namespace emoshift

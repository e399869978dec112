#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "emoshift/autograd.hpp"

namespace emoshift {

struct ModelConfig;

/// Per-emotion steering projections. For hidden state h and emotion e the steered state is
///
///     h' = h + alpha * epsilon * (h W_e)
///
/// with alpha fixed at 1 during training and used as an intensity gain at inference.
/// One d x d matrix per emotion, neutral included.
template <typename T>
struct SteerBank {
  std::vector<Parameter<T>> projections;  // named "steer.W.<e>"
  double epsilon = 0.001;

  std::size_t n_emotions() const { return projections.size(); }
  std::size_t d_model() const { return projections.empty() ? 0 : projections.front().value.rows(); }
  std::vector<Parameter<T>*> parameters();
  void set_trainable(bool on);
};

enum class SteerInit { kZeros, kGaussian };

/// Builds a bank for `config`. Gaussian mode draws N(0, sigma^2) entries from `seed`;
/// zeros mode reproduces the unsteered model exactly.
template <typename T>
SteerBank<T> init_steer(const ModelConfig& config, double epsilon, SteerInit mode, double sigma = 0.02,
                        std::uint64_t seed = 0);

/// E * d^2.
template <typename T>
std::size_t steer_param_count(const SteerBank<T>& bank);

/// Row range [begin, end) of a stacked hidden-state matrix steered toward `emotion`.
struct SteerRows {
  std::size_t begin = 0;
  std::size_t end = 0;
  int emotion = 0;
};

/// Steers the listed row ranges of `h` (all other rows pass through untouched). Differentiable
/// w.r.t. both `h` and the bank's projections. Throws std::out_of_range for an unknown emotion
/// and std::invalid_argument for a negative gain.
template <typename T>
Var<T> steer_rows(Var<T> h, std::span<const SteerRows> rows, T alpha, SteerBank<T>& bank);

/// Steers every row of `h` toward emotion `e`.
template <typename T>
Var<T> steer(Var<T> h, int e, T alpha, SteerBank<T>& bank);

/// Tape-free single-row form used by the incremental decoder; arithmetic matches steer_rows.
/// `scratch` must hold d values.
template <typename T>
void steer_row(const T* h, const Tensor<T>& projection, T coef, T* scratch, T* out);

/// alpha * epsilon rounded to the working precision, shared by every steering path.
template <typename T>
T steer_coefficient(const SteerBank<T>& bank, T alpha);

}  // namespace emoshift

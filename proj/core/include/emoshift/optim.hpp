#pragma once

#include <stdexcept>
#include <vector>

#include "emoshift/autograd.hpp"

namespace emoshift {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam with decoupled weight decay. Only trainable parameters are touched.
template <typename T>
class AdamW {
 public:
  AdamW(AdamWConfig config, std::vector<Parameter<T>*> params);

  /// One update from the parameters' current gradients. Gradients are validated for all
  /// parameters before any buffer changes.
  void step();

  std::size_t steps() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  const Tensor<T>& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor<T>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  AdamWConfig config_;
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
  std::size_t step_ = 0;
};

/// Rescales gradients so their global L2 norm is at most `max_norm`; returns the pre-clip norm.
template <typename T>
double clip_grad_norm(const std::vector<Parameter<T>*>& params, double max_norm);

}  // namespace emoshift

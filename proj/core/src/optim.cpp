#include "emoshift/optim.hpp"

#include <cmath>

namespace emoshift {

template <typename T>
AdamW<T>::AdamW(AdamWConfig config, std::vector<Parameter<T>*> params) : config_(config) {
  for (auto* p : params) {
    if (p->trainable) params_.push_back(p);
  }
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

template <typename T>
void AdamW<T>::step() {
  for (auto* p : params_) {
    for (auto g : p->grad.vec()) {
      if (!std::isfinite(g)) throw NonFiniteGradient("non-finite gradient in parameter '" + p->name + "'");
    }
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double lr = config_.learning_rate;
  const double decay = 1.0 - lr * config_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& w = params_[i]->value.vec();
    const auto& g = params_[i]->grad.vec();
    auto& m = m_[i].vec();
    auto& v = v_[i].vec();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = (mk / c1) / (std::sqrt(vk / c2) + config_.eps);
      w[k] = static_cast<T>(static_cast<double>(w[k]) * decay - lr * update);
    }
  }
}

template <typename T>
double clip_grad_norm(const std::vector<Parameter<T>*>& params, double max_norm) {
  double sq = 0;
  for (const auto* p : params) {
    if (!p->trainable) continue;
    for (auto g : p->grad.vec()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0) {
    const double s = max_norm / norm;
    for (auto* p : params) {
      if (!p->trainable) continue;
      for (auto& g : p->grad.vec()) g = static_cast<T>(g * s);
    }
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm<float>(const std::vector<Parameter<float>*>&, double);
template double clip_grad_norm<double>(const std::vector<Parameter<double>*>&, double);

}  // namespace emoshift

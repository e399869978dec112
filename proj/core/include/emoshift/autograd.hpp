#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>

#include "emoshift/tensor.hpp"

namespace emoshift {

/// A named trainable buffer. Gradients accumulate into `grad` across backward passes until
/// `zero_grad` is called; frozen parameters never receive gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; invalid once the tape is cleared.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::uint32_t id = 0;
  std::uint32_t generation = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
};

/// Records operations in execution order and replays them in reverse to accumulate gradients.
///
/// Nodes are appended by `record`; a node requires grad when any of its inputs does (or when it is
/// a trainable parameter leaf). Nodes that do not require grad keep their value but no backward
/// closure, so frozen sub-graphs cost nothing on the backward pass.
template <typename T>
class Tape {
 public:
  /// Receives the output gradient; writes input contributions through `grad_sink`.
  using BackwardFn = std::function<void(const Tensor<T>& out_grad, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}); }

  /// Leaf for a parameter. The parameter must outlive the tape's next backward/clear.
  Var<T> param(Parameter<T>& p) {
    const bool rg = p.trainable && grad_enabled_;
    return push(p.value, rg, rg ? &p : nullptr, {});
  }

  /// Records a derived value. `backward` is dropped when no input requires grad.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(backward));
  }

  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn backward) {
    bool rg = false;
    for (const auto& in : inputs) {
      check(in);
      rg = rg || nodes_[in.id].requires_grad;
    }
    rg = rg && grad_enabled_;
    return push(std::move(value), rg, nullptr, rg ? std::move(backward) : BackwardFn{});
  }

  const Tensor<T>& value(Var<T> v) const {
    check(v);
    return nodes_[v.id].value;
  }

  bool requires_grad(Var<T> v) const {
    check(v);
    return nodes_[v.id].requires_grad;
  }

  /// Gradient accumulator for `v` during backward, or nullptr when `v` needs none.
  Tensor<T>* grad_sink(Var<T> v) {
    check(v);
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
    return &n.grad;
  }

  /// Gradient of the last backward pass w.r.t. `v`; all zeros when `v` was off the loss path.
  /// Only valid between `backward(..., keep=true)` and `clear()`.
  Tensor<T> grad(Var<T> v) const {
    check(v);
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
  }

  /// Seeds d(loss)/d(loss) = 1 and replays recorded nodes in reverse order, accumulating into
  /// parameter gradients. Clears the tape unless `keep` is set.
  void backward(Var<T> loss, bool keep = false) {
    check(loss);
    if (nodes_[loss.id].value.size() != 1) {
      throw DimensionError("backward() needs a scalar loss, got shape " + shape_str(nodes_[loss.id].value.shape()));
    }
    if (nodes_[loss.id].requires_grad) {
      grad_sink(loss)->fill(T(1));
      for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(n.grad, *this);
        if (n.param != nullptr) {
          auto& pg = n.param->grad;
          for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
        }
      }
    }
    if (!keep) clear();
  }

  void clear() {
    nodes_.clear();
    ++generation_;
  }

  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool rg, Parameter<T>* p, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<T>{}, rg, p, std::move(fn)});
    return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1), generation_};
  }

  void check(Var<T> v) const {
    if (v.tape != this || v.generation != generation_ || v.id >= nodes_.size()) {
      throw std::logic_error("tensor is not recorded on this tape");
    }
  }

  std::deque<Node> nodes_;
  std::uint32_t generation_ = 0;
  bool grad_enabled_ = true;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(*this);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape->requires_grad(*this);
}

/// Disables gradient recording on a tape for the guard's lifetime.
template <typename T>
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape<T>& tape) : tape_(tape), prev_(tape.grad_enabled()) { tape_.set_grad_enabled(false); }
  ~NoGradGuard() { tape_.set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape<T>& tape_;
  bool prev_;
};

}  // namespace emoshift

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "clisa/numcore/tensor.hpp"

namespace clisa {

template <Scalar T>
class Tape;

/// Handle to a value recorded on a tape.
template <Scalar T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t rank() const { return value().rank(); }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in execution order, so every node's inputs precede
/// it and a single reverse sweep visits each node once. A tape belongs to one thread.
template <Scalar T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    return push(std::move(value), requires_grad, {});
  }

  /// Registers a model parameter as a differentiable leaf. The same parameter bound twice
  /// returns the existing node; a tensor at a reused address with different storage is rebound.
  Var<T> param(const Tensor<T>& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) {
      if (it->second.storage == p.ptr() && it->second.size == p.size()) return Var<T>(this, it->second.id);
      bound_.erase(it);
    }
    Var<T> v = push(p, params_require_grad_, {});
    bound_.emplace(&p, Binding{v.id(), p.ptr(), p.size()});
    return v;
  }

  /// Whether param() leaves take part in differentiation (off for inference and input attacks).
  void set_params_require_grad(bool on) { params_require_grad_ = on; }

  /// Records an op result. The backward closure only runs when some input requires grad.
  Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, Backward fn) {
    bool rg = false;
    for (auto i : inputs) rg = rg || nodes_[i].requires_grad;
    if (!rg) return push(std::move(value), false, {});
    Var<T> v = push(std::move(value), true, std::move(inputs));
    nodes_.back().backward = std::move(fn);
    return v;
  }

  void backward(Var<T> loss) {
    if (loss.value().size() != 1)
      throw ContractError("backward() requires a scalar loss, got shape " +
                          shape_str(loss.shape()));
    backward(loss, Tensor<T>(loss.shape(), T{1}));
  }

  /// Vector-Jacobian product: propagates `seed` from `out` to every reachable leaf.
  void backward(Var<T> out, const Tensor<T>& seed) {
    if (nodes_.empty()) throw ContractError("backward() on an empty tape");
    if (seed.shape() != out.shape())
      throw DimensionError("seed shape " + shape_str(seed.shape()) + " vs output " +
                           shape_str(out.shape()));
    zero_grad();
    if (!nodes_[out.id()].requires_grad) return;
    nodes_[out.id()].grad = seed;
    nodes_[out.id()].has_grad = true;
    for (std::size_t i = out.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || !n.has_grad) continue;
      n.backward(*this, i);
    }
  }

  void zero_grad() {
    for (auto& n : nodes_) {
      n.grad = Tensor<T>();
      n.has_grad = false;
    }
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor<T>& grad(std::size_t id) const { return nodes_[id].grad; }

  /// Gradient buffer of node `id`, allocated as zeros on first use.
  Tensor<T>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor<T>::zeros(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Gradient of a leaf or intermediate; zeros when nothing flowed into it.
  Tensor<T> grad_of(Var<T> v) const {
    const Node& n = nodes_[v.id()];
    return n.has_grad ? n.grad : Tensor<T>::zeros(n.value.shape());
  }

  /// Gradient of a bound parameter; zeros when the parameter did not take part.
  Tensor<T> grad_of_param(const Tensor<T>& p) const {
    auto it = bound_.find(&p);
    if (it == bound_.end()) return Tensor<T>::zeros(p.shape());
    return grad_of(Var<T>(const_cast<Tape*>(this), it->second.id));
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backward backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, std::vector<std::size_t> inputs) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.inputs = std::move(inputs);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;  // references to values stay valid as the tape grows
  struct Binding {
    std::size_t id;
    const T* storage;
    std::size_t size;
  };
  std::unordered_map<const Tensor<T>*, Binding> bound_;
  bool params_require_grad_ = true;
};

template <Scalar T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <Scalar T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

}  // namespace clisa

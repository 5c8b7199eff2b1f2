#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mmfusion/tensor.hpp"

namespace mmfusion {

template <typename T>
class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  using value_type = T;

  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;
  std::span<const T> values() const;
  bool requires_grad() const;
  // Copies the current value out of the tape.
  Tensor<T> tensor() const;
  T item() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of executed primitives for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so every node's parents precede it.
/// A tape supports exactly one backward pass. With gradients disabled the tape
/// only stores values, which is what evaluation uses.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Leaf holding a copy of `value`; never receives a gradient.
  Var<T> constant(Tensor<T> value);
  Var<T> constant(Shape shape, std::vector<T> values);

  // Leaf viewing `tensor` without copying. When the tensor requires grad and
  // the tape records gradients, backward() accumulates into tensor.grad().
  // The tensor must outlive the tape and must not be resized while bound.
  Var<T> bind(const Tensor<T>& tensor);

  // Appends a primitive's result. `backward` reads the node's gradient and
  // accumulates into parents that require grad. It is dropped when no parent
  // requires grad or gradients are disabled.
  Var<T> record(Shape shape, std::vector<T> values, std::vector<std::size_t> parents,
                BackwardFn backward);

  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  std::span<const T> values(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }

  // Gradient slot of a node, allocated as zeros on first access.
  std::span<T> grad(std::size_t id);

  // Reverse sweep from a scalar loss. Consumes the tape.
  void backward(Var<T> loss);

 private:
  struct Node {
    Shape shape;
    std::vector<T> owned;
    const Tensor<T>* bound = nullptr;
    std::vector<T> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool consumed_ = false;
};

extern template class Var<float>;
extern template class Var<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mmfusion

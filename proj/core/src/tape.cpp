#include "mmfusion/tape.hpp"

#include <algorithm>

#include "mmfusion/error.hpp"

namespace mmfusion {

template <typename T>
const Shape& Var<T>::shape() const {
  return tape_->shape(id_);
}

template <typename T>
std::size_t Var<T>::size() const {
  return shape_size(shape());
}

template <typename T>
std::size_t Var<T>::rows() const {
  const auto& s = shape();
  return s.size() < 2 ? 1 : shape_size(s) / s.back();
}

template <typename T>
std::size_t Var<T>::cols() const {
  const auto& s = shape();
  return s.empty() ? 1 : s.back();
}

template <typename T>
std::span<const T> Var<T>::values() const {
  return tape_->values(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

template <typename T>
Tensor<T> Var<T>::tensor() const {
  auto v = values();
  return Tensor<T>(shape(), std::vector<T>(v.begin(), v.end()));
}

template <typename T>
T Var<T>::item() const {
  if (size() != 1) fail(ErrorKind::dimension, "item() on non-scalar " + shape_string(shape()));
  return values()[0];
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node node;
  node.shape = value.shape();
  node.owned = std::move(value.storage());
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Shape shape, std::vector<T> values) {
  return constant(Tensor<T>(std::move(shape), std::move(values)));
}

template <typename T>
Var<T> Tape<T>::bind(const Tensor<T>& tensor) {
  Node node;
  node.shape = tensor.shape();
  node.bound = &tensor;
  node.requires_grad = grad_enabled_ && tensor.requires_grad();
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Shape shape, std::vector<T> values, std::vector<std::size_t> parents,
                       BackwardFn backward) {
  if (shape_size(shape) != values.size()) {
    fail(ErrorKind::dimension, "recorded value does not match shape " + shape_string(shape));
  }
  const std::size_t id = nodes_.size();
  Node node;
  node.shape = std::move(shape);
  node.owned = std::move(values);
  bool needs_grad = false;
  for (auto p : parents) {
    if (p >= id) fail(ErrorKind::usage, "tape parent recorded after child");
    needs_grad = needs_grad || nodes_[p].requires_grad;
  }
  node.requires_grad = grad_enabled_ && needs_grad;
  if (node.requires_grad) {
    node.parents = std::move(parents);
    node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var<T>(this, id);
}

template <typename T>
std::span<const T> Tape<T>::values(std::size_t id) const {
  const Node& node = nodes_[id];
  if (node.bound != nullptr) return node.bound->data();
  return node.owned;
}

template <typename T>
std::span<T> Tape<T>::grad(std::size_t id) {
  Node& node = nodes_[id];
  if (node.bound != nullptr) return node.bound->ensure_grad();
  if (node.grad.empty()) node.grad.assign(shape_size(node.shape), T(0));
  return node.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (&loss.tape() != this) fail(ErrorKind::usage, "loss belongs to a different tape");
  if (consumed_) fail(ErrorKind::usage, "tape already consumed by a previous backward pass");
  if (loss.size() != 1) {
    fail(ErrorKind::usage, "backward requires a scalar loss, got " + shape_string(loss.shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id()].requires_grad) return;

  grad(loss.id())[0] += T(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || !node.backward) continue;
    if (node.grad.empty()) continue;  // not reached from the loss
    node.backward(*this, i);
    // Intermediate gradients are no longer needed once propagated.
    std::vector<T>().swap(node.grad);
    node.backward = nullptr;
  }
}

template class Var<float>;
template class Var<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace mmfusion

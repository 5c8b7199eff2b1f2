#include "mmfusion/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "mmfusion/error.hpp"

namespace mmfusion {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) fail(ErrorKind::dimension, "tensor dimensions must be positive: " + shape_string(shape_));
  }
  data_.assign(shape_size(shape_), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) fail(ErrorKind::dimension, "tensor dimensions must be positive: " + shape_string(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    fail(ErrorKind::dimension, "shape " + shape_string(shape_) + " does not match " +
                                   std::to_string(data_.size()) + " values");
  }
}

template <typename T>
std::size_t Tensor<T>::rows() const noexcept {
  if (shape_.size() < 2) return 1;
  return shape_size(shape_) / shape_.back();
}

template <typename T>
std::size_t Tensor<T>::cols() const noexcept {
  return shape_.empty() ? 1 : shape_.back();
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (!grad_) fail(ErrorKind::usage, "tensor has no gradient attached");
  return *grad_;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!grad_) fail(ErrorKind::usage, "tensor has no gradient attached");
  return *grad_;
}

template <typename T>
std::span<T> Tensor<T>::ensure_grad() const {
  if (!grad_) grad_.emplace(data_.size(), T(0));
  return *grad_;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
}

template <typename T>
void Tensor<T>::reshape(Shape shape) {
  if (shape_size(shape) != data_.size()) {
    fail(ErrorKind::dimension, "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace mmfusion

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mmfusion {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array with an optional gradient slot.
///
/// Rank 0 is a scalar, rank 1 a row vector (viewed as 1 x n by the 2-D
/// operations), rank 2 a matrix. Convolution kernels use rank 3.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool flag) noexcept { requires_grad_ = flag; }

  bool has_grad() const noexcept { return grad_.has_value(); }
  std::span<T> grad();
  std::span<const T> grad() const;
  // Allocates a zero gradient if none is attached yet. The gradient slot is
  // mutable so that a tape can accumulate into a tensor it only reads.
  std::span<T> ensure_grad() const;
  void zero_grad();
  void clear_grad() noexcept { grad_.reset(); }

  // Reinterprets the data under a new shape of equal size.
  void reshape(Shape shape);

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    Tensor<U> result(shape_, std::move(out));
    result.set_requires_grad(requires_grad_);
    return result;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
  mutable std::optional<std::vector<T>> grad_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace mmfusion

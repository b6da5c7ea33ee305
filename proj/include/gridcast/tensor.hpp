// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridcast {

using Shape = std::vector<std::size_t>;

/// Raised for any extent/rank disagreement between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a NaN or Inf is produced while finite checking is enabled.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array. The last extent is contiguous.
template <typename Dtype>
class Tensor {
 public:
  using value_type = Dtype;

  Tensor() = default;
  explicit Tensor(Shape shape, Dtype fill = Dtype(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<Dtype> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeError("tensor data has " + std::to_string(data_.size()) +
                       " elements but shape " + shape_str(shape_) +
                       " needs " + std::to_string(shape_numel(shape_)));
    }
  }
  Tensor(Shape shape, std::initializer_list<Dtype> data)
      : Tensor(std::move(shape), std::vector<Dtype>(data)) {}

  static Tensor scalar(Dtype v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Dtype* data() { return data_.data(); }
  const Dtype* data() const { return data_.data(); }
  std::span<Dtype> values() { return data_; }
  std::span<const Dtype> values() const { return data_; }
  std::vector<Dtype>& storage() { return data_; }
  const std::vector<Dtype>& storage() const { return data_; }

  Dtype& operator[](std::size_t i) { return data_[i]; }
  const Dtype& operator[](std::size_t i) const { return data_[i]; }

  // Rank-3 [C,H,W] accessors.
  Dtype& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  const Dtype& at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  // Rank-2 accessors.
  Dtype& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const Dtype& at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  void fill(Dtype v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(Shape shape);
  Tensor reshaped(Shape shape) const {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      out[i] = static_cast<Other>(data_[i]);
    }
    return out;
  }

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<Dtype> data_;
};

/// Largest absolute elementwise difference; throws on shape mismatch.
template <typename Dtype>
double max_abs_diff(const Tensor<Dtype>& a, const Tensor<Dtype>& b);

void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace gridcast

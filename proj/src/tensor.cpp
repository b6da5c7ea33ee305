// SPDX-License-Identifier: Apache-2.0
#include "gridcast/tensor.hpp"

#include <cmath>
#include <sstream>

namespace gridcast {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a) +
                     " vs " + shape_str(b));
  }
}

template <typename Dtype>
void Tensor<Dtype>::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " +
                     shape_str(shape));
  }
  shape_ = std::move(shape);
}

template <typename Dtype>
bool Tensor<Dtype>::all_finite() const {
  for (auto v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename Dtype>
double max_abs_diff(const Tensor<Dtype>& a, const Tensor<Dtype>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  }
  return m;
}

template class Tensor<float>;
template class Tensor<double>;
template double max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace gridcast

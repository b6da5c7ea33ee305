// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gridcast/autograd.hpp"

/// Differentiable tensor ops. Every op records its result on the tape of its
/// first operand; all operands must live on the same tape.
///
/// Spatial ops take [C,H,W] tensors. Convolution is cross-correlation with
/// zero "same" padding, so H and W are preserved for odd kernels.
namespace gridcast {

template <typename Dtype>
Var<Dtype> add(Var<Dtype> a, Var<Dtype> b);
template <typename Dtype>
Var<Dtype> sub(Var<Dtype> a, Var<Dtype> b);
/// Hadamard product.
template <typename Dtype>
Var<Dtype> mul(Var<Dtype> a, Var<Dtype> b);
template <typename Dtype>
Var<Dtype> scale(Var<Dtype> a, double factor);
/// alpha * a + beta
template <typename Dtype>
Var<Dtype> affine(Var<Dtype> a, double alpha, double beta);

template <typename Dtype>
Var<Dtype> sigmoid(Var<Dtype> a);
template <typename Dtype>
Var<Dtype> tanh(Var<Dtype> a);
template <typename Dtype>
Var<Dtype> relu(Var<Dtype> a);
template <typename Dtype>
Var<Dtype> abs(Var<Dtype> a);
template <typename Dtype>
Var<Dtype> square(Var<Dtype> a);
/// Gradient passes where lo <= a <= hi.
template <typename Dtype>
Var<Dtype> clamp(Var<Dtype> a, double lo, double hi);

enum class Elementwise { Sigmoid, Tanh, Relu, Hadamard, Add, Scale };

/// Dispatcher over the elementwise family; `factor` is used by Scale only.
template <typename Dtype>
Var<Dtype> elementwise(Elementwise op, std::span<const Var<Dtype>> args,
                       double factor = 1.0);

template <typename Dtype>
Var<Dtype> sum(Var<Dtype> a);
template <typename Dtype>
Var<Dtype> mean(Var<Dtype> a);

/// x[C,...] scaled per leading-axis channel by w[C].
template <typename Dtype>
Var<Dtype> mul_channel(Var<Dtype> x, Var<Dtype> w);
/// x[C,...] plus b[C] broadcast over the trailing axes.
template <typename Dtype>
Var<Dtype> add_channel(Var<Dtype> x, Var<Dtype> b);
/// s[index] * x, differentiable in both.
template <typename Dtype>
Var<Dtype> scale_by(Var<Dtype> x, Var<Dtype> s, std::size_t index);

/// input [C_in,H,W], weight [C_out,C_in,k,k], optional bias [C_out]
/// (pass a default-constructed Var for none).
template <typename Dtype>
Var<Dtype> conv2d(Var<Dtype> input, Var<Dtype> weight,
                  Var<Dtype> bias = Var<Dtype>());

/// 2-D product op(a)·op(b), where op transposes when the flag is set.
template <typename Dtype>
Var<Dtype> matmul(Var<Dtype> a, Var<Dtype> b, bool trans_a = false,
                  bool trans_b = false);
template <typename Dtype>
Var<Dtype> transpose(Var<Dtype> a);
template <typename Dtype>
Var<Dtype> softmax(Var<Dtype> x, std::size_t axis);
template <typename Dtype>
Var<Dtype> concat(std::span<const Var<Dtype>> xs, std::size_t axis);
template <typename Dtype>
Var<Dtype> concat(std::initializer_list<Var<Dtype>> xs, std::size_t axis) {
  std::vector<Var<Dtype>> v(xs);
  return concat<Dtype>(std::span<const Var<Dtype>>(v), axis);
}
/// Half-open range [begin, end) along `axis`.
template <typename Dtype>
Var<Dtype> slice(Var<Dtype> x, std::size_t axis, std::size_t begin,
                 std::size_t end);
template <typename Dtype>
Var<Dtype> reshape(Var<Dtype> x, Shape shape);

/// 2x2 stride-2 max pooling; ties route the gradient to the first element
/// in row-major order. Odd spatial extents are rejected.
template <typename Dtype>
Var<Dtype> maxpool2(Var<Dtype> x);
template <typename Dtype>
Var<Dtype> upsample2_nearest(Var<Dtype> x);

/// [C,H,W] -> [C·p·p, H/p, W/p]; output channel (c·p + dy)·p + dx.
template <typename Dtype>
Var<Dtype> space_to_depth(Var<Dtype> x, std::size_t patch);
template <typename Dtype>
Var<Dtype> depth_to_space(Var<Dtype> x, std::size_t patch);

/// Relative position logits for flattened H×W queries q[HW,d]:
///   S[i,j] = q_i · rel_h[row_j - row_i + H - 1] + q_i · rel_w[col_j - col_i + W - 1]
/// with rel_h [2H-1,d] and rel_w [2W-1,d].
template <typename Dtype>
Var<Dtype> relative_logits(Var<Dtype> q, Var<Dtype> rel_h, Var<Dtype> rel_w,
                           std::size_t height, std::size_t width);

/// Per cell of a [2,H,W] mass pair: if m0 + m1 > 1 both are divided by the
/// sum, otherwise passed through.
template <typename Dtype>
Var<Dtype> renormalize_masses(Var<Dtype> x);

template <typename Dtype>
Var<Dtype> zeros(Tape<Dtype>& tape, Shape shape) {
  return tape.constant(Tensor<Dtype>(std::move(shape)));
}

template <typename Dtype>
Var<Dtype> operator+(Var<Dtype> a, Var<Dtype> b) {
  return add(a, b);
}
template <typename Dtype>
Var<Dtype> operator-(Var<Dtype> a, Var<Dtype> b) {
  return sub(a, b);
}
template <typename Dtype>
Var<Dtype> operator*(Var<Dtype> a, Var<Dtype> b) {
  return mul(a, b);
}

}  // namespace gridcast

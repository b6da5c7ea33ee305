// SPDX-License-Identifier: Apache-2.0
#include "gridcast/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>

namespace gridcast {

namespace {

template <typename Dtype>
using Mat = Eigen::Matrix<Dtype, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Dtype>
using MapMat = Eigen::Map<Mat<Dtype>>;
template <typename Dtype>
using CMapMat = Eigen::Map<const Mat<Dtype>>;

template <typename Dtype>
CMapMat<Dtype> as_mat(const Tensor<Dtype>& t, std::size_t rows, std::size_t cols) {
  return CMapMat<Dtype>(t.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

template <typename Dtype>
MapMat<Dtype> as_mat(Tensor<Dtype>& t, std::size_t rows, std::size_t cols) {
  return MapMat<Dtype>(t.data(), static_cast<Eigen::Index>(rows),
                       static_cast<Eigen::Index>(cols));
}

template <typename Dtype>
void same_tape(Var<Dtype> a, Var<Dtype> b, const char* op) {
  if (&a.tape() != &b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  }
}

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got " + shape_str(s));
  }
}

// y = f(x) elementwise; dfdx(x, y) is the local derivative.
template <typename Dtype, typename F, typename D>
Var<Dtype> unary(Var<Dtype> x, F f, D dfdx) {
  const Tensor<Dtype>& xv = x.value();
  Tensor<Dtype> out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
  const std::size_t xi = x.id();
  auto& tape = x.tape();
  const std::size_t yi = tape.size();
  return tape.record(std::move(out), {x},
                     [xi, yi, dfdx](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                       const auto& xv = t.value(xi);
                       const auto& yv = t.value(yi);
                       auto& gx = t.grad_accum(xi);
                       for (std::size_t i = 0; i < g.numel(); ++i) {
                         gx[i] += g[i] * dfdx(xv[i], yv[i]);
                       }
                     });
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

// Column buffer for a k×k same-padded convolution: rows (c, ki, kj), cols (h, w).
template <typename Dtype>
void im2col(const Dtype* x, std::size_t channels, std::size_t height,
            std::size_t width, std::size_t k, Dtype* col) {
  const long pad = static_cast<long>(k / 2);
  const long H = static_cast<long>(height), W = static_cast<long>(width);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const long dy = static_cast<long>(ki) - pad;
        const long dx = static_cast<long>(kj) - pad;
        Dtype* row = col + ((c * k + ki) * k + kj) * height * width;
        const long w0 = std::max(0L, -dx), w1 = std::min(W, W - dx);
        for (long h = 0; h < H; ++h) {
          Dtype* dst = row + h * W;
          const long hs = h + dy;
          if (hs < 0 || hs >= H || w1 <= w0) {
            std::fill(dst, dst + W, Dtype(0));
            continue;
          }
          const Dtype* src = x + (c * height + hs) * width;
          std::fill(dst, dst + w0, Dtype(0));
          std::memcpy(dst + w0, src + w0 + dx, sizeof(Dtype) * (w1 - w0));
          std::fill(dst + w1, dst + W, Dtype(0));
        }
      }
    }
  }
}

template <typename Dtype>
void col2im_add(const Dtype* col, std::size_t channels, std::size_t height,
                std::size_t width, std::size_t k, Dtype* x) {
  const long pad = static_cast<long>(k / 2);
  const long H = static_cast<long>(height), W = static_cast<long>(width);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const long dy = static_cast<long>(ki) - pad;
        const long dx = static_cast<long>(kj) - pad;
        const Dtype* row = col + ((c * k + ki) * k + kj) * height * width;
        const long w0 = std::max(0L, -dx), w1 = std::min(W, W - dx);
        for (long h = 0; h < H; ++h) {
          const long hs = h + dy;
          if (hs < 0 || hs >= H) continue;
          const Dtype* src = row + h * W;
          Dtype* dst = x + (c * height + hs) * width + dx;
          for (long w = w0; w < w1; ++w) dst[w] += src[w];
        }
      }
    }
  }
}

}  // namespace

template <typename Dtype>
Var<Dtype> add(Var<Dtype> a, Var<Dtype> b) {
  same_tape(a, b, "add");
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<Dtype> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b},
                         [ai, bi](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                           for (std::size_t id : {ai, bi}) {
                             if (!t.requires_grad(id)) continue;
                             auto& gx = t.grad_accum(id);
                             for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
                           }
                         });
}

template <typename Dtype>
Var<Dtype> sub(Var<Dtype> a, Var<Dtype> b) {
  same_tape(a, b, "sub");
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<Dtype> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b},
                         [ai, bi](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                           if (t.requires_grad(ai)) {
                             auto& ga = t.grad_accum(ai);
                             for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                           }
                           if (t.requires_grad(bi)) {
                             auto& gb = t.grad_accum(bi);
                             for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
                           }
                         });
}

template <typename Dtype>
Var<Dtype> mul(Var<Dtype> a, Var<Dtype> b) {
  same_tape(a, b, "mul");
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<Dtype> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(std::move(out), {a, b},
                         [ai, bi](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                           const auto& av = t.value(ai);
                           const auto& bv = t.value(bi);
                           if (t.requires_grad(ai)) {
                             auto& ga = t.grad_accum(ai);
                             for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
                           }
                           if (t.requires_grad(bi)) {
                             auto& gb = t.grad_accum(bi);
                             for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
                           }
                         });
}

template <typename Dtype>
Var<Dtype> scale(Var<Dtype> a, double factor) {
  return affine(a, factor, 0.0);
}

template <typename Dtype>
Var<Dtype> affine(Var<Dtype> a, double alpha, double beta) {
  const Dtype al = static_cast<Dtype>(alpha), be = static_cast<Dtype>(beta);
  return unary<Dtype>(
      a, [al, be](Dtype x) { return al * x + be; },
      [al](Dtype, Dtype) { return al; });
}

template <typename Dtype>
Var<Dtype> sigmoid(Var<Dtype> a) {
  return unary<Dtype>(
      a, [](Dtype x) { return Dtype(1) / (Dtype(1) + std::exp(-x)); },
      [](Dtype, Dtype y) { return y * (Dtype(1) - y); });
}

template <typename Dtype>
Var<Dtype> tanh(Var<Dtype> a) {
  return unary<Dtype>(
      a, [](Dtype x) { return std::tanh(x); },
      [](Dtype, Dtype y) { return Dtype(1) - y * y; });
}

template <typename Dtype>
Var<Dtype> relu(Var<Dtype> a) {
  return unary<Dtype>(
      a, [](Dtype x) { return x > 0 ? x : Dtype(0); },
      [](Dtype x, Dtype) { return x > 0 ? Dtype(1) : Dtype(0); });
}

template <typename Dtype>
Var<Dtype> abs(Var<Dtype> a) {
  return unary<Dtype>(
      a, [](Dtype x) { return std::abs(x); },
      [](Dtype x, Dtype) {
        return x > 0 ? Dtype(1) : (x < 0 ? Dtype(-1) : Dtype(0));
      });
}

template <typename Dtype>
Var<Dtype> square(Var<Dtype> a) {
  return unary<Dtype>(
      a, [](Dtype x) { return x * x; }, [](Dtype x, Dtype) { return 2 * x; });
}

template <typename Dtype>
Var<Dtype> clamp(Var<Dtype> a, double lo, double hi) {
  const Dtype l = static_cast<Dtype>(lo), h = static_cast<Dtype>(hi);
  return unary<Dtype>(
      a, [l, h](Dtype x) { return std::min(std::max(x, l), h); },
      [l, h](Dtype x, Dtype) { return (x >= l && x <= h) ? Dtype(1) : Dtype(0); });
}

template <typename Dtype>
Var<Dtype> elementwise(Elementwise op, std::span<const Var<Dtype>> args,
                       double factor) {
  auto need = [&](std::size_t n) {
    if (args.size() != n) {
      throw std::invalid_argument("elementwise: expected " + std::to_string(n) +
                                  " operands, got " + std::to_string(args.size()));
    }
  };
  switch (op) {
    case Elementwise::Sigmoid: need(1); return sigmoid(args[0]);
    case Elementwise::Tanh: need(1); return tanh(args[0]);
    case Elementwise::Relu: need(1); return relu(args[0]);
    case Elementwise::Scale: need(1); return scale(args[0], factor);
    case Elementwise::Hadamard: need(2); return mul(args[0], args[1]);
    case Elementwise::Add: need(2); return add(args[0], args[1]);
  }
  throw std::invalid_argument("elementwise: unknown op");
}

template <typename Dtype>
Var<Dtype> sum(Var<Dtype> a) {
  Dtype s = 0;
  for (auto v : a.value().values()) s += v;
  const std::size_t ai = a.id();
  return a.tape().record(Tensor<Dtype>::scalar(s), {a},
                         [ai](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                           auto& ga = t.grad_accum(ai);
                           for (auto& v : ga.values()) v += g[0];
                         });
}

template <typename Dtype>
Var<Dtype> mean(Var<Dtype> a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().numel()));
}

template <typename Dtype>
Var<Dtype> mul_channel(Var<Dtype> x, Var<Dtype> w) {
  same_tape(x, w, "mul_channel");
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() < 1 || wv.rank() != 1 || wv.dim(0) != xv.dim(0)) {
    throw ShapeError("mul_channel: weight " + shape_str(wv.shape()) +
                     " does not match channels of " + shape_str(xv.shape()));
  }
  const std::size_t C = xv.dim(0), inner = xv.numel() / C;
  Tensor<Dtype> out = xv;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] *= wv[c];
  }
  const std::size_t xi = x.id(), wi = w.id();
  return x.tape().record(
      std::move(out), {x, w},
      [xi, wi, C, inner](Tape<Dtype>& t, const Tensor<Dtype>& g) {
        const auto& xv = t.value(xi);
        const auto& wv = t.value(wi);
        if (t.requires_grad(xi)) {
          auto& gx = t.grad_accum(xi);
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < inner; ++i)
              gx[c * inner + i] += g[c * inner + i] * wv[c];
        }
        if (t.requires_grad(wi)) {
          auto& gw = t.grad_accum(wi);
          for (std::size_t c = 0; c < C; ++c) {
            Dtype s = 0;
            for (std::size_t i = 0; i < inner; ++i) s += g[c * inner + i] * xv[c * inner + i];
            gw[c] += s;
          }
        }
      });
}

template <typename Dtype>
Var<Dtype> add_channel(Var<Dtype> x, Var<Dtype> b) {
  same_tape(x, b, "add_channel");
  const auto& xv = x.value();
  const auto& bv = b.value();
  if (xv.rank() < 1 || bv.rank() != 1 || bv.dim(0) != xv.dim(0)) {
    throw ShapeError("add_channel: bias " + shape_str(bv.shape()) +
                     " does not match channels of " + shape_str(xv.shape()));
  }
  const std::size_t C = xv.dim(0), inner = xv.numel() / C;
  Tensor<Dtype> out = xv;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < inner; ++i) out[c * inner + i] += bv[c];
  const std::size_t xi = x.id(), bi = b.id();
  return x.tape().record(std::move(out), {x, b},
                         [xi, bi, C, inner](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                           if (t.requires_grad(xi)) {
                             auto& gx = t.grad_accum(xi);
                             for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
                           }
                           if (t.requires_grad(bi)) {
                             auto& gb = t.grad_accum(bi);
                             for (std::size_t c = 0; c < C; ++c) {
                               Dtype s = 0;
                               for (std::size_t i = 0; i < inner; ++i) s += g[c * inner + i];
                               gb[c] += s;
                             }
                           }
                         });
}

template <typename Dtype>
Var<Dtype> scale_by(Var<Dtype> x, Var<Dtype> s, std::size_t index) {
  same_tape(x, s, "scale_by");
  if (index >= s.value().numel()) {
    throw ShapeError("scale_by: index " + std::to_string(index) +
                     " out of range for " + shape_str(s.shape()));
  }
  const Dtype f = s.value()[index];
  Tensor<Dtype> out = x.value();
  for (auto& v : out.values()) v *= f;
  const std::size_t xi = x.id(), si = s.id();
  return x.tape().record(std::move(out), {x, s},
                         [xi, si, index](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                           const auto& xv = t.value(xi);
                           const Dtype f = t.value(si)[index];
                           if (t.requires_grad(xi)) {
                             auto& gx = t.grad_accum(xi);
                             for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i] * f;
                           }
                           if (t.requires_grad(si)) {
                             Dtype acc = 0;
                             for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * xv[i];
                             t.grad_accum(si)[index] += acc;
                           }
                         });
}

template <typename Dtype>
Var<Dtype> conv2d(Var<Dtype> input, Var<Dtype> weight, Var<Dtype> bias) {
  same_tape(input, weight, "conv2d");
  const auto& xv = input.value();
  const auto& wv = weight.value();
  require_rank(xv.shape(), 3, "conv2d input");
  require_rank(wv.shape(), 4, "conv2d weight");
  const std::size_t cin = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  const std::size_t cout = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != cin) {
    throw ShapeError("conv2d: weight expects " + std::to_string(wv.dim(1)) +
                     " input channels but input " + shape_str(xv.shape()) + " has " +
                     std::to_string(cin));
  }
  if (wv.dim(3) != k || k % 2 == 0) {
    throw ShapeError("conv2d: kernel must be square with odd size, got " +
                     shape_str(wv.shape()));
  }
  const bool has_bias = bias.valid();
  if (has_bias) {
    same_tape(input, bias, "conv2d");
    if (bias.value().shape() != Shape{cout}) {
      throw ShapeError("conv2d: bias " + shape_str(bias.shape()) +
                       " does not match " + std::to_string(cout) + " output channels");
    }
  }
  const std::size_t HW = H * W, K = cin * k * k;

  // For 1x1 kernels the input already is the column matrix.
  auto col = std::make_shared<Tensor<Dtype>>();
  if (k > 1) {
    *col = Tensor<Dtype>(Shape{K, HW});
    im2col(xv.data(), cin, H, W, k, col->data());
  }
  const Tensor<Dtype>& colv = k > 1 ? *col : xv;

  Tensor<Dtype> out(Shape{cout, H, W});
  as_mat(out, cout, HW).noalias() = as_mat(wv, cout, K) * as_mat(colv, K, HW);
  if (has_bias) {
    const auto& bv = bias.value();
    for (std::size_t c = 0; c < cout; ++c) {
      Dtype* o = out.data() + c * HW;
      for (std::size_t i = 0; i < HW; ++i) o[i] += bv[c];
    }
  }

  const std::size_t xi = input.id(), wi = weight.id();
  const std::size_t bi = has_bias ? bias.id() : 0;
  bool rg = input.requires_grad() || weight.requires_grad() ||
            (has_bias && bias.requires_grad());
  return input.tape().record(
      std::move(out), rg,
      [=](Tape<Dtype>& t, const Tensor<Dtype>& g) {
        const auto& xv = t.value(xi);
        const auto& wv = t.value(wi);
        const Tensor<Dtype>& colv = k > 1 ? *col : xv;
        auto gmat = as_mat(g, cout, HW);
        if (t.requires_grad(wi)) {
          auto& gw = t.grad_accum(wi);
          as_mat(gw, cout, K).noalias() += gmat * as_mat(colv, K, HW).transpose();
        }
        if (has_bias && t.requires_grad(bi)) {
          auto& gb = t.grad_accum(bi);
          // Plain loop: Eigen's vectorized sum peels by address, so its order
          // (and the rounded result) would depend on where g was allocated.
          for (std::size_t c = 0; c < cout; ++c) {
            const Dtype* gr = g.data() + c * HW;
            Dtype s = 0;
            for (std::size_t i = 0; i < HW; ++i) s += gr[i];
            gb[c] += s;
          }
        }
        if (t.requires_grad(xi)) {
          auto& gx = t.grad_accum(xi);
          if (k == 1) {
            as_mat(gx, cin, HW).noalias() += as_mat(wv, cout, K).transpose() * gmat;
          } else {
            Tensor<Dtype> gcol(Shape{K, HW});
            as_mat(gcol, K, HW).noalias() = as_mat(wv, cout, K).transpose() * gmat;
            col2im_add(gcol.data(), cin, H, W, k, gx.data());
          }
        }
      });
}

template <typename Dtype>
Var<Dtype> matmul(Var<Dtype> a, Var<Dtype> b, bool trans_a, bool trans_b) {
  same_tape(a, b, "matmul");
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank(av.shape(), 2, "matmul lhs");
  require_rank(bv.shape(), 2, "matmul rhs");
  const std::size_t m = trans_a ? av.dim(1) : av.dim(0);
  const std::size_t ka = trans_a ? av.dim(0) : av.dim(1);
  const std::size_t kb = trans_b ? bv.dim(1) : bv.dim(0);
  const std::size_t n = trans_b ? bv.dim(0) : bv.dim(1);
  if (ka != kb) {
    throw ShapeError("matmul: inner dimensions differ (" + shape_str(av.shape()) +
                     (trans_a ? "^T" : "") + " x " + shape_str(bv.shape()) +
                     (trans_b ? "^T" : "") + ")");
  }
  auto A = as_mat(av, av.dim(0), av.dim(1));
  auto B = as_mat(bv, bv.dim(0), bv.dim(1));
  Tensor<Dtype> out(Shape{m, n});
  auto C = as_mat(out, m, n);
  if (!trans_a && !trans_b) C.noalias() = A * B;
  else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
  else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
  else C.noalias() = A.transpose() * B.transpose();

  const std::size_t ai = a.id(), bi = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [=](Tape<Dtype>& t, const Tensor<Dtype>& g) {
        const auto& av = t.value(ai);
        const auto& bv = t.value(bi);
        auto A = as_mat(av, av.dim(0), av.dim(1));
        auto B = as_mat(bv, bv.dim(0), bv.dim(1));
        auto G = as_mat(g, m, n);
        if (t.requires_grad(ai)) {
          auto GA = as_mat(t.grad_accum(ai), av.dim(0), av.dim(1));
          // d op(A) = G op(B)^T
          if (!trans_a && !trans_b) GA.noalias() += G * B.transpose();
          else if (!trans_a && trans_b) GA.noalias() += G * B;
          else if (trans_a && !trans_b) GA.noalias() += B * G.transpose();
          else GA.noalias() += B.transpose() * G.transpose();
        }
        if (t.requires_grad(bi)) {
          auto GB = as_mat(t.grad_accum(bi), bv.dim(0), bv.dim(1));
          // d op(B) = op(A)^T G
          if (!trans_a && !trans_b) GB.noalias() += A.transpose() * G;
          else if (trans_a && !trans_b) GB.noalias() += A * G;
          else if (!trans_a && trans_b) GB.noalias() += G.transpose() * A;
          else GB.noalias() += G.transpose() * A.transpose();
        }
      });
}

template <typename Dtype>
Var<Dtype> transpose(Var<Dtype> a) {
  const auto& av = a.value();
  require_rank(av.shape(), 2, "transpose");
  const std::size_t r = av.dim(0), c = av.dim(1);
  Tensor<Dtype> out(Shape{c, r});
  as_mat(out, c, r) = as_mat(av, r, c).transpose();
  const std::size_t ai = a.id();
  return a.tape().record(std::move(out), {a},
                         [ai, r, c](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                           as_mat(t.grad_accum(ai), r, c) += as_mat(g, c, r).transpose();
                         });
}

template <typename Dtype>
Var<Dtype> softmax(Var<Dtype> x, std::size_t axis) {
  const auto& xv = x.value();
  if (axis >= xv.rank()) {
    throw std::out_of_range("softmax: axis " + std::to_string(axis) +
                            " out of range for " + shape_str(xv.shape()));
  }
  const AxisSplit s = split_axis(xv.shape(), axis);
  Tensor<Dtype> out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      Dtype mx = -std::numeric_limits<Dtype>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, xv[base + j * s.inner]);
      Dtype z = 0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const Dtype e = std::exp(xv[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= z;
    }
  }
  const std::size_t xi = x.id();
  const std::size_t yi = x.tape().size();
  return x.tape().record(std::move(out), {x},
                         [xi, yi, s](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                           const auto& y = t.value(yi);
                           auto& gx = t.grad_accum(xi);
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             for (std::size_t in = 0; in < s.inner; ++in) {
                               const std::size_t base = o * s.n * s.inner + in;
                               Dtype dot = 0;
                               for (std::size_t j = 0; j < s.n; ++j) {
                                 const std::size_t k = base + j * s.inner;
                                 dot += g[k] * y[k];
                               }
                               for (std::size_t j = 0; j < s.n; ++j) {
                                 const std::size_t k = base + j * s.inner;
                                 gx[k] += y[k] * (g[k] - dot);
                               }
                             }
                           }
                         });
}

template <typename Dtype>
Var<Dtype> concat(std::span<const Var<Dtype>> xs, std::size_t axis) {
  if (xs.empty()) throw std::invalid_argument("concat: no operands");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) {
    throw std::out_of_range("concat: axis " + std::to_string(axis) +
                            " out of range for " + shape_str(s0));
  }
  Shape out_shape = s0;
  out_shape[axis] = 0;
  bool rg = false;
  for (const auto& x : xs) {
    same_tape(xs[0], x, "concat");
    const Shape& s = x.shape();
    if (s.size() != s0.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != s0[d]) {
        throw ShapeError("concat: " + shape_str(s) + " incompatible with " +
                         shape_str(s0) + " along axis " + std::to_string(axis));
      }
    }
    out_shape[axis] += s[axis];
    rg = rg || x.requires_grad();
  }
  const AxisSplit so = split_axis(out_shape, axis);
  Tensor<Dtype> out(out_shape);
  std::vector<std::size_t> ids, widths;
  std::size_t offset = 0;
  for (const auto& x : xs) {
    const auto& xv = x.value();
    const std::size_t chunk = xv.dim(axis) * so.inner;
    for (std::size_t o = 0; o < so.outer; ++o) {
      std::copy_n(xv.data() + o * chunk, chunk,
                  out.data() + o * so.n * so.inner + offset * so.inner);
    }
    ids.push_back(x.id());
    widths.push_back(xv.dim(axis));
    offset += xv.dim(axis);
  }
  return xs[0].tape().record(
      std::move(out), rg,
      [ids, widths, so](Tape<Dtype>& t, const Tensor<Dtype>& g) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          const std::size_t chunk = widths[k] * so.inner;
          if (t.requires_grad(ids[k])) {
            auto& gx = t.grad_accum(ids[k]);
            for (std::size_t o = 0; o < so.outer; ++o) {
              const Dtype* src = g.data() + o * so.n * so.inner + offset * so.inner;
              Dtype* dst = gx.data() + o * chunk;
              for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
            }
          }
          offset += widths[k];
        }
      });
}

template <typename Dtype>
Var<Dtype> slice(Var<Dtype> x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto& xv = x.value();
  if (axis >= xv.rank()) {
    throw std::out_of_range("slice: axis out of range for " + shape_str(xv.shape()));
  }
  if (begin > end || end > xv.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") invalid for " + shape_str(xv.shape()));
  }
  const AxisSplit s = split_axis(xv.shape(), axis);
  Shape out_shape = xv.shape();
  out_shape[axis] = end - begin;
  Tensor<Dtype> out(out_shape);
  const std::size_t chunk = (end - begin) * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(xv.data() + o * s.n * s.inner + begin * s.inner, chunk,
                out.data() + o * chunk);
  }
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x},
                         [xi, s, begin, chunk](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                           auto& gx = t.grad_accum(xi);
                           for (std::size_t o = 0; o < s.outer; ++o) {
                             Dtype* dst = gx.data() + o * s.n * s.inner + begin * s.inner;
                             const Dtype* src = g.data() + o * chunk;
                             for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                           }
                         });
}

template <typename Dtype>
Var<Dtype> reshape(Var<Dtype> x, Shape shape) {
  Tensor<Dtype> out = x.value().reshaped(std::move(shape));
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x},
                         [xi](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                           auto& gx = t.grad_accum(xi);
                           for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
                         });
}

template <typename Dtype>
Var<Dtype> maxpool2(Var<Dtype> x) {
  const auto& xv = x.value();
  require_rank(xv.shape(), 3, "maxpool2");
  const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  if (H % 2 || W % 2) {
    throw ShapeError("maxpool2: spatial extent must be even, got " + shape_str(xv.shape()));
  }
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor<Dtype> out(Shape{C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t h = 0; h < Ho; ++h) {
      for (std::size_t w = 0; w < Wo; ++w) {
        std::size_t best = (c * H + 2 * h) * W + 2 * w;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (c * H + 2 * h + dy) * W + 2 * w + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        }
        const std::size_t o = (c * Ho + h) * Wo + w;
        out[o] = xv[best];
        (*argmax)[o] = best;
      }
    }
  }
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x},
                         [xi, argmax](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                           auto& gx = t.grad_accum(xi);
                           for (std::size_t o = 0; o < g.numel(); ++o) gx[(*argmax)[o]] += g[o];
                         });
}

template <typename Dtype>
Var<Dtype> upsample2_nearest(Var<Dtype> x) {
  const auto& xv = x.value();
  require_rank(xv.shape(), 3, "upsample2_nearest");
  const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  Tensor<Dtype> out(Shape{C, 2 * H, 2 * W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < 2 * H; ++h)
      for (std::size_t w = 0; w < 2 * W; ++w) out.at(c, h, w) = xv.at(c, h / 2, w / 2);
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x},
                         [xi, C, H, W](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                           auto& gx = t.grad_accum(xi);
                           for (std::size_t c = 0; c < C; ++c)
                             for (std::size_t h = 0; h < 2 * H; ++h)
                               for (std::size_t w = 0; w < 2 * W; ++w)
                                 gx.at(c, h / 2, w / 2) += g.at(c, h, w);
                         });
}

namespace {
// Maps between [C,H,W] and [C·p·p, H/p, W/p] index spaces.
template <typename F>
void for_each_patch_index(std::size_t C, std::size_t H, std::size_t W, std::size_t p,
                          F f) {
  const std::size_t Ho = H / p, Wo = W / p;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        const std::size_t oc = (c * p + h % p) * p + w % p;
        f((c * H + h) * W + w, (oc * Ho + h / p) * Wo + w / p);
      }
}
}  // namespace

template <typename Dtype>
Var<Dtype> space_to_depth(Var<Dtype> x, std::size_t patch) {
  const auto& xv = x.value();
  require_rank(xv.shape(), 3, "space_to_depth");
  const std::size_t C = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  if (patch == 0 || H % patch || W % patch) {
    throw ShapeError("space_to_depth: patch " + std::to_string(patch) +
                     " incompatible with " + shape_str(xv.shape()));
  }
  Tensor<Dtype> out(Shape{C * patch * patch, H / patch, W / patch});
  for_each_patch_index(C, H, W, patch,
                       [&](std::size_t src, std::size_t dst) { out[dst] = xv[src]; });
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x},
                         [xi, C, H, W, patch](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                           auto& gx = t.grad_accum(xi);
                           for_each_patch_index(C, H, W, patch,
                                                [&](std::size_t src, std::size_t dst) {
                                                  gx[src] += g[dst];
                                                });
                         });
}

template <typename Dtype>
Var<Dtype> depth_to_space(Var<Dtype> x, std::size_t patch) {
  const auto& xv = x.value();
  require_rank(xv.shape(), 3, "depth_to_space");
  if (patch == 0 || xv.dim(0) % (patch * patch)) {
    throw ShapeError("depth_to_space: patch " + std::to_string(patch) +
                     " incompatible with " + shape_str(xv.shape()));
  }
  const std::size_t C = xv.dim(0) / (patch * patch);
  const std::size_t H = xv.dim(1) * patch, W = xv.dim(2) * patch;
  Tensor<Dtype> out(Shape{C, H, W});
  for_each_patch_index(C, H, W, patch,
                       [&](std::size_t dst, std::size_t src) { out[dst] = xv[src]; });
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x},
                         [xi, C, H, W, patch](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                           auto& gx = t.grad_accum(xi);
                           for_each_patch_index(C, H, W, patch,
                                                [&](std::size_t dst, std::size_t src) {
                                                  gx[src] += g[dst];
                                                });
                         });
}

template <typename Dtype>
Var<Dtype> relative_logits(Var<Dtype> q, Var<Dtype> rel_h, Var<Dtype> rel_w,
                           std::size_t height, std::size_t width) {
  same_tape(q, rel_h, "relative_logits");
  same_tape(q, rel_w, "relative_logits");
  const auto& qv = q.value();
  const auto& hv = rel_h.value();
  const auto& wv = rel_w.value();
  require_rank(qv.shape(), 2, "relative_logits q");
  const std::size_t HW = height * width, d = qv.dim(1);
  if (qv.dim(0) != HW) {
    throw ShapeError("relative_logits: q has " + std::to_string(qv.dim(0)) +
                     " rows, grid has " + std::to_string(HW) + " cells");
  }
  const std::size_t nh = 2 * height - 1, nw = 2 * width - 1;
  if (hv.shape() != Shape{nh, d} || wv.shape() != Shape{nw, d}) {
    throw ShapeError("relative_logits: embeddings " + shape_str(hv.shape()) + ", " +
                     shape_str(wv.shape()) + " do not match grid " +
                     std::to_string(height) + "x" + std::to_string(width) + " and d=" +
                     std::to_string(d));
  }
  // Projections of every query onto every offset embedding.
  Mat<Dtype> ph = as_mat(qv, HW, d) * as_mat(hv, nh, d).transpose();
  Mat<Dtype> pw = as_mat(qv, HW, d) * as_mat(wv, nw, d).transpose();
  Tensor<Dtype> out(Shape{HW, HW});
  for (std::size_t i = 0; i < HW; ++i) {
    const std::size_t ri = i / width, ci = i % width;
    Dtype* row = out.data() + i * HW;
    for (std::size_t j = 0; j < HW; ++j) {
      const std::size_t rj = j / width, cj = j % width;
      row[j] = ph(i, rj + height - 1 - ri) + pw(i, cj + width - 1 - ci);
    }
  }
  const std::size_t qi = q.id(), hi = rel_h.id(), wi = rel_w.id();
  return q.tape().record(
      std::move(out), {q, rel_h, rel_w},
      [=](Tape<Dtype>& t, const Tensor<Dtype>& g) {
        Mat<Dtype> gph = Mat<Dtype>::Zero(HW, nh);
        Mat<Dtype> gpw = Mat<Dtype>::Zero(HW, nw);
        for (std::size_t i = 0; i < HW; ++i) {
          const std::size_t ri = i / width, ci = i % width;
          const Dtype* row = g.data() + i * HW;
          for (std::size_t j = 0; j < HW; ++j) {
            const std::size_t rj = j / width, cj = j % width;
            gph(i, rj + height - 1 - ri) += row[j];
            gpw(i, cj + width - 1 - ci) += row[j];
          }
        }
        const auto& qv = t.value(qi);
        const auto& hv = t.value(hi);
        const auto& wv = t.value(wi);
        if (t.requires_grad(qi)) {
          auto gq = as_mat(t.grad_accum(qi), HW, d);
          gq.noalias() += gph * as_mat(hv, nh, d);
          gq.noalias() += gpw * as_mat(wv, nw, d);
        }
        if (t.requires_grad(hi)) {
          as_mat(t.grad_accum(hi), nh, d).noalias() += gph.transpose() * as_mat(qv, HW, d);
        }
        if (t.requires_grad(wi)) {
          as_mat(t.grad_accum(wi), nw, d).noalias() += gpw.transpose() * as_mat(qv, HW, d);
        }
      });
}

template <typename Dtype>
Var<Dtype> renormalize_masses(Var<Dtype> x) {
  const auto& xv = x.value();
  if (xv.rank() != 3 || xv.dim(0) != 2) {
    throw ShapeError("renormalize_masses: expected [2,H,W], got " + shape_str(xv.shape()));
  }
  const std::size_t n = xv.dim(1) * xv.dim(2);
  Tensor<Dtype> out = xv;
  for (std::size_t i = 0; i < n; ++i) {
    const Dtype s = xv[i] + xv[n + i];
    if (s > Dtype(1)) {
      out[i] = xv[i] / s;
      out[n + i] = xv[n + i] / s;
    }
  }
  const std::size_t xi = x.id();
  return x.tape().record(std::move(out), {x},
                         [xi, n](Tape<Dtype>& t, const Tensor<Dtype>& g) {
                           const auto& xv = t.value(xi);
                           auto& gx = t.grad_accum(xi);
                           for (std::size_t i = 0; i < n; ++i) {
                             const Dtype a = xv[i], b = xv[n + i], s = a + b;
                             if (s > Dtype(1)) {
                               const Dtype proj = (g[i] * a + g[n + i] * b) / (s * s);
                               gx[i] += g[i] / s - proj;
                               gx[n + i] += g[n + i] / s - proj;
                             } else {
                               gx[i] += g[i];
                               gx[n + i] += g[n + i];
                             }
                           }
                         });
}

#define GRIDCAST_INSTANTIATE_OPS(T)                                                  \
  template Var<T> add(Var<T>, Var<T>);                                               \
  template Var<T> sub(Var<T>, Var<T>);                                               \
  template Var<T> mul(Var<T>, Var<T>);                                               \
  template Var<T> scale(Var<T>, double);                                             \
  template Var<T> affine(Var<T>, double, double);                                    \
  template Var<T> sigmoid(Var<T>);                                                   \
  template Var<T> tanh(Var<T>);                                                      \
  template Var<T> relu(Var<T>);                                                      \
  template Var<T> abs(Var<T>);                                                       \
  template Var<T> square(Var<T>);                                                    \
  template Var<T> clamp(Var<T>, double, double);                                     \
  template Var<T> elementwise(Elementwise, std::span<const Var<T>>, double);         \
  template Var<T> sum(Var<T>);                                                       \
  template Var<T> mean(Var<T>);                                                      \
  template Var<T> mul_channel(Var<T>, Var<T>);                                       \
  template Var<T> add_channel(Var<T>, Var<T>);                                       \
  template Var<T> scale_by(Var<T>, Var<T>, std::size_t);                             \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>);                                    \
  template Var<T> matmul(Var<T>, Var<T>, bool, bool);                                \
  template Var<T> transpose(Var<T>);                                                 \
  template Var<T> softmax(Var<T>, std::size_t);                                      \
  template Var<T> concat(std::span<const Var<T>>, std::size_t);                      \
  template Var<T> slice(Var<T>, std::size_t, std::size_t, std::size_t);              \
  template Var<T> reshape(Var<T>, Shape);                                            \
  template Var<T> maxpool2(Var<T>);                                                  \
  template Var<T> upsample2_nearest(Var<T>);                                         \
  template Var<T> space_to_depth(Var<T>, std::size_t);                               \
  template Var<T> depth_to_space(Var<T>, std::size_t);                               \
  template Var<T> relative_logits(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t); \
  template Var<T> renormalize_masses(Var<T>);

GRIDCAST_INSTANTIATE_OPS(float)
GRIDCAST_INSTANTIATE_OPS(double)

}  // namespace gridcast

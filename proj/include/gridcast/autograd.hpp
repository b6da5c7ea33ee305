// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>

#include "gridcast/tensor.hpp"

namespace gridcast {

/// A trainable tensor that outlives any single tape. Gradients from every
/// tape that references it are summed into `grad`.
template <typename Dtype>
struct Parameter {
  std::string name;
  Tensor<Dtype> value;
  Tensor<Dtype> grad;
  bool requires_grad = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<Dtype> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor<Dtype>(value.shape()); }
};

template <typename Dtype>
class Tape;

/// Handle to a value recorded on a tape.
template <typename Dtype>
class Var {
 public:
  Var() = default;
  Var(Tape<Dtype>* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape<Dtype>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor<Dtype>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t i) const { return value().dim(i); }
  bool requires_grad() const;

 private:
  Tape<Dtype>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Wengert list for reverse-mode differentiation. Nodes are appended in
/// execution order, so walking the list backwards from the root visits every
/// op after all of its consumers.
///
/// A tape is single-threaded. References returned by value()/grad_accum()
/// stay valid while nodes are appended.
template <typename Dtype>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<Dtype>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Dtype> constant(Tensor<Dtype> value);
  Var<Dtype> variable(Tensor<Dtype> value);
  /// Leaf bound to a parameter; repeated calls return the same node.
  Var<Dtype> param(Parameter<Dtype>& p);

  /// Appends an op result. The backward closure is kept only when at least
  /// one input requires a gradient.
  Var<Dtype> record(Tensor<Dtype> value, std::initializer_list<Var<Dtype>> inputs,
                    Backward backward);
  Var<Dtype> record(Tensor<Dtype> value, bool requires_grad, Backward backward);

  /// Reverse accumulation from a scalar root. Leaf gradients are rebuilt from
  /// scratch on each call; parameter gradients are added to Parameter::grad.
  void backward(Var<Dtype> root);

  const Tensor<Dtype>& value(std::size_t id) const { return nodes_[id].value; }
  /// Empty tensor if no gradient reached the node.
  const Tensor<Dtype>& grad(std::size_t id) const { return nodes_[id].grad; }
  const Tensor<Dtype>& grad(Var<Dtype> v) const { return grad(v.id()); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Zero-initialized on first use.
  Tensor<Dtype>& grad_accum(std::size_t id);
  Tensor<Dtype>& grad_accum(Var<Dtype> v) { return grad_accum(v.id()); }

  std::size_t size() const { return nodes_.size(); }

  /// Debug mode: every recorded value is checked for NaN/Inf.
  static void set_finite_check(bool on);
  static bool finite_check();

 private:
  struct Node {
    Tensor<Dtype> value;
    Tensor<Dtype> grad;
    bool requires_grad = false;
    Backward backward;
    Parameter<Dtype>* param = nullptr;
  };

  Var<Dtype> push(Node node);

  std::deque<Node> nodes_;
  std::unordered_map<Parameter<Dtype>*, std::size_t> param_nodes_;
};

template <typename Dtype>
const Tensor<Dtype>& Var<Dtype>::value() const {
  return tape_->value(id_);
}

template <typename Dtype>
bool Var<Dtype>::requires_grad() const {
  return tape_->requires_grad(id_);
}

}  // namespace gridcast

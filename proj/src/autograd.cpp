// SPDX-License-Identifier: Apache-2.0
#include "gridcast/autograd.hpp"

#include <atomic>

namespace gridcast {

namespace {
std::atomic<bool> g_finite_check{false};
}  // namespace

template <typename Dtype>
void Tape<Dtype>::set_finite_check(bool on) {
  g_finite_check = on;
}

template <typename Dtype>
bool Tape<Dtype>::finite_check() {
  return g_finite_check;
}

template <typename Dtype>
Var<Dtype> Tape<Dtype>::push(Node node) {
  if (g_finite_check && !node.value.all_finite()) {
    throw NumericalError("non-finite value produced at tape node " +
                         std::to_string(nodes_.size()));
  }
  nodes_.push_back(std::move(node));
  return Var<Dtype>(this, nodes_.size() - 1);
}

template <typename Dtype>
Var<Dtype> Tape<Dtype>::constant(Tensor<Dtype> value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename Dtype>
Var<Dtype> Tape<Dtype>::variable(Tensor<Dtype> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

template <typename Dtype>
Var<Dtype> Tape<Dtype>::param(Parameter<Dtype>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
    return Var<Dtype>(this, it->second);
  }
  Node n;
  n.value = p.value;
  n.requires_grad = p.requires_grad;
  n.param = &p;
  Var<Dtype> v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

template <typename Dtype>
Var<Dtype> Tape<Dtype>::record(Tensor<Dtype> value,
                               std::initializer_list<Var<Dtype>> inputs,
                               Backward backward) {
  bool rg = false;
  for (const auto& in : inputs) {
    if (in.tape().requires_grad(in.id())) rg = true;
  }
  return record(std::move(value), rg, std::move(backward));
}

template <typename Dtype>
Var<Dtype> Tape<Dtype>::record(Tensor<Dtype> value, bool requires_grad,
                               Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename Dtype>
Tensor<Dtype>& Tape<Dtype>::grad_accum(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<Dtype>(n.value.shape());
  return n.grad;
}

template <typename Dtype>
void Tape<Dtype>::backward(Var<Dtype> root) {
  if (&root.tape() != this) {
    throw std::invalid_argument("backward: root belongs to another tape");
  }
  Node& r = nodes_[root.id()];
  if (r.value.numel() != 1) {
    throw ShapeError("backward: root must be a scalar, got " +
                     shape_str(r.value.shape()));
  }
  if (!r.requires_grad) {
    throw std::invalid_argument(
        "backward: root does not depend on any differentiable input");
  }
  for (auto& n : nodes_) n.grad = Tensor<Dtype>();
  r.grad = Tensor<Dtype>(r.value.shape(), Dtype(1));

  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param) {
      auto& pg = n.param->grad;
      if (pg.shape() != n.value.shape()) pg = Tensor<Dtype>(n.value.shape());
      for (std::size_t k = 0; k < pg.numel(); ++k) pg[k] += n.grad[k];
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace gridcast

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gridcast/gradcheck.hpp"
#include "gridcast/ops.hpp"
#include "gridcast/params.hpp"

namespace gridcast::test {

template <typename Dtype = double>
Tensor<Dtype> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<Dtype> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Dtype>(u(rng));
  return t;
}

/// Σ r_i y_i with fixed random r: a scalar whose gradient touches every
/// output element with a distinct weight.
template <typename Dtype>
Var<Dtype> random_projection(Var<Dtype> y, std::uint64_t seed) {
  return sum(y * y.tape().constant(random_tensor<Dtype>(y.shape(), seed)));
}

/// Wraps a fixed tensor as a Parameter so inputs can be gradient-checked
/// alongside weights.
inline Parameter<double> input_param(const std::string& name, Tensor<double> v) {
  return Parameter<double>(name, std::move(v));
}

/// Overwrites every parameter in `store` with uniform(-scale, scale).
template <typename Dtype>
void randomize(ParamStore<Dtype>& store, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto* p : store.all()) {
    for (auto& v : p->value.values()) v = static_cast<Dtype>(u(rng));
  }
}

template <typename Dtype>
void zero_params_with_prefix(ParamStore<Dtype>& store, const std::string& prefix) {
  for (auto* p : store.all()) {
    if (p->name.rfind(prefix, 0) == 0) p->value.fill(Dtype(0));
  }
}

}  // namespace gridcast::test

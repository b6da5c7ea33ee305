// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gridcast/autograd.hpp"

namespace gridcast {

/// Named parameter registry. Initial values depend only on (seed, name), so
/// two models that share a key also share its initial value regardless of
/// what else they contain.
template <typename Dtype>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;
  ParamStore(ParamStore&&) = default;
  ParamStore& operator=(ParamStore&&) = default;

  Parameter<Dtype>& create(const std::string& name, Tensor<Dtype> value);
  Parameter<Dtype>& normal(const std::string& name, Shape shape, double stddev);
  Parameter<Dtype>& uniform(const std::string& name, Shape shape, double bound);
  Parameter<Dtype>& constant(const std::string& name, Shape shape, double value);

  Parameter<Dtype>* find(const std::string& name);
  Parameter<Dtype>& at(const std::string& name);
  const Parameter<Dtype>& at(const std::string& name) const;

  /// Sorted by name.
  std::vector<Parameter<Dtype>*> all();
  std::vector<std::string> names() const;
  std::size_t scalar_count() const;
  void zero_grad();
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t name_seed(const std::string& name) const;

  std::uint64_t seed_;
  std::map<std::string, Parameter<Dtype>> params_;
};

}  // namespace gridcast

// SPDX-License-Identifier: Apache-2.0
#include "gridcast/params.hpp"

#include <random>
#include <stdexcept>

namespace gridcast {

template <typename Dtype>
std::uint64_t ParamStore<Dtype>::name_seed(const std::string& name) const {
  // FNV-1a
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h ^ (seed_ * 0x9E3779B97F4A7C15ULL);
}

template <typename Dtype>
Parameter<Dtype>& ParamStore<Dtype>::create(const std::string& name,
                                            Tensor<Dtype> value) {
  auto [it, inserted] = params_.try_emplace(name, name, std::move(value));
  if (!inserted) throw std::invalid_argument("duplicate parameter \"" + name + "\"");
  return it->second;
}

template <typename Dtype>
Parameter<Dtype>& ParamStore<Dtype>::normal(const std::string& name, Shape shape,
                                            double stddev) {
  std::mt19937_64 rng(name_seed(name));
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<Dtype> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Dtype>(dist(rng));
  return create(name, std::move(t));
}

template <typename Dtype>
Parameter<Dtype>& ParamStore<Dtype>::uniform(const std::string& name, Shape shape,
                                             double bound) {
  std::mt19937_64 rng(name_seed(name));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<Dtype> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<Dtype>(dist(rng));
  return create(name, std::move(t));
}

template <typename Dtype>
Parameter<Dtype>& ParamStore<Dtype>::constant(const std::string& name, Shape shape,
                                              double value) {
  return create(name, Tensor<Dtype>(std::move(shape), static_cast<Dtype>(value)));
}

template <typename Dtype>
Parameter<Dtype>* ParamStore<Dtype>::find(const std::string& name) {
  auto it = params_.find(name);
  return it == params_.end() ? nullptr : &it->second;
}

template <typename Dtype>
Parameter<Dtype>& ParamStore<Dtype>::at(const std::string& name) {
  auto* p = find(name);
  if (!p) throw std::out_of_range("no parameter \"" + name + "\"");
  return *p;
}

template <typename Dtype>
const Parameter<Dtype>& ParamStore<Dtype>::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter \"" + name + "\"");
  return it->second;
}

template <typename Dtype>
std::vector<Parameter<Dtype>*> ParamStore<Dtype>::all() {
  std::vector<Parameter<Dtype>*> out;
  out.reserve(params_.size());
  for (auto& [_, p] : params_) out.push_back(&p);
  return out;
}

template <typename Dtype>
std::vector<std::string> ParamStore<Dtype>::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : params_) out.push_back(n);
  return out;
}

template <typename Dtype>
std::size_t ParamStore<Dtype>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.numel();
  return n;
}

template <typename Dtype>
void ParamStore<Dtype>::zero_grad() {
  for (auto& [_, p] : params_) p.zero_grad();
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace gridcast

// SPDX-License-Identifier: Apache-2.0
#include "gridcast/dst.hpp"

#include <algorithm>
#include <string>

namespace gridcast {

bool Masses::valid(double tol) const {
  return o >= -tol && f >= -tol && o + f <= 1.0 + tol;
}

Masses dst_combine(Masses a, Masses b) {
  const double afo = a.fo(), bfo = b.fo();
  const double conflict = a.o * b.f + a.f * b.o;
  const double norm = 1.0 - conflict;
  if (norm <= 0.0) throw TotalConflictError();
  return {(a.o * b.o + a.o * bfo + afo * b.o) / norm,
          (a.f * b.f + a.f * bfo + afo * b.f) / norm};
}

Masses age_masses(Masses m, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("aging factor must lie in (0, 1], got " + std::to_string(alpha));
  }
  return {std::min(alpha * m.o, 1.0), std::min(alpha * m.f, 1.0)};
}

double pignistic(Masses m) { return m.o + 0.5 * m.fo(); }

CellClass classify(Masses m) {
  // Masses that differ only by rounding in the residual count as tied.
  constexpr double tie = 1e-12;
  const double u = m.fo();
  if (u >= m.o - tie && u >= m.f - tie) return CellClass::Unknown;
  if (m.o >= m.f - tie) return CellClass::Occupied;
  return CellClass::Free;
}

BeliefGrid::BeliefGrid(std::size_t height, std::size_t width, double resolution)
    : height_(height), width_(width), resolution_(resolution),
      o_(height * width, 0.0), f_(height * width, 0.0) {
  if (height == 0 || width == 0) throw std::invalid_argument("belief grid must be non-empty");
  if (!(resolution > 0.0)) throw std::invalid_argument("grid resolution must be positive");
}

Masses BeliefGrid::at(std::size_t r, std::size_t c) const {
  const std::size_t i = r * width_ + c;
  return {o_[i], f_[i]};
}

void BeliefGrid::set(std::size_t r, std::size_t c, Masses m) {
  const std::size_t i = r * width_ + c;
  o_[i] = m.o;
  f_[i] = m.f;
}

void BeliefGrid::age(double alpha) {
  for (std::size_t i = 0; i < o_.size(); ++i) {
    const Masses m = age_masses({o_[i], f_[i]}, alpha);
    o_[i] = m.o;
    f_[i] = m.f;
  }
}

std::size_t BeliefGrid::fuse(const BeliefGrid& meas, double alpha) {
  if (meas.height_ != height_ || meas.width_ != width_) {
    throw ShapeError("measurement grid does not match belief grid");
  }
  age(alpha);
  std::size_t resets = 0;
  for (std::size_t i = 0; i < o_.size(); ++i) {
    const Masses z{meas.o_[i], meas.f_[i]};
    if (z.o == 0.0 && z.f == 0.0) continue;  // vacuous evidence is the identity
    Masses m;
    try {
      m = dst_combine({o_[i], f_[i]}, z);
    } catch (const TotalConflictError&) {
      m = Masses::vacuous();
      ++resets;
    }
    o_[i] = m.o;
    f_[i] = m.f;
  }
  return resets;
}

std::vector<double> BeliefGrid::pignistic() const {
  std::vector<double> p(o_.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = gridcast::pignistic({o_[i], f_[i]});
  return p;
}

ClassGrid BeliefGrid::classify() const {
  ClassGrid g(height_, width_);
  for (std::size_t i = 0; i < o_.size(); ++i) g.cells[i] = gridcast::classify({o_[i], f_[i]});
  return g;
}

bool BeliefGrid::closure_holds(double tol) const {
  for (std::size_t i = 0; i < o_.size(); ++i) {
    if (!Masses{o_[i], f_[i]}.valid(tol)) return false;
  }
  return true;
}

template <typename Dtype>
Tensor<Dtype> BeliefGrid::to_tensor() const {
  Tensor<Dtype> t({2, height_, width_});
  const std::size_t n = o_.size();
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = static_cast<Dtype>(o_[i]);
    t[n + i] = static_cast<Dtype>(f_[i]);
  }
  return t;
}

template <typename Dtype>
BeliefGrid BeliefGrid::from_tensor(const Tensor<Dtype>& t, double resolution) {
  if (t.rank() != 3 || t.dim(0) != 2) {
    throw ShapeError("mass tensor must be [2,H,W], got " + shape_str(t.shape()));
  }
  BeliefGrid g(t.dim(1), t.dim(2), resolution);
  const std::size_t n = g.o_.size();
  for (std::size_t i = 0; i < n; ++i) {
    g.o_[i] = static_cast<double>(t[i]);
    g.f_[i] = static_cast<double>(t[n + i]);
  }
  return g;
}

template <typename Dtype>
ClassGrid classify_tensor(const Tensor<Dtype>& masses) {
  if (masses.rank() != 3 || masses.dim(0) != 2) {
    throw ShapeError("mass tensor must be [2,H,W], got " + shape_str(masses.shape()));
  }
  ClassGrid g(masses.dim(1), masses.dim(2));
  const std::size_t n = g.cells.size();
  for (std::size_t i = 0; i < n; ++i) {
    g.cells[i] = classify({static_cast<double>(masses[i]), static_cast<double>(masses[n + i])});
  }
  return g;
}

template Tensor<float> BeliefGrid::to_tensor<float>() const;
template Tensor<double> BeliefGrid::to_tensor<double>() const;
template BeliefGrid BeliefGrid::from_tensor<float>(const Tensor<float>&, double);
template BeliefGrid BeliefGrid::from_tensor<double>(const Tensor<double>&, double);
template ClassGrid classify_tensor<float>(const Tensor<float>&);
template ClassGrid classify_tensor<double>(const Tensor<double>&);

}  // namespace gridcast

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "gridcast/tensor.hpp"

namespace gridcast {

/// Belief masses of one cell over {O}, {F}; m({F,O}) is the residual.
struct Masses {
  double o = 0.0;
  double f = 0.0;

  double fo() const { return 1.0 - o - f; }
  static Masses vacuous() { return {}; }
  /// 0 <= o, f and o + f <= 1 (within tol).
  bool valid(double tol = 1e-12) const;
};

/// Dempster's rule would divide by zero.
class TotalConflictError : public std::runtime_error {
 public:
  TotalConflictError() : std::runtime_error("total conflict between belief masses") {}
};

/// Dempster's rule on {F}, {O}, {F,O}:
///   K = a.o b.f + a.f b.o
///   o = (a.o b.o + a.o b.fo + a.fo b.o) / (1 - K)
///   f = (a.f b.f + a.f b.fo + a.fo b.f) / (1 - K)
Masses dst_combine(Masses a, Masses b);

/// Information aging: o <- min(alpha o, 1), f <- min(alpha f, 1).
Masses age_masses(Masses m, double alpha);

/// betP(O) = m(O) + m({F,O}) / 2.
double pignistic(Masses m);

enum class CellClass : std::uint8_t { Free = 0, Occupied = 1, Unknown = 2 };
inline constexpr std::size_t kNumClasses = 3;

/// Largest of m(O), m(F), m({F,O}); ties (within 1e-12) resolve
/// unknown > occupied > free.
CellClass classify(Masses m);

struct ClassGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<CellClass> cells;

  ClassGrid() = default;
  ClassGrid(std::size_t h, std::size_t w, CellClass fill = CellClass::Unknown)
      : height(h), width(w), cells(h * w, fill) {}
  CellClass& at(std::size_t r, std::size_t c) { return cells[r * width + c]; }
  CellClass at(std::size_t r, std::size_t c) const { return cells[r * width + c]; }
};

/// Per-cell masses on an H×W lattice. A fresh grid is vacuous.
class BeliefGrid {
 public:
  BeliefGrid() = default;
  BeliefGrid(std::size_t height, std::size_t width, double resolution);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  double resolution() const { return resolution_; }

  Masses at(std::size_t r, std::size_t c) const;
  void set(std::size_t r, std::size_t c, Masses m);

  /// Ages every cell, then combines with `meas`. Cells in total conflict are
  /// reset to vacuous; returns how many were.
  std::size_t fuse(const BeliefGrid& meas, double alpha);
  void age(double alpha);

  std::vector<double> pignistic() const;
  ClassGrid classify() const;
  bool closure_holds(double tol = 1e-12) const;

  /// [2,H,W] with channel 0 = m(O), channel 1 = m(F).
  template <typename Dtype>
  Tensor<Dtype> to_tensor() const;
  /// Inverse of to_tensor; values are taken as-is.
  template <typename Dtype>
  static BeliefGrid from_tensor(const Tensor<Dtype>& t, double resolution);

  const std::vector<double>& occupied() const { return o_; }
  const std::vector<double>& free() const { return f_; }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  double resolution_ = 1.0;
  std::vector<double> o_, f_;
};

/// Classes of a [2,H,W] mass tensor.
template <typename Dtype>
ClassGrid classify_tensor(const Tensor<Dtype>& masses);

}  // namespace gridcast

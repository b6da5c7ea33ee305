// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gridcast/autograd.hpp"

namespace gridcast {

/// Central-difference gradient of a scalar function:
///   g_i = (f(x + eps·e_i) - f(x - eps·e_i)) / (2·eps)
/// Roundoff is roughly machine_eps·|f|/eps, truncation O(eps²·f''').
template <typename Dtype, typename F>
Tensor<Dtype> finite_diff_grad(F&& f, Tensor<Dtype> x, double eps) {
  Tensor<Dtype> g(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const Dtype orig = x[i];
    x[i] = orig + static_cast<Dtype>(eps);
    const double fp = static_cast<double>(f(x));
    x[i] = orig - static_cast<Dtype>(eps);
    const double fm = static_cast<double>(f(x));
    x[i] = orig;
    g[i] = static_cast<Dtype>((fp - fm) / (2 * eps));
  }
  return g;
}

struct GradCheckReport {
  double max_rel_error = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  double max_abs_error = 0;
  std::size_t checked = 0;
};

/// Runs backward() once and compares every element of every listed parameter
/// against central differences of the same loss. The error metric is
///   |analytic - numeric| / (|numeric| + floor)
/// so floor acts as an absolute tolerance of tol·floor on near-zero gradients.
inline GradCheckReport check_parameter_gradients(
    const std::function<Var<double>(Tape<double>&)>& loss,
    const std::vector<Parameter<double>*>& params, double eps = 1e-5,
    double floor = 1e-12) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  auto eval = [&]() {
    Tape<double> tape;
    return loss(tape).value()[0];
  };
  GradCheckReport report;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      const double fp = eval();
      p->value[i] = orig - eps;
      const double fm = eval();
      p->value[i] = orig;
      const double numeric = (fp - fm) / (2 * eps);
      const double analytic = p->grad[i];
      const double rel = std::abs(analytic - numeric) / (std::abs(numeric) + floor);
      ++report.checked;
      report.max_abs_error = std::max(report.max_abs_error, std::abs(analytic - numeric));
      if (rel > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = std::max(rel, report.max_rel_error);
        report.worst_param = p->name;
        report.worst_index = i;
        report.worst_analytic = analytic;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace gridcast

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gridcast/world.hpp"
#include "json.hpp"

namespace gridcast {

/// Mean squared difference over all channels and cells.
template <typename Dtype>
double mse(const Tensor<Dtype>& pred, const Tensor<Dtype>& target);

/// Mean absolute difference over all elements.
template <typename Dtype>
double mean_abs_error(const Tensor<Dtype>& pred, const Tensor<Dtype>& target);

/// Manhattan distance from every cell to the nearest cell of class `c` in
/// `g` (multi-source BFS); H+W everywhere when `g` has no such cell.
std::vector<std::size_t> class_distance_map(const ClassGrid& g, CellClass c);

/// d(m1, m2, c): mean over class-c cells of m1 of the distance to the nearest
/// class-c cell of m2. 0 when m1 has no class-c cell.
double directed_class_distance(const ClassGrid& m1, const ClassGrid& m2, CellClass c);

/// ψ(m1, m2) = Σ_c d(m1, m2, c) + d(m2, m1, c).
double image_similarity(const ClassGrid& m1, const ClassGrid& m2);

struct MobbmStep {
  double value = 0.0;          // predicted / target, NaN when skipped
  std::size_t predicted = 0;   // occupied cells inside boxes, prediction
  std::size_t target = 0;      // occupied cells inside boxes, target
  bool skipped = false;        // target count was 0
};

/// Ratio of occupied cells inside the ground-truth boxes, prediction over
/// target, per step.
MobbmStep mobbm_step(const ClassGrid& pred, const ClassGrid& target,
                     const std::vector<bool>& box_mask);
std::vector<MobbmStep> mobbm(const std::vector<ClassGrid>& pred,
                             const std::vector<ClassGrid>& target,
                             const std::vector<std::vector<bool>>& box_masks);

/// Maps N input frames [N,2,H,W] to P predictions [P,2,H,W].
using Predictor = std::function<Tensor<float>(const Tensor<float>& inputs, std::size_t horizon)>;

/// Repeats the last input frame.
Predictor persistence_predictor();

struct EvalReport {
  std::string model_id;
  std::string dataset_id;
  std::size_t input_length = 0;  // N
  std::size_t horizon = 0;       // P
  std::size_t episodes = 0;

  // Per predicted step: mean over episodes and its standard error.
  std::vector<double> mse, mse_se;
  std::vector<double> is, is_se;
  std::vector<double> mobbm, mobbm_se;  // NaN where every episode was skipped
  std::vector<std::size_t> mobbm_count;  // episodes contributing per step

  // Per-episode horizon means, then mean ± standard error over episodes.
  double mean_mse = 0.0, mean_mse_se = 0.0;
  double mean_is = 0.0, mean_is_se = 0.0;
  double mean_mobbm = 0.0, mean_mobbm_se = 0.0;

  std::vector<std::string> warnings;

  /// One JSON record per step followed by a {"summary": ...} record.
  std::string to_jsonl() const;
  nlohmann::json summary() const;
};

/// Feeds frames [start, start+N) of every episode to `predict` and scores
/// the P following frames. MOBBM values are clipped at 1 before averaging.
EvalReport evaluate(const Predictor& predict, const std::vector<EpisodeRecord>& episodes,
                    std::size_t input_length, std::size_t horizon, std::size_t start = 0);

/// Mean and standard error (sample standard deviation / sqrt(n); 0 when n < 2).
std::pair<double, double> mean_and_se(const std::vector<double>& xs);

}  // namespace gridcast

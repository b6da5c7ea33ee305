// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gridcast/prednet.hpp"
#include "gridcast/world.hpp"

namespace gridcast {

/// Mean absolute error over all predicted frames, channels and cells.
/// targets is [P,C,H,W].
template <typename Dtype>
Var<Dtype> l1_sequence_loss(const std::vector<Var<Dtype>>& preds, const Tensor<Dtype>& targets);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list.
template <typename Dtype>
class Adam {
 public:
  Adam(std::vector<Parameter<Dtype>*> params, AdamConfig cfg);

  /// Applies one update from each parameter's grad.
  void step();
  std::size_t steps() const { return t_; }
  const Tensor<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const Tensor<double>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Parameter<Dtype>*> params_;
  AdamConfig cfg_;
  std::vector<Tensor<double>> m_, v_;
  std::size_t t_ = 0;
};

template <typename Dtype>
double global_grad_norm(const std::vector<Parameter<Dtype>*>& params);

/// Rescales all gradients so their global L2 norm is at most `max_norm`
/// (no-op when max_norm <= 0). Returns the norm before clipping.
template <typename Dtype>
double clip_grad_norm(const std::vector<Parameter<Dtype>*>& params, double max_norm);

struct TrainConfig {
  std::size_t input_length = 5;  // N
  std::size_t horizon = 15;      // P
  std::size_t epochs = 200;
  std::size_t samples_per_epoch = 32;
  std::size_t batch = 4;
  AdamConfig adam;
  double clip = 1.0;
  std::size_t truncation = 0;  // 0 = backprop through the whole rollout
  std::uint64_t seed = 0;
};

/// A training window: frames [start, start + N + P) of one episode.
struct Window {
  std::size_t episode = 0;
  std::size_t start = 0;
};

std::vector<Window> enumerate_windows(const std::vector<EpisodeRecord>& data, std::size_t length);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean sample loss over the epoch
  double grad_norm = 0.0; // mean pre-clip norm
  double seconds = 0.0;
  bool best = false;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_loss = 0.0;
};

/// Called after every epoch; may save checkpoints.
using EpochCallback = std::function<void(const EpochStats&)>;
/// Called with a message when the loss or a gradient stops being finite,
/// before train() throws NumericalError.
using DivergenceCallback = std::function<void(const std::string&)>;

/// Each epoch visits `samples_per_epoch` windows drawn from successive seeded
/// permutations of all windows. Gradients are averaged over `batch` samples,
/// clipped, and applied with Adam. Loss covers predicted frames only.
TrainResult train(SequenceModel<float>& model, const std::vector<EpisodeRecord>& data,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {},
                  const DivergenceCallback& on_divergence = {});

/// Loss of one window without updating anything.
double window_loss(const SequenceModel<float>& model, const EpisodeRecord& ep, std::size_t start,
                   std::size_t input_length, std::size_t horizon);

}  // namespace gridcast

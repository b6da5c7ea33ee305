// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gridcast/cells.hpp"
#include "json.hpp"

namespace gridcast {

/// Hyperparameters of a predictive-coding stack. Layer 0 works on the input
/// grid; layer l on a grid downsampled by 2^l.
struct StackConfig {
  std::vector<std::size_t> channels{2, 16, 32};  // A_l and R_l channels
  std::vector<std::size_t> kernels{3, 3, 3};
  std::vector<CellKind> kinds{CellKind::ConvLSTM, CellKind::ConvLSTM, CellKind::ConvLSTM};
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t input_channels = 2;
  std::size_t heads = 4;    // N_h
  std::size_t horizon = 4;  // H_a
  double attention_fraction = 0.25;
  std::size_t attention_channels = 0;
  bool relative = true;
  GateParamLayout layout = GateParamLayout::PerChannel;
  HistoryMode history_mode = HistoryMode::Recent;
  bool detach_history = false;

  std::size_t num_layers() const { return channels.size(); }
  void validate() const;
  CellConfig cell_config(std::size_t layer) const;

  nlohmann::json to_json() const;
  static StackConfig from_json(const nlohmann::json& j);

  /// 3 layers {2,16,32} on 32×32 grids.
  static StackConfig desk();
  /// 4 layers {2,48,96,192}, 3×3 kernels, 128×128 grids.
  static StackConfig full_scale();
};

/// Cell placement of the named variants:
///   "prednet": ConvLSTM everywhere
///   "taa":     TAAConvLSTM in the top layer
///   "saa":     SAAConvLSTM in the top two layers
void apply_variant(StackConfig& cfg, const std::string& variant);
std::string variant_name(const StackConfig& cfg);

/// Common surface of the trainable sequence predictors.
template <typename Dtype>
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;

  /// Feeds frames[0..N) then predicts P frames, each recursively fed back.
  /// frames is [N,C,H,W]; returns P tensors [C,H,W] on the tape.
  virtual std::vector<Var<Dtype>> rollout(Tape<Dtype>& tape, const Tensor<Dtype>& frames,
                                          std::size_t horizon) const = 0;
  virtual ParamStore<Dtype>& params() = 0;
  virtual const ParamStore<Dtype>& params() const = 0;
  /// Architecture description sufficient to rebuild the model.
  virtual nlohmann::json manifest() const = 0;
  /// Applies a head mask to every attention layer listed; no-op elsewhere.
  virtual void set_head_mask(std::size_t layer, const HeadMask& mask) = 0;
  virtual std::vector<std::size_t> attention_layers() const = 0;

  /// Convenience: rollout values stacked into [P,C,H,W].
  Tensor<Dtype> predict(const Tensor<Dtype>& frames, std::size_t horizon) const;

  /// Cuts gradient flow through the recurrent state every `steps` steps of a
  /// rollout (0 disables truncation).
  void set_truncation(std::size_t steps) { truncation_ = steps; }
  std::size_t truncation() const { return truncation_; }

 protected:
  bool cut_after(std::size_t step) const {
    return truncation_ > 0 && (step + 1) % truncation_ == 0;
  }

  std::size_t truncation_ = 0;
};

/// Layer quantities of one step: target A, prediction Â, error E, and the
/// recurrent representation R with its cell memory.
template <typename Dtype>
struct LayerState {
  Var<Dtype> A;
  Var<Dtype> A_hat;
  Var<Dtype> E;
  CellState<Dtype> R;
};

/// Predictive-coding stack:
///   A_0 = x_t,  A_l = MaxPool(ReLU(Conv(E_{l-1})))
///   Â_l = ReLU(Conv(R_l))
///   E_l = [ReLU(A_l - Â_l); ReLU(Â_l - A_l)]
///   R_l = Cell(E_l^{t-1}, Upsample(R_{l+1}^t))
/// R is updated top-down first, then A/Â/E bottom-up. Â_0 is clamped to
/// [0,1] and renormalized so m_O + m_F <= 1; it is the prediction of x_t.
template <typename Dtype>
class PredNet : public SequenceModel<Dtype> {
 public:
  using State = std::vector<LayerState<Dtype>>;

  struct StepResult {
    Var<Dtype> prediction;
    State state;
  };

  PredNet(const StackConfig& cfg, std::uint64_t seed);

  State initial_state(Tape<Dtype>& tape) const;
  /// An invalid `frame` recycles the step's own prediction as A_0.
  StepResult step(Var<Dtype> frame, const State& state) const;

  std::vector<Var<Dtype>> rollout(Tape<Dtype>& tape, const Tensor<Dtype>& frames,
                                  std::size_t horizon) const override;
  ParamStore<Dtype>& params() override { return store_; }
  const ParamStore<Dtype>& params() const override { return store_; }
  nlohmann::json manifest() const override;
  void set_head_mask(std::size_t layer, const HeadMask& mask) override;
  std::vector<std::size_t> attention_layers() const override;

  const StackConfig& config() const { return cfg_; }
  const RecurrentCell<Dtype>& cell(std::size_t layer) const { return *cells_.at(layer); }

 private:
  StackConfig cfg_;
  ParamStore<Dtype> store_;
  std::vector<std::unique_ptr<RecurrentCell<Dtype>>> cells_;
  std::vector<Parameter<Dtype>*> ahat_w_, ahat_b_, a_w_, a_b_;
};

struct PredRNNConfig {
  std::vector<std::size_t> hidden{64, 64, 64, 64};
  std::size_t kernel = 5;
  std::size_t patch = 4;
  std::size_t input_channels = 2;
  std::size_t height = 32;
  std::size_t width = 32;

  void validate() const;
  nlohmann::json to_json() const;
  static PredRNNConfig from_json(const nlohmann::json& j);
};

/// PredRNN++: stacked causal LSTMs with a gradient highway unit between the
/// first and second layers. Frames are space-to-depth reshaped by `patch`;
/// the spatial memory M zigzags upward through the layers within a step and
/// from the top layer to the bottom layer across steps. A 1×1 convolution
/// maps the top hidden state back to patch channels, followed by
/// depth-to-space and the same mass clamp as PredNet.
template <typename Dtype>
class PredRNNpp : public SequenceModel<Dtype> {
 public:
  struct State {
    std::vector<Var<Dtype>> H, C;
    Var<Dtype> M;
    Var<Dtype> Z;
  };

  PredRNNpp(const PredRNNConfig& cfg, std::uint64_t seed);

  State initial_state(Tape<Dtype>& tape) const;
  /// Consumes x_t, returns the prediction of x_{t+1}.
  std::pair<Var<Dtype>, State> step(Var<Dtype> frame, const State& state) const;

  std::vector<Var<Dtype>> rollout(Tape<Dtype>& tape, const Tensor<Dtype>& frames,
                                  std::size_t horizon) const override;
  ParamStore<Dtype>& params() override { return store_; }
  const ParamStore<Dtype>& params() const override { return store_; }
  nlohmann::json manifest() const override;
  void set_head_mask(std::size_t, const HeadMask&) override {}
  std::vector<std::size_t> attention_layers() const override { return {}; }

  const PredRNNConfig& config() const { return cfg_; }

 private:
  PredRNNConfig cfg_;
  ParamStore<Dtype> store_;
  std::vector<CausalLSTMCell<Dtype>> cells_;
  std::unique_ptr<GradientHighwayUnit<Dtype>> ghu_;
  Parameter<Dtype>* head_w_ = nullptr;
  Parameter<Dtype>* head_b_ = nullptr;
};

/// Builds a model from a manifest produced by SequenceModel::manifest().
template <typename Dtype>
std::unique_ptr<SequenceModel<Dtype>> build_model(const nlohmann::json& manifest,
                                                  std::uint64_t seed);

/// Maps a raw layer-0 output onto valid mass pairs: clamp to [0,1], then
/// rescale cells whose m_O + m_F exceeds 1.
template <typename Dtype>
Var<Dtype> to_valid_masses(Var<Dtype> raw);

}  // namespace gridcast

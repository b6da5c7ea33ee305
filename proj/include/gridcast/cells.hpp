// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "gridcast/attention.hpp"

namespace gridcast {

/// Shape of the elementwise gate parameters (peepholes W_c and biases b).
///   PerCell:    d×H×W, one value per gate, channel and cell.
///   PerChannel: d, broadcast over the grid (the PredNet reference layout).
enum class GateParamLayout { PerChannel, PerCell };

/// Which stored hidden states feed temporal attention.
///   Recent:  the H_a most recent states before H_{t-1}.
///   Uniform: H_a states spread over the last `uniform_span` steps.
enum class HistoryMode { Recent, Uniform };

enum class CellKind { ConvLSTM, TAAConvLSTM, SAAConvLSTM };

std::string to_string(CellKind kind);
CellKind cell_kind_from_string(const std::string& s);
std::string to_string(GateParamLayout layout);
GateParamLayout gate_layout_from_string(const std::string& s);
std::string to_string(HistoryMode mode);
HistoryMode history_mode_from_string(const std::string& s);

struct CellConfig {
  CellKind kind = CellKind::ConvLSTM;
  std::size_t in_channels = 0;
  std::size_t hidden = 0;  // d
  std::size_t kernel = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  GateParamLayout layout = GateParamLayout::PerChannel;

  // Attention variants only.
  std::size_t heads = 4;
  std::size_t horizon = 4;  // H_a, temporal attention only
  double attention_fraction = 0.25;
  std::size_t attention_channels = 0;  // overrides the fraction when non-zero
  bool relative = true;
  HistoryMode history_mode = HistoryMode::Recent;
  std::size_t uniform_span = 10;
  bool detach_history = false;
};

/// H_t, C_t and, for temporal attention, past hidden states. history[0] is
/// the most recent stored state; H itself is never in history.
template <typename Dtype>
struct CellState {
  Var<Dtype> H;
  Var<Dtype> C;
  std::deque<Var<Dtype>> history;
  std::size_t steps = 0;
};

/// Gate order i, f, c, o.
inline constexpr std::array<const char*, 4> kGateNames = {"i", "f", "c", "o"};

template <typename Dtype>
class RecurrentCell {
 public:
  explicit RecurrentCell(CellConfig cfg) : cfg_(std::move(cfg)) {}
  virtual ~RecurrentCell() = default;

  const CellConfig& config() const { return cfg_; }
  CellKind kind() const { return cfg_.kind; }

  /// Zero H and C on the configured grid.
  CellState<Dtype> initial_state(Tape<Dtype>& tape) const;
  virtual CellState<Dtype> step(Var<Dtype> x, const CellState<Dtype>& state) const = 0;

  /// Only meaningful for attention cells.
  virtual void set_head_mask(const HeadMask&) {}
  virtual HeadMask head_mask() const { return {}; }

 protected:
  void check_step_inputs(Var<Dtype> x, const CellState<Dtype>& state) const;

  CellConfig cfg_;
};

/// Elementwise gate parameters shared by all three ConvLSTM variants:
/// keys "cell.{layer}.{gate}.wc" (gates i, f, o) and "cell.{layer}.{gate}.b".
template <typename Dtype>
struct GateParams {
  std::array<Parameter<Dtype>*, 4> peephole{};  // c-gate entry unused
  std::array<Parameter<Dtype>*, 4> bias{};
};

/// Applies the LSTM gate arithmetic given the per-gate input-side and
/// state-side pre-activation terms:
///   i = σ(x_i + h_i + W_ci∘C_{t-1} + b_i)
///   f = σ(x_f + h_f + W_cf∘C_{t-1} + b_f)
///   C_t = f∘C_{t-1} + i∘tanh(x_c + h_c + b_c)
///   o = σ(x_o + h_o + W_co∘C_t + b_o)
///   H_t = o∘tanh(C_t)
template <typename Dtype>
std::pair<Var<Dtype>, Var<Dtype>> lstm_gates(const std::array<Var<Dtype>, 4>& x_terms,
                                             const std::array<Var<Dtype>, 4>& h_terms,
                                             Var<Dtype> c_prev, const GateParams<Dtype>& gp,
                                             GateParamLayout layout);

template <typename Dtype>
class ConvLSTMCell : public RecurrentCell<Dtype> {
 public:
  /// Keys "cell.{layer}.{gate}.{wx|wh|wc|b}".
  ConvLSTMCell(ParamStore<Dtype>& store, const std::string& prefix, const CellConfig& cfg);
  CellState<Dtype> step(Var<Dtype> x, const CellState<Dtype>& state) const override;

  std::array<Parameter<Dtype>*, 4> wx{}, wh{};
  GateParams<Dtype> gates;
};

/// ConvLSTM whose state-to-state convolutions are replaced by TAAConv over
/// H_{t-1} and the stored history. The temporal attention output is computed
/// once per step and shared by all four gates; each gate has its own
/// convolution branch ("cell.{layer}.{gate}.wh" with d - d_v outputs).
template <typename Dtype>
class TAAConvLSTMCell : public RecurrentCell<Dtype> {
 public:
  TAAConvLSTMCell(ParamStore<Dtype>& store, const std::string& prefix,
                  const std::string& att_prefix, const CellConfig& cfg);
  CellState<Dtype> step(Var<Dtype> x, const CellState<Dtype>& state) const override;
  void set_head_mask(const HeadMask& m) override;
  HeadMask head_mask() const override { return mask_; }

  /// The frames temporal attention will see for this state.
  std::vector<Var<Dtype>> attended_history(const CellState<Dtype>& state) const;
  std::size_t history_capacity() const;

  AugmentedSplit split;
  std::array<Parameter<Dtype>*, 4> wx{}, wh{};
  GateParams<Dtype> gates;
  TemporalAttentionParams<Dtype> attention;

 private:
  HeadMask mask_;
};

/// ConvLSTM whose input-to-state convolutions are replaced by SAAConv over
/// X_t; the self-attention output is shared by all four gates.
template <typename Dtype>
class SAAConvLSTMCell : public RecurrentCell<Dtype> {
 public:
  SAAConvLSTMCell(ParamStore<Dtype>& store, const std::string& prefix,
                  const std::string& att_prefix, const CellConfig& cfg);
  CellState<Dtype> step(Var<Dtype> x, const CellState<Dtype>& state) const override;
  void set_head_mask(const HeadMask& m) override;
  HeadMask head_mask() const override { return mask_; }

  AugmentedSplit split;
  std::array<Parameter<Dtype>*, 4> wx{}, wh{};
  GateParams<Dtype> gates;
  AttentionParams<Dtype> attention;

 private:
  HeadMask mask_;
};

template <typename Dtype>
std::unique_ptr<RecurrentCell<Dtype>> make_cell(ParamStore<Dtype>& store,
                                                const std::string& cell_prefix,
                                                const std::string& att_prefix,
                                                const CellConfig& cfg);

// --- PredRNN++ building blocks ---------------------------------------------

struct CausalLSTMConfig {
  std::size_t in_channels = 0;
  std::size_t hidden = 0;
  std::size_t kernel = 5;
};

/// Causal LSTM with temporal memory C and spatial memory M:
///   (g,i,f)   = (tanh,σ,σ)(W_1 ∗ [X, H_{t-1}, C_{t-1}])
///   C_t       = f∘C_{t-1} + i∘g
///   (g',i',f') = (tanh,σ,σ)(W_2 ∗ [X, C_t, M^{k-1}])
///   M_t       = f'∘tanh(W_3 ∗ M^{k-1}) + i'∘g'
///   o         = tanh(W_4 ∗ [X, C_t, M_t])
///   H_t       = o∘tanh(W_5 ∗ [C_t, M_t])      (W_5 is 1×1)
/// Keys "{prefix}.w1".."w5" and matching ".b1".."b5".
template <typename Dtype>
class CausalLSTMCell {
 public:
  struct Output {
    Var<Dtype> H, C, M;
  };

  CausalLSTMCell(ParamStore<Dtype>& store, const std::string& prefix,
                 const CausalLSTMConfig& cfg);
  Output step(Var<Dtype> x, Var<Dtype> h_prev, Var<Dtype> c_prev, Var<Dtype> m_below) const;
  const CausalLSTMConfig& config() const { return cfg_; }

  std::array<Parameter<Dtype>*, 5> w{}, b{};

 private:
  CausalLSTMConfig cfg_;
};

/// Gradient highway unit:
///   P = tanh(W_px ∗ X + W_pz ∗ Z_{t-1}),  S = σ(W_sx ∗ X + W_sz ∗ Z_{t-1})
///   Z_t = S∘P + (1 - S)∘Z_{t-1}
template <typename Dtype>
class GradientHighwayUnit {
 public:
  GradientHighwayUnit(ParamStore<Dtype>& store, const std::string& prefix,
                      std::size_t in_channels, std::size_t hidden, std::size_t kernel);
  Var<Dtype> step(Var<Dtype> x, Var<Dtype> z_prev) const;

  Parameter<Dtype>* w_px = nullptr;
  Parameter<Dtype>* w_pz = nullptr;
  Parameter<Dtype>* w_sx = nullptr;
  Parameter<Dtype>* w_sz = nullptr;
  Parameter<Dtype>* b_p = nullptr;
  Parameter<Dtype>* b_s = nullptr;
  std::size_t hidden = 0;
};

}  // namespace gridcast

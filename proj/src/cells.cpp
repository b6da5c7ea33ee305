// SPDX-License-Identifier: Apache-2.0
#include "gridcast/cells.hpp"

#include <cmath>
#include <stdexcept>

namespace gridcast {

std::string to_string(CellKind kind) {
  switch (kind) {
    case CellKind::ConvLSTM: return "convlstm";
    case CellKind::TAAConvLSTM: return "taaconvlstm";
    case CellKind::SAAConvLSTM: return "saaconvlstm";
  }
  return "?";
}

CellKind cell_kind_from_string(const std::string& s) {
  if (s == "convlstm") return CellKind::ConvLSTM;
  if (s == "taaconvlstm") return CellKind::TAAConvLSTM;
  if (s == "saaconvlstm") return CellKind::SAAConvLSTM;
  throw std::invalid_argument("unknown cell kind \"" + s + "\"");
}

std::string to_string(GateParamLayout layout) {
  return layout == GateParamLayout::PerChannel ? "channel" : "cell";
}

GateParamLayout gate_layout_from_string(const std::string& s) {
  if (s == "channel") return GateParamLayout::PerChannel;
  if (s == "cell") return GateParamLayout::PerCell;
  throw std::invalid_argument("unknown gate parameter layout \"" + s + "\"");
}

std::string to_string(HistoryMode mode) {
  return mode == HistoryMode::Recent ? "recent" : "uniform";
}

HistoryMode history_mode_from_string(const std::string& s) {
  if (s == "recent") return HistoryMode::Recent;
  if (s == "uniform") return HistoryMode::Uniform;
  throw std::invalid_argument("unknown history mode \"" + s + "\"");
}

namespace {

template <typename Dtype>
Parameter<Dtype>& conv_weight(ParamStore<Dtype>& store, const std::string& name,
                              std::size_t out, std::size_t in, std::size_t k) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  return store.uniform(name, {out, in, k, k}, bound);
}

template <typename Dtype>
GateParams<Dtype> make_gate_params(ParamStore<Dtype>& store, const std::string& prefix,
                                   const CellConfig& cfg) {
  GateParams<Dtype> gp;
  const Shape s = cfg.layout == GateParamLayout::PerChannel
                      ? Shape{cfg.hidden}
                      : Shape{cfg.hidden, cfg.height, cfg.width};
  for (std::size_t g = 0; g < 4; ++g) {
    const std::string gate = prefix + "." + kGateNames[g] + ".";
    if (g != 2) gp.peephole[g] = &store.constant(gate + "wc", s, 0.0);
    gp.bias[g] = &store.constant(gate + "b", s, 0.0);
  }
  return gp;
}

void validate_cell(const CellConfig& cfg) {
  if (cfg.in_channels == 0 || cfg.hidden == 0) {
    throw std::invalid_argument("cell needs positive input and hidden channel counts");
  }
  if (cfg.kernel % 2 == 0) throw std::invalid_argument("cell kernel size must be odd");
  if (cfg.height == 0 || cfg.width == 0) throw std::invalid_argument("cell grid size unset");
}

}  // namespace

template <typename Dtype>
CellState<Dtype> RecurrentCell<Dtype>::initial_state(Tape<Dtype>& tape) const {
  CellState<Dtype> s;
  s.H = zeros(tape, {cfg_.hidden, cfg_.height, cfg_.width});
  s.C = zeros(tape, {cfg_.hidden, cfg_.height, cfg_.width});
  return s;
}

template <typename Dtype>
void RecurrentCell<Dtype>::check_step_inputs(Var<Dtype> x, const CellState<Dtype>& state) const {
  const Shape want_x{cfg_.in_channels, cfg_.height, cfg_.width};
  const Shape want_h{cfg_.hidden, cfg_.height, cfg_.width};
  if (x.shape() != want_x) {
    throw ShapeError("cell input " + shape_str(x.shape()) + ", expected " + shape_str(want_x));
  }
  if (state.H.shape() != want_h || state.C.shape() != want_h) {
    throw ShapeError("cell state " + shape_str(state.H.shape()) + "/" +
                     shape_str(state.C.shape()) + ", expected " + shape_str(want_h));
  }
}

template <typename Dtype>
std::pair<Var<Dtype>, Var<Dtype>> lstm_gates(const std::array<Var<Dtype>, 4>& x_terms,
                                             const std::array<Var<Dtype>, 4>& h_terms,
                                             Var<Dtype> c_prev, const GateParams<Dtype>& gp,
                                             GateParamLayout layout) {
  auto& tape = c_prev.tape();
  auto peep = [&](std::size_t g, Var<Dtype> c) {
    Var<Dtype> w = tape.param(*gp.peephole[g]);
    return layout == GateParamLayout::PerChannel ? mul_channel(c, w) : mul(c, w);
  };
  auto bias = [&](std::size_t g, Var<Dtype> v) {
    Var<Dtype> b = tape.param(*gp.bias[g]);
    return layout == GateParamLayout::PerChannel ? add_channel(v, b) : add(v, b);
  };
  Var<Dtype> i = sigmoid(bias(0, x_terms[0] + h_terms[0] + peep(0, c_prev)));
  Var<Dtype> f = sigmoid(bias(1, x_terms[1] + h_terms[1] + peep(1, c_prev)));
  Var<Dtype> c = f * c_prev + i * tanh(bias(2, x_terms[2] + h_terms[2]));
  Var<Dtype> o = sigmoid(bias(3, x_terms[3] + h_terms[3] + peep(3, c)));
  Var<Dtype> h = o * tanh(c);
  return {h, c};
}

// --- ConvLSTM ----------------------------------------------------------------

template <typename Dtype>
ConvLSTMCell<Dtype>::ConvLSTMCell(ParamStore<Dtype>& store, const std::string& prefix,
                                  const CellConfig& cfg)
    : RecurrentCell<Dtype>(cfg) {
  validate_cell(cfg);
  for (std::size_t g = 0; g < 4; ++g) {
    const std::string gate = prefix + "." + kGateNames[g] + ".";
    wx[g] = &conv_weight(store, gate + "wx", cfg.hidden, cfg.in_channels, cfg.kernel);
    wh[g] = &conv_weight(store, gate + "wh", cfg.hidden, cfg.hidden, cfg.kernel);
  }
  gates = make_gate_params(store, prefix, cfg);
}

template <typename Dtype>
CellState<Dtype> ConvLSTMCell<Dtype>::step(Var<Dtype> x, const CellState<Dtype>& state) const {
  this->check_step_inputs(x, state);
  auto& tape = x.tape();
  std::array<Var<Dtype>, 4> xt, ht;
  for (std::size_t g = 0; g < 4; ++g) {
    xt[g] = conv2d(x, tape.param(*wx[g]));
    ht[g] = conv2d(state.H, tape.param(*wh[g]));
  }
  auto [h, c] = lstm_gates(xt, ht, state.C, gates, this->cfg_.layout);
  CellState<Dtype> next;
  next.H = h;
  next.C = c;
  next.steps = state.steps + 1;
  return next;
}

// --- TAAConvLSTM -------------------------------------------------------------

template <typename Dtype>
TAAConvLSTMCell<Dtype>::TAAConvLSTMCell(ParamStore<Dtype>& store, const std::string& prefix,
                                        const std::string& att_prefix, const CellConfig& cfg)
    : RecurrentCell<Dtype>(cfg),
      split(split_augmented_channels(cfg.hidden, cfg.heads, cfg.attention_fraction,
                                     cfg.attention_channels)) {
  validate_cell(cfg);
  for (std::size_t g = 0; g < 4; ++g) {
    const std::string gate = prefix + "." + kGateNames[g] + ".";
    wx[g] = &conv_weight(store, gate + "wx", cfg.hidden, cfg.in_channels, cfg.kernel);
    wh[g] = &conv_weight(store, gate + "wh", split.conv_channels, cfg.hidden, cfg.kernel);
  }
  gates = make_gate_params(store, prefix, cfg);
  AttentionConfig ac;
  ac.in_channels = cfg.hidden;
  ac.heads = cfg.heads;
  ac.key_channels = split.key_channels;
  ac.value_channels = split.value_channels;
  ac.relative = cfg.relative;
  ac.height = cfg.height;
  ac.width = cfg.width;
  attention = TemporalAttentionParams<Dtype>(store, att_prefix, ac, cfg.horizon);
  mask_ = HeadMask::all(cfg.heads);
}

template <typename Dtype>
void TAAConvLSTMCell<Dtype>::set_head_mask(const HeadMask& m) {
  if (m.size() != this->cfg_.heads) {
    throw std::invalid_argument("head mask size " + std::to_string(m.size()) +
                                " does not match " + std::to_string(this->cfg_.heads) +
                                " heads");
  }
  mask_ = m;
}

template <typename Dtype>
std::size_t TAAConvLSTMCell<Dtype>::history_capacity() const {
  const auto& cfg = this->cfg_;
  return cfg.history_mode == HistoryMode::Recent ? cfg.horizon
                                                 : std::max(cfg.horizon, cfg.uniform_span);
}

template <typename Dtype>
std::vector<Var<Dtype>> TAAConvLSTMCell<Dtype>::attended_history(
    const CellState<Dtype>& state) const {
  const std::size_t ha = this->cfg_.horizon, n = state.history.size();
  std::vector<Var<Dtype>> out;
  if (n <= ha) {
    out.assign(state.history.begin(), state.history.end());
  } else if (this->cfg_.history_mode == HistoryMode::Recent || ha == 1) {
    out.assign(state.history.begin(), state.history.begin() + static_cast<long>(ha));
  } else {
    for (std::size_t k = 0; k < ha; ++k) {
      const std::size_t idx = static_cast<std::size_t>(
          std::lround(static_cast<double>(k) * static_cast<double>(n - 1) /
                      static_cast<double>(ha - 1)));
      out.push_back(state.history[idx]);
    }
  }
  return out;
}

template <typename Dtype>
CellState<Dtype> TAAConvLSTMCell<Dtype>::step(Var<Dtype> x, const CellState<Dtype>& state) const {
  this->check_step_inputs(x, state);
  auto& tape = x.tape();
  const auto& cfg = this->cfg_;
  const std::vector<Var<Dtype>> frames = attended_history(state);
  Var<Dtype> att = frames.empty()
                       ? zeros(tape, {split.value_channels, cfg.height, cfg.width})
                       : multi_head_temporal_attention(
                             attention, state.H, std::span<const Var<Dtype>>(frames), mask_);
  std::array<Var<Dtype>, 4> xt, ht;
  for (std::size_t g = 0; g < 4; ++g) {
    xt[g] = conv2d(x, tape.param(*wx[g]));
    ht[g] = concat({conv2d(state.H, tape.param(*wh[g])), att}, 0);
  }
  auto [h, c] = lstm_gates(xt, ht, state.C, gates, cfg.layout);
  CellState<Dtype> next;
  next.H = h;
  next.C = c;
  next.steps = state.steps + 1;
  next.history = state.history;
  if (state.steps >= 1) {
    next.history.push_front(cfg.detach_history ? tape.constant(state.H.value()) : state.H);
    while (next.history.size() > history_capacity()) next.history.pop_back();
  }
  return next;
}

// --- SAAConvLSTM -------------------------------------------------------------

template <typename Dtype>
SAAConvLSTMCell<Dtype>::SAAConvLSTMCell(ParamStore<Dtype>& store, const std::string& prefix,
                                        const std::string& att_prefix, const CellConfig& cfg)
    : RecurrentCell<Dtype>(cfg),
      split(split_augmented_channels(cfg.hidden, cfg.heads, cfg.attention_fraction,
                                     cfg.attention_channels)) {
  validate_cell(cfg);
  for (std::size_t g = 0; g < 4; ++g) {
    const std::string gate = prefix + "." + kGateNames[g] + ".";
    wx[g] = &conv_weight(store, gate + "wx", split.conv_channels, cfg.in_channels, cfg.kernel);
    wh[g] = &conv_weight(store, gate + "wh", cfg.hidden, cfg.hidden, cfg.kernel);
  }
  gates = make_gate_params(store, prefix, cfg);
  AttentionConfig ac;
  ac.in_channels = cfg.in_channels;
  ac.heads = cfg.heads;
  ac.key_channels = split.key_channels;
  ac.value_channels = split.value_channels;
  ac.relative = cfg.relative;
  ac.height = cfg.height;
  ac.width = cfg.width;
  attention = AttentionParams<Dtype>(store, att_prefix, ac);
  mask_ = HeadMask::all(cfg.heads);
}

template <typename Dtype>
void SAAConvLSTMCell<Dtype>::set_head_mask(const HeadMask& m) {
  if (m.size() != this->cfg_.heads) {
    throw std::invalid_argument("head mask size " + std::to_string(m.size()) +
                                " does not match " + std::to_string(this->cfg_.heads) +
                                " heads");
  }
  mask_ = m;
}

template <typename Dtype>
CellState<Dtype> SAAConvLSTMCell<Dtype>::step(Var<Dtype> x, const CellState<Dtype>& state) const {
  this->check_step_inputs(x, state);
  auto& tape = x.tape();
  Var<Dtype> att = multi_head_attention(attention, x, x, mask_);
  std::array<Var<Dtype>, 4> xt, ht;
  for (std::size_t g = 0; g < 4; ++g) {
    xt[g] = concat({conv2d(x, tape.param(*wx[g])), att}, 0);
    ht[g] = conv2d(state.H, tape.param(*wh[g]));
  }
  auto [h, c] = lstm_gates(xt, ht, state.C, gates, this->cfg_.layout);
  CellState<Dtype> next;
  next.H = h;
  next.C = c;
  next.steps = state.steps + 1;
  return next;
}

template <typename Dtype>
std::unique_ptr<RecurrentCell<Dtype>> make_cell(ParamStore<Dtype>& store,
                                                const std::string& cell_prefix,
                                                const std::string& att_prefix,
                                                const CellConfig& cfg) {
  switch (cfg.kind) {
    case CellKind::ConvLSTM:
      return std::make_unique<ConvLSTMCell<Dtype>>(store, cell_prefix, cfg);
    case CellKind::TAAConvLSTM:
      return std::make_unique<TAAConvLSTMCell<Dtype>>(store, cell_prefix, att_prefix, cfg);
    case CellKind::SAAConvLSTM:
      return std::make_unique<SAAConvLSTMCell<Dtype>>(store, cell_prefix, att_prefix, cfg);
  }
  throw std::invalid_argument("unknown cell kind");
}

// --- Causal LSTM / GHU -------------------------------------------------------

template <typename Dtype>
CausalLSTMCell<Dtype>::CausalLSTMCell(ParamStore<Dtype>& store, const std::string& prefix,
                                      const CausalLSTMConfig& cfg)
    : cfg_(cfg) {
  if (cfg.in_channels == 0 || cfg.hidden == 0 || cfg.kernel % 2 == 0) {
    throw std::invalid_argument("causal LSTM: invalid configuration");
  }
  const std::size_t d = cfg.hidden, in = cfg.in_channels, k = cfg.kernel;
  const std::array<std::size_t, 5> outs{3 * d, 3 * d, d, d, d};
  const std::array<std::size_t, 5> ins{in + 2 * d, in + 2 * d, d, in + 2 * d, 2 * d};
  const std::array<std::size_t, 5> ks{k, k, k, k, 1};
  for (std::size_t j = 0; j < 5; ++j) {
    const std::string n = std::to_string(j + 1);
    w[j] = &conv_weight(store, prefix + ".w" + n, outs[j], ins[j], ks[j]);
    b[j] = &store.constant(prefix + ".b" + n, {outs[j]}, 0.0);
  }
}

template <typename Dtype>
typename CausalLSTMCell<Dtype>::Output CausalLSTMCell<Dtype>::step(Var<Dtype> x,
                                                                   Var<Dtype> h_prev,
                                                                   Var<Dtype> c_prev,
                                                                   Var<Dtype> m_below) const {
  const std::size_t d = cfg_.hidden;
  const auto& hs = h_prev.shape();
  if (x.value().rank() != 3 || x.dim(0) != cfg_.in_channels || hs.size() != 3 ||
      hs[0] != d || x.dim(1) != hs[1] || x.dim(2) != hs[2] || c_prev.shape() != hs ||
      m_below.shape() != hs) {
    throw ShapeError("causal LSTM: inconsistent shapes x=" + shape_str(x.shape()) +
                     " h=" + shape_str(hs) + " c=" + shape_str(c_prev.shape()) +
                     " m=" + shape_str(m_below.shape()));
  }
  auto& tape = x.tape();
  auto conv = [&](std::size_t j, Var<Dtype> in) {
    return conv2d(in, tape.param(*w[j]), tape.param(*b[j]));
  };
  Var<Dtype> z1 = conv(0, concat({x, h_prev, c_prev}, 0));
  Var<Dtype> g = tanh(slice(z1, 0, 0, d));
  Var<Dtype> i = sigmoid(slice(z1, 0, d, 2 * d));
  Var<Dtype> f = sigmoid(slice(z1, 0, 2 * d, 3 * d));
  Var<Dtype> c = f * c_prev + i * g;

  Var<Dtype> z2 = conv(1, concat({x, c, m_below}, 0));
  Var<Dtype> g2 = tanh(slice(z2, 0, 0, d));
  Var<Dtype> i2 = sigmoid(slice(z2, 0, d, 2 * d));
  Var<Dtype> f2 = sigmoid(slice(z2, 0, 2 * d, 3 * d));
  Var<Dtype> m = f2 * tanh(conv(2, m_below)) + i2 * g2;

  Var<Dtype> o = tanh(conv(3, concat({x, c, m}, 0)));
  Var<Dtype> h = o * tanh(conv(4, concat({c, m}, 0)));
  return {h, c, m};
}

template <typename Dtype>
GradientHighwayUnit<Dtype>::GradientHighwayUnit(ParamStore<Dtype>& store,
                                                const std::string& prefix,
                                                std::size_t in_channels, std::size_t hid,
                                                std::size_t kernel)
    : hidden(hid) {
  w_px = &conv_weight(store, prefix + ".wpx", hid, in_channels, kernel);
  w_pz = &conv_weight(store, prefix + ".wpz", hid, hid, kernel);
  w_sx = &conv_weight(store, prefix + ".wsx", hid, in_channels, kernel);
  w_sz = &conv_weight(store, prefix + ".wsz", hid, hid, kernel);
  b_p = &store.constant(prefix + ".bp", {hid}, 0.0);
  b_s = &store.constant(prefix + ".bs", {hid}, 0.0);
}

template <typename Dtype>
Var<Dtype> GradientHighwayUnit<Dtype>::step(Var<Dtype> x, Var<Dtype> z_prev) const {
  if (z_prev.value().rank() != 3 || z_prev.dim(0) != hidden || x.value().rank() != 3 ||
      x.dim(1) != z_prev.dim(1) || x.dim(2) != z_prev.dim(2)) {
    throw ShapeError("GHU: inconsistent shapes x=" + shape_str(x.shape()) +
                     " z=" + shape_str(z_prev.shape()));
  }
  auto& tape = x.tape();
  Var<Dtype> p = tanh(conv2d(x, tape.param(*w_px), tape.param(*b_p)) +
                      conv2d(z_prev, tape.param(*w_pz)));
  Var<Dtype> s = sigmoid(conv2d(x, tape.param(*w_sx), tape.param(*b_s)) +
                         conv2d(z_prev, tape.param(*w_sz)));
  return s * p + affine(s, -1.0, 1.0) * z_prev;
}

#define GRIDCAST_INSTANTIATE_CELLS(T)                                                    \
  template class RecurrentCell<T>;                                                       \
  template class ConvLSTMCell<T>;                                                        \
  template class TAAConvLSTMCell<T>;                                                     \
  template class SAAConvLSTMCell<T>;                                                     \
  template class CausalLSTMCell<T>;                                                      \
  template class GradientHighwayUnit<T>;                                                 \
  template std::pair<Var<T>, Var<T>> lstm_gates(const std::array<Var<T>, 4>&,            \
                                                const std::array<Var<T>, 4>&, Var<T>,    \
                                                const GateParams<T>&, GateParamLayout);  \
  template std::unique_ptr<RecurrentCell<T>> make_cell(ParamStore<T>&, const std::string&, \
                                                       const std::string&, const CellConfig&);

GRIDCAST_INSTANTIATE_CELLS(float)
GRIDCAST_INSTANTIATE_CELLS(double)

}  // namespace gridcast

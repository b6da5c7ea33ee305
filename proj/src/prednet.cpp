// SPDX-License-Identifier: Apache-2.0
#include "gridcast/prednet.hpp"

#include <cmath>
#include <stdexcept>

namespace gridcast {

namespace {

template <typename Dtype>
Parameter<Dtype>& conv_weight(ParamStore<Dtype>& store, const std::string& name,
                              std::size_t out, std::size_t in, std::size_t k) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  return store.uniform(name, {out, in, k, k}, bound);
}

/// frames[t] as a constant [C,H,W] leaf.
template <typename Dtype>
Var<Dtype> frame_at(Tape<Dtype>& tape, const Tensor<Dtype>& frames, std::size_t t) {
  const auto& s = frames.shape();
  const std::size_t n = s[1] * s[2] * s[3];
  std::vector<Dtype> v(frames.data() + t * n, frames.data() + (t + 1) * n);
  return tape.constant(Tensor<Dtype>({s[1], s[2], s[3]}, std::move(v)));
}

void check_frames(const Shape& s, std::size_t channels, std::size_t height, std::size_t width,
                  std::size_t horizon) {
  if (s.size() != 4 || s[0] == 0 || s[1] != channels || s[2] != height || s[3] != width) {
    throw ShapeError("rollout expects frames [N," + std::to_string(channels) + "," +
                     std::to_string(height) + "," + std::to_string(width) + "], got " +
                     shape_str(s));
  }
  if (horizon == 0) throw std::invalid_argument("rollout horizon must be positive");
}

template <typename Dtype>
Var<Dtype> detached(Var<Dtype> v) {
  return v.valid() ? v.tape().constant(v.value()) : v;
}

template <typename Dtype>
void detach_layers(std::vector<LayerState<Dtype>>& state) {
  for (auto& s : state) {
    s.A = detached(s.A);
    s.A_hat = detached(s.A_hat);
    s.E = detached(s.E);
    s.R.H = detached(s.R.H);
    s.R.C = detached(s.R.C);
    for (auto& h : s.R.history) h = detached(h);
  }
}

}  // namespace

template <typename Dtype>
Var<Dtype> to_valid_masses(Var<Dtype> raw) {
  return renormalize_masses(clamp(raw, 0.0, 1.0));
}

// --- StackConfig -------------------------------------------------------------

void StackConfig::validate() const {
  const std::size_t L = channels.size();
  if (L == 0) throw std::invalid_argument("stack needs at least one layer");
  if (kernels.size() != L || kinds.size() != L) {
    throw std::invalid_argument("stack: channels, kernels and kinds must have equal length");
  }
  if (channels[0] != input_channels) {
    throw std::invalid_argument("stack: layer 0 channels (" + std::to_string(channels[0]) +
                                ") must equal input channels (" +
                                std::to_string(input_channels) + ")");
  }
  for (std::size_t l = 0; l < L; ++l) {
    if (channels[l] == 0) throw std::invalid_argument("stack: zero channels in a layer");
    if (kernels[l] % 2 == 0) throw std::invalid_argument("stack: kernel sizes must be odd");
  }
  const std::size_t f = std::size_t{1} << (L - 1);
  if (height == 0 || width == 0 || height % f != 0 || width % f != 0) {
    throw ShapeError("stack: grid " + std::to_string(height) + "x" + std::to_string(width) +
                     " not divisible by 2^" + std::to_string(L - 1));
  }
  if (heads == 0 || horizon == 0) throw std::invalid_argument("stack: N_h and H_a must be >= 1");
}

CellConfig StackConfig::cell_config(std::size_t l) const {
  const std::size_t L = channels.size();
  CellConfig c;
  c.kind = kinds.at(l);
  c.in_channels = 2 * channels[l] + (l + 1 < L ? channels[l + 1] : 0);
  c.hidden = channels[l];
  c.kernel = kernels[l];
  c.height = height >> l;
  c.width = width >> l;
  c.layout = layout;
  c.heads = heads;
  c.horizon = horizon;
  c.attention_fraction = attention_fraction;
  c.attention_channels = attention_channels;
  c.relative = relative;
  c.history_mode = history_mode;
  c.detach_history = detach_history;
  return c;
}

nlohmann::json StackConfig::to_json() const {
  std::vector<std::string> k;
  for (CellKind c : kinds) k.push_back(to_string(c));
  return {{"channels", channels},
          {"kernels", kernels},
          {"kinds", k},
          {"height", height},
          {"width", width},
          {"input_channels", input_channels},
          {"heads", heads},
          {"horizon", horizon},
          {"attention_fraction", attention_fraction},
          {"attention_channels", attention_channels},
          {"relative", relative},
          {"layout", to_string(layout)},
          {"history_mode", to_string(history_mode)},
          {"detach_history", detach_history}};
}

StackConfig StackConfig::from_json(const nlohmann::json& j) {
  StackConfig c;
  c.channels = j.at("channels").get<std::vector<std::size_t>>();
  c.kernels = j.at("kernels").get<std::vector<std::size_t>>();
  c.kinds.clear();
  for (const auto& s : j.at("kinds")) c.kinds.push_back(cell_kind_from_string(s));
  c.height = j.at("height");
  c.width = j.at("width");
  c.input_channels = j.at("input_channels");
  c.heads = j.at("heads");
  c.horizon = j.at("horizon");
  c.attention_fraction = j.at("attention_fraction");
  c.attention_channels = j.at("attention_channels");
  c.relative = j.at("relative");
  c.layout = gate_layout_from_string(j.at("layout"));
  c.history_mode = history_mode_from_string(j.at("history_mode"));
  c.detach_history = j.at("detach_history");
  return c;
}

StackConfig StackConfig::desk() { return StackConfig{}; }

StackConfig StackConfig::full_scale() {
  StackConfig c;
  c.channels = {2, 48, 96, 192};
  c.kernels = {3, 3, 3, 3};
  c.kinds.assign(4, CellKind::ConvLSTM);
  c.height = 128;
  c.width = 128;
  return c;
}

void apply_variant(StackConfig& cfg, const std::string& variant) {
  const std::size_t L = cfg.channels.size();
  cfg.kinds.assign(L, CellKind::ConvLSTM);
  if (variant == "prednet") return;
  if (variant == "taa") {
    cfg.kinds[L - 1] = CellKind::TAAConvLSTM;
  } else if (variant == "saa") {
    if (L < 2) throw std::invalid_argument("saa variant needs at least two layers");
    cfg.kinds[L - 1] = CellKind::SAAConvLSTM;
    cfg.kinds[L - 2] = CellKind::SAAConvLSTM;
  } else {
    throw std::invalid_argument("unknown variant \"" + variant + "\" (prednet, taa, saa)");
  }
}

std::string variant_name(const StackConfig& cfg) {
  for (const std::string v : {"prednet", "taa", "saa"}) {
    StackConfig probe = cfg;
    try {
      apply_variant(probe, v);
    } catch (const std::invalid_argument&) {
      continue;
    }
    if (probe.kinds == cfg.kinds) return v;
  }
  return "custom";
}

// --- SequenceModel -----------------------------------------------------------

template <typename Dtype>
Tensor<Dtype> SequenceModel<Dtype>::predict(const Tensor<Dtype>& frames,
                                            std::size_t horizon) const {
  Tape<Dtype> tape;
  const auto preds = rollout(tape, frames, horizon);
  const Shape fs = preds.front().shape();
  const std::size_t n = shape_numel(fs);
  Tensor<Dtype> out({horizon, fs[0], fs[1], fs[2]});
  for (std::size_t p = 0; p < horizon; ++p) {
    const auto& v = preds[p].value();
    std::copy(v.data(), v.data() + n, out.data() + p * n);
  }
  return out;
}

// --- PredNet -----------------------------------------------------------------

template <typename Dtype>
PredNet<Dtype>::PredNet(const StackConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
  cfg_.validate();
  const std::size_t L = cfg_.num_layers();
  for (std::size_t l = 0; l < L; ++l) {
    const std::string ls = std::to_string(l);
    cells_.push_back(make_cell(store_, "cell." + ls, "att." + ls, cfg_.cell_config(l)));
    const std::size_t a = cfg_.channels[l], k = cfg_.kernels[l];
    ahat_w_.push_back(&conv_weight(store_, "prednet." + ls + ".ahat.w", a, a, k));
    ahat_b_.push_back(&store_.constant("prednet." + ls + ".ahat.b", {a}, 0.0));
    if (l > 0) {
      const std::size_t e = 2 * cfg_.channels[l - 1];
      a_w_.push_back(&conv_weight(store_, "prednet." + ls + ".a.w", a, e, k));
      a_b_.push_back(&store_.constant("prednet." + ls + ".a.b", {a}, 0.0));
    } else {
      a_w_.push_back(nullptr);
      a_b_.push_back(nullptr);
    }
  }
}

template <typename Dtype>
typename PredNet<Dtype>::State PredNet<Dtype>::initial_state(Tape<Dtype>& tape) const {
  State s(cfg_.num_layers());
  for (std::size_t l = 0; l < s.size(); ++l) {
    const Shape a{cfg_.channels[l], cfg_.height >> l, cfg_.width >> l};
    s[l].A = zeros(tape, a);
    s[l].A_hat = zeros(tape, a);
    s[l].E = zeros(tape, {2 * a[0], a[1], a[2]});
    s[l].R = cells_[l]->initial_state(tape);
  }
  return s;
}

template <typename Dtype>
typename PredNet<Dtype>::StepResult PredNet<Dtype>::step(Var<Dtype> frame,
                                                         const State& state) const {
  const std::size_t L = cfg_.num_layers();
  if (state.size() != L) throw std::invalid_argument("prednet: state has wrong layer count");
  Tape<Dtype>& tape = state[0].E.tape();
  if (frame.valid()) {
    const Shape want{cfg_.input_channels, cfg_.height, cfg_.width};
    if (frame.shape() != want) {
      throw ShapeError("prednet: frame " + shape_str(frame.shape()) + ", expected " +
                       shape_str(want));
    }
  }
  StepResult out;
  out.state.resize(L);

  // Top-down representation update.
  for (std::size_t l = L; l-- > 0;) {
    Var<Dtype> x = state[l].E;
    if (l + 1 < L) x = concat({x, upsample2_nearest(out.state[l + 1].R.H)}, 0);
    out.state[l].R = cells_[l]->step(x, state[l].R);
  }

  // Bottom-up prediction and error.
  for (std::size_t l = 0; l < L; ++l) {
    auto& s = out.state[l];
    Var<Dtype> a_hat =
        relu(conv2d(s.R.H, tape.param(*ahat_w_[l]), tape.param(*ahat_b_[l])));
    if (l == 0) {
      a_hat = to_valid_masses(a_hat);
      out.prediction = a_hat;
      s.A = frame.valid() ? frame : a_hat;
    } else {
      s.A = maxpool2(relu(conv2d(out.state[l - 1].E, tape.param(*a_w_[l]),
                                 tape.param(*a_b_[l]))));
    }
    s.A_hat = a_hat;
    s.E = concat({relu(s.A - a_hat), relu(a_hat - s.A)}, 0);
  }
  return out;
}

template <typename Dtype>
std::vector<Var<Dtype>> PredNet<Dtype>::rollout(Tape<Dtype>& tape, const Tensor<Dtype>& frames,
                                                std::size_t horizon) const {
  check_frames(frames.shape(), cfg_.input_channels, cfg_.height, cfg_.width, horizon);
  State s = initial_state(tape);
  const std::size_t n = frames.dim(0);
  for (std::size_t t = 0; t < n; ++t) {
    s = step(frame_at(tape, frames, t), s).state;
    if (this->cut_after(t)) detach_layers(s);
  }
  std::vector<Var<Dtype>> preds;
  preds.reserve(horizon);
  for (std::size_t p = 0; p < horizon; ++p) {
    auto r = step(Var<Dtype>(), s);
    preds.push_back(r.prediction);
    s = std::move(r.state);
    if (this->cut_after(n + p)) detach_layers(s);
  }
  return preds;
}

template <typename Dtype>
nlohmann::json PredNet<Dtype>::manifest() const {
  return {{"architecture", "prednet"}, {"variant", variant_name(cfg_)}, {"config", cfg_.to_json()}};
}

template <typename Dtype>
void PredNet<Dtype>::set_head_mask(std::size_t layer, const HeadMask& mask) {
  if (layer >= cells_.size() || cells_[layer]->kind() == CellKind::ConvLSTM) {
    throw std::invalid_argument("layer " + std::to_string(layer) + " has no attention");
  }
  cells_[layer]->set_head_mask(mask);
}

template <typename Dtype>
std::vector<std::size_t> PredNet<Dtype>::attention_layers() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < cells_.size(); ++l) {
    if (cells_[l]->kind() != CellKind::ConvLSTM) out.push_back(l);
  }
  return out;
}

// --- PredRNN++ ---------------------------------------------------------------

void PredRNNConfig::validate() const {
  if (hidden.size() < 2) throw std::invalid_argument("predrnn++ needs at least two layers");
  for (std::size_t h : hidden) {
    if (h != hidden[0]) {
      throw std::invalid_argument("predrnn++: spatial memory needs equal hidden sizes");
    }
  }
  if (kernel % 2 == 0) throw std::invalid_argument("predrnn++: kernel must be odd");
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ShapeError("predrnn++: patch " + std::to_string(patch) + " incompatible with " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
}

nlohmann::json PredRNNConfig::to_json() const {
  return {{"hidden", hidden}, {"kernel", kernel},           {"patch", patch},
          {"height", height}, {"input_channels", input_channels}, {"width", width}};
}

PredRNNConfig PredRNNConfig::from_json(const nlohmann::json& j) {
  PredRNNConfig c;
  c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.kernel = j.at("kernel");
  c.patch = j.at("patch");
  c.input_channels = j.at("input_channels");
  c.height = j.at("height");
  c.width = j.at("width");
  return c;
}

template <typename Dtype>
PredRNNpp<Dtype>::PredRNNpp(const PredRNNConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), store_(seed) {
  cfg_.validate();
  const std::size_t pc = cfg_.input_channels * cfg_.patch * cfg_.patch;
  for (std::size_t l = 0; l < cfg_.hidden.size(); ++l) {
    CausalLSTMConfig c{l == 0 ? pc : cfg_.hidden[l - 1], cfg_.hidden[l], cfg_.kernel};
    cells_.emplace_back(store_, "predrnn." + std::to_string(l), c);
  }
  ghu_ = std::make_unique<GradientHighwayUnit<Dtype>>(store_, "predrnn.ghu", cfg_.hidden[0],
                                                      cfg_.hidden[0], cfg_.kernel);
  head_w_ = &conv_weight(store_, "predrnn.head.w", pc, cfg_.hidden.back(), 1);
  head_b_ = &store_.constant("predrnn.head.b", {pc}, 0.0);
}

template <typename Dtype>
typename PredRNNpp<Dtype>::State PredRNNpp<Dtype>::initial_state(Tape<Dtype>& tape) const {
  const Shape s{cfg_.hidden[0], cfg_.height / cfg_.patch, cfg_.width / cfg_.patch};
  State st;
  for (std::size_t l = 0; l < cfg_.hidden.size(); ++l) {
    st.H.push_back(zeros(tape, s));
    st.C.push_back(zeros(tape, s));
  }
  st.M = zeros(tape, s);
  st.Z = zeros(tape, s);
  return st;
}

template <typename Dtype>
std::pair<Var<Dtype>, typename PredRNNpp<Dtype>::State> PredRNNpp<Dtype>::step(
    Var<Dtype> frame, const State& state) const {
  const Shape want{cfg_.input_channels, cfg_.height, cfg_.width};
  if (frame.shape() != want) {
    throw ShapeError("predrnn++: frame " + shape_str(frame.shape()) + ", expected " +
                     shape_str(want));
  }
  Tape<Dtype>& tape = frame.tape();
  State next;
  Var<Dtype> x = space_to_depth(frame, cfg_.patch);
  Var<Dtype> m = state.M;
  for (std::size_t l = 0; l < cells_.size(); ++l) {
    auto o = cells_[l].step(x, state.H[l], state.C[l], m);
    next.H.push_back(o.H);
    next.C.push_back(o.C);
    m = o.M;
    if (l == 0) {
      next.Z = ghu_->step(o.H, state.Z);
      x = next.Z;
    } else {
      x = o.H;
    }
  }
  next.M = m;
  Var<Dtype> raw = conv2d(next.H.back(), tape.param(*head_w_), tape.param(*head_b_));
  return {to_valid_masses(depth_to_space(raw, cfg_.patch)), std::move(next)};
}

template <typename Dtype>
std::vector<Var<Dtype>> PredRNNpp<Dtype>::rollout(Tape<Dtype>& tape,
                                                  const Tensor<Dtype>& frames,
                                                  std::size_t horizon) const {
  check_frames(frames.shape(), cfg_.input_channels, cfg_.height, cfg_.width, horizon);
  State s = initial_state(tape);
  // Step t consumes `input` and yields the prediction of frame t+1.
  std::vector<Var<Dtype>> preds;
  Var<Dtype> input;
  const std::size_t n = frames.dim(0);
  for (std::size_t t = 0; preds.size() < horizon; ++t) {
    auto r = step(t < n ? frame_at(tape, frames, t) : input, s);
    s = std::move(r.second);
    input = r.first;
    if (t + 1 >= n) preds.push_back(r.first);
    if (this->cut_after(t)) {
      for (auto& v : s.H) v = detached(v);
      for (auto& v : s.C) v = detached(v);
      s.M = detached(s.M);
      s.Z = detached(s.Z);
      input = detached(input);
    }
  }
  return preds;
}

template <typename Dtype>
nlohmann::json PredRNNpp<Dtype>::manifest() const {
  return {{"architecture", "predrnnpp"}, {"config", cfg_.to_json()}};
}

template <typename Dtype>
std::unique_ptr<SequenceModel<Dtype>> build_model(const nlohmann::json& manifest,
                                                  std::uint64_t seed) {
  const std::string arch = manifest.at("architecture");
  if (arch == "prednet") {
    return std::make_unique<PredNet<Dtype>>(StackConfig::from_json(manifest.at("config")), seed);
  }
  if (arch == "predrnnpp") {
    return std::make_unique<PredRNNpp<Dtype>>(PredRNNConfig::from_json(manifest.at("config")),
                                              seed);
  }
  throw std::invalid_argument("unknown architecture \"" + arch + "\"");
}

#define GRIDCAST_INSTANTIATE_PREDNET(T)                                                     \
  template Var<T> to_valid_masses(Var<T>);                                                  \
  template class SequenceModel<T>;                                                          \
  template class PredNet<T>;                                                                \
  template class PredRNNpp<T>;                                                              \
  template std::unique_ptr<SequenceModel<T>> build_model<T>(const nlohmann::json&, std::uint64_t);

GRIDCAST_INSTANTIATE_PREDNET(float)
GRIDCAST_INSTANTIATE_PREDNET(double)

}  // namespace gridcast

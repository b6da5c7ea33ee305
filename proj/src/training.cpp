// SPDX-License-Identifier: Apache-2.0
#include "gridcast/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace gridcast {

template <typename Dtype>
Var<Dtype> l1_sequence_loss(const std::vector<Var<Dtype>>& preds, const Tensor<Dtype>& targets) {
  if (preds.empty()) throw std::invalid_argument("l1_sequence_loss: no predictions");
  const Shape& ts = targets.shape();
  if (ts.size() != 4 || ts[0] != preds.size()) {
    throw ShapeError("l1_sequence_loss: targets " + shape_str(ts) + " for " +
                     std::to_string(preds.size()) + " predictions");
  }
  Tape<Dtype>& tape = preds[0].tape();
  const Shape fs{ts[1], ts[2], ts[3]};
  const std::size_t n = shape_numel(fs);
  Var<Dtype> total;
  for (std::size_t p = 0; p < preds.size(); ++p) {
    if (preds[p].shape() != fs) {
      throw ShapeError("l1_sequence_loss: prediction " + shape_str(preds[p].shape()) +
                       " vs target frame " + shape_str(fs));
    }
    std::vector<Dtype> v(targets.data() + p * n, targets.data() + (p + 1) * n);
    Var<Dtype> term = sum(abs(preds[p] - tape.constant(Tensor<Dtype>(fs, std::move(v)))));
    total = total.valid() ? total + term : term;
  }
  return scale(total, 1.0 / static_cast<double>(n * preds.size()));
}

template <typename Dtype>
Adam<Dtype>::Adam(std::vector<Parameter<Dtype>*> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const auto* p : params_) {
    m_.emplace_back(p->value.shape(), 0.0);
    v_.emplace_back(p->value.shape(), 0.0);
  }
}

template <typename Dtype>
void Adam<Dtype>::step() {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter<Dtype>& p = *params_[k];
    if (!p.requires_grad) continue;
    Tensor<double>& m = m_[k];
    Tensor<double>& v = v_[k];
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double g = static_cast<double>(p.grad[i]);
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mh = m[i] / c1, vh = v[i] / c2;
      p.value[i] = static_cast<Dtype>(static_cast<double>(p.value[i]) -
                                      cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
    }
  }
}

template <typename Dtype>
double global_grad_norm(const std::vector<Parameter<Dtype>*>& params) {
  double acc = 0.0;
  for (const auto* p : params) {
    for (std::size_t i = 0; i < p->grad.numel(); ++i) {
      const double g = static_cast<double>(p->grad[i]);
      acc += g * g;
    }
  }
  return std::sqrt(acc);
}

template <typename Dtype>
double clip_grad_norm(const std::vector<Parameter<Dtype>*>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto* p : params) {
      for (std::size_t i = 0; i < p->grad.numel(); ++i) {
        p->grad[i] = static_cast<Dtype>(static_cast<double>(p->grad[i]) * f);
      }
    }
  }
  return norm;
}

std::vector<Window> enumerate_windows(const std::vector<EpisodeRecord>& data, std::size_t length) {
  std::vector<Window> out;
  for (std::size_t e = 0; e < data.size(); ++e) {
    if (data[e].steps() < length) continue;
    for (std::size_t s = 0; s + length <= data[e].steps(); ++s) out.push_back({e, s});
  }
  return out;
}

double window_loss(const SequenceModel<float>& model, const EpisodeRecord& ep, std::size_t start,
                   std::size_t input_length, std::size_t horizon) {
  Tape<float> tape;
  const auto preds = model.rollout(tape, ep.window(start, input_length), horizon);
  return l1_sequence_loss(preds, ep.window(start + input_length, horizon)).value()[0];
}

TrainResult train(SequenceModel<float>& model, const std::vector<EpisodeRecord>& data,
                  const TrainConfig& cfg, const EpochCallback& on_epoch,
                  const DivergenceCallback& on_divergence) {
  if (cfg.input_length == 0 || cfg.horizon == 0) {
    throw std::invalid_argument("training needs N >= 1 and P >= 1");
  }
  if (cfg.batch == 0 || cfg.samples_per_epoch == 0) {
    throw std::invalid_argument("batch size and samples per epoch must be positive");
  }
  const auto windows = enumerate_windows(data, cfg.input_length + cfg.horizon);
  if (windows.empty()) {
    throw std::invalid_argument("no episode has the " +
                                std::to_string(cfg.input_length + cfg.horizon) +
                                " frames a training window needs");
  }
  model.set_truncation(cfg.truncation);
  auto params = model.params().all();
  Adam<float> adam(params, cfg.adam);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(windows.size());
  std::size_t cursor = order.size();  // forces a shuffle on first draw
  auto next_window = [&]() -> const Window& {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    return windows[order[cursor++]];
  };
  auto diverge = [&](const std::string& msg) {
    if (on_divergence) on_divergence(msg);
    throw NumericalError(msg);
  };

  TrainResult result;
  result.best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0, norm_sum = 0.0;
    std::size_t updates = 0;
    for (std::size_t done = 0; done < cfg.samples_per_epoch;) {
      const std::size_t b = std::min(cfg.batch, cfg.samples_per_epoch - done);
      model.params().zero_grad();
      for (std::size_t i = 0; i < b; ++i) {
        const Window& w = next_window();
        const EpisodeRecord& ep = data[w.episode];
        Tape<float> tape;
        const auto preds = model.rollout(tape, ep.window(w.start, cfg.input_length), cfg.horizon);
        Var<float> loss =
            l1_sequence_loss(preds, ep.window(w.start + cfg.input_length, cfg.horizon));
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) {
          diverge("loss became non-finite at epoch " + std::to_string(epoch));
        }
        loss_sum += lv;
        tape.backward(scale(loss, 1.0 / static_cast<double>(b)));
      }
      const double norm = clip_grad_norm(params, cfg.clip);
      if (!std::isfinite(norm)) {
        diverge("gradient norm became non-finite at epoch " + std::to_string(epoch));
      }
      norm_sum += norm;
      adam.step();
      ++updates;
      done += b;
    }
    EpochStats st;
    st.epoch = epoch;
    st.loss = loss_sum / static_cast<double>(cfg.samples_per_epoch);
    st.grad_norm = norm_sum / static_cast<double>(updates);
    st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    st.best = st.loss < result.best_loss;
    if (st.best) {
      result.best_loss = st.loss;
      result.best_epoch = epoch;
    }
    result.epochs.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return result;
}

#define GRIDCAST_INSTANTIATE_TRAINING(T)                                                     \
  template Var<T> l1_sequence_loss(const std::vector<Var<T>>&, const Tensor<T>&);            \
  template class Adam<T>;                                                                    \
  template double global_grad_norm(const std::vector<Parameter<T>*>&);                       \
  template double clip_grad_norm(const std::vector<Parameter<T>*>&, double);

GRIDCAST_INSTANTIATE_TRAINING(float)
GRIDCAST_INSTANTIATE_TRAINING(double)

}  // namespace gridcast

// SPDX-License-Identifier: Apache-2.0
#include "gridcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace gridcast {

namespace {

void require_same_dims(const ClassGrid& a, const ClassGrid& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("class grids differ in size: " + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                     std::to_string(b.width));
  }
}

nlohmann::json number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

template <typename Dtype>
double mse(const Tensor<Dtype>& pred, const Tensor<Dtype>& target) {
  require_same_shape(pred.shape(), target.shape(), "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.numel());
}

template <typename Dtype>
double mean_abs_error(const Tensor<Dtype>& pred, const Tensor<Dtype>& target) {
  require_same_shape(pred.shape(), target.shape(), "mean_abs_error");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    acc += std::abs(static_cast<double>(pred[i]) - static_cast<double>(target[i]));
  }
  return acc / static_cast<double>(pred.numel());
}

std::vector<std::size_t> class_distance_map(const ClassGrid& g, CellClass c) {
  const std::size_t H = g.height, W = g.width, n = H * W;
  const std::size_t unreached = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist(n, unreached);
  std::vector<std::size_t> queue;
  queue.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (g.cells[i] == c) {
      dist[i] = 0;
      queue.push_back(i);
    }
  }
  if (queue.empty()) return std::vector<std::size_t>(n, H + W);
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const std::size_t i = queue[head], r = i / W, col = i % W, d = dist[i] + 1;
    auto visit = [&](std::size_t j) {
      if (dist[j] == unreached) {
        dist[j] = d;
        queue.push_back(j);
      }
    };
    if (r > 0) visit(i - W);
    if (r + 1 < H) visit(i + W);
    if (col > 0) visit(i - 1);
    if (col + 1 < W) visit(i + 1);
  }
  return dist;
}

double directed_class_distance(const ClassGrid& m1, const ClassGrid& m2, CellClass c) {
  require_same_dims(m1, m2);
  const auto dist = class_distance_map(m2, c);
  std::size_t total = 0, count = 0;
  for (std::size_t i = 0; i < m1.cells.size(); ++i) {
    if (m1.cells[i] == c) {
      total += dist[i];
      ++count;
    }
  }
  return count == 0 ? 0.0 : static_cast<double>(total) / static_cast<double>(count);
}

double image_similarity(const ClassGrid& m1, const ClassGrid& m2) {
  double psi = 0.0;
  for (CellClass c : {CellClass::Free, CellClass::Occupied, CellClass::Unknown}) {
    psi += directed_class_distance(m1, m2, c) + directed_class_distance(m2, m1, c);
  }
  return psi;
}

MobbmStep mobbm_step(const ClassGrid& pred, const ClassGrid& target,
                     const std::vector<bool>& box_mask) {
  require_same_dims(pred, target);
  if (box_mask.size() != pred.cells.size()) throw ShapeError("mobbm: box mask size mismatch");
  MobbmStep s;
  for (std::size_t i = 0; i < box_mask.size(); ++i) {
    if (!box_mask[i]) continue;
    s.predicted += pred.cells[i] == CellClass::Occupied;
    s.target += target.cells[i] == CellClass::Occupied;
  }
  s.skipped = s.target == 0;
  s.value = s.skipped ? std::numeric_limits<double>::quiet_NaN()
                      : static_cast<double>(s.predicted) / static_cast<double>(s.target);
  return s;
}

std::vector<MobbmStep> mobbm(const std::vector<ClassGrid>& pred,
                             const std::vector<ClassGrid>& target,
                             const std::vector<std::vector<bool>>& box_masks) {
  if (pred.size() != target.size() || pred.size() != box_masks.size()) {
    throw std::invalid_argument("mobbm: sequence lengths differ");
  }
  std::vector<MobbmStep> out;
  for (std::size_t t = 0; t < pred.size(); ++t) {
    out.push_back(mobbm_step(pred[t], target[t], box_masks[t]));
  }
  return out;
}

Predictor persistence_predictor() {
  return [](const Tensor<float>& inputs, std::size_t horizon) {
    const auto& s = inputs.shape();
    const std::size_t n = s[1] * s[2] * s[3];
    const float* last = inputs.data() + (s[0] - 1) * n;
    Tensor<float> out({horizon, s[1], s[2], s[3]});
    for (std::size_t p = 0; p < horizon; ++p) std::copy(last, last + n, out.data() + p * n);
    return out;
  };
}

std::pair<double, double> mean_and_se(const std::vector<double>& xs) {
  if (xs.empty()) return {std::numeric_limits<double>::quiet_NaN(), 0.0};
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {m, 0.0};
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  v /= static_cast<double>(xs.size() - 1);
  return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

EvalReport evaluate(const Predictor& predict, const std::vector<EpisodeRecord>& episodes,
                    std::size_t input_length, std::size_t horizon, std::size_t start) {
  if (input_length == 0 || horizon == 0) {
    throw std::invalid_argument("evaluate needs N >= 1 and P >= 1");
  }
  EvalReport rep;
  rep.input_length = input_length;
  rep.horizon = horizon;
  std::vector<std::vector<double>> mse_t(horizon), is_t(horizon), mobbm_t(horizon);
  std::vector<double> ep_mse, ep_is, ep_mobbm;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const EpisodeRecord& ep = episodes[e];
    if (ep.steps() < start + input_length + horizon) {
      rep.warnings.push_back("episode " + std::to_string(e) + " has " +
                             std::to_string(ep.steps()) + " steps, needs " +
                             std::to_string(start + input_length + horizon) + "; skipped");
      continue;
    }
    const Tensor<float> preds = predict(ep.window(start, input_length), horizon);
    if (preds.shape() != Shape{horizon, 2, ep.height, ep.width}) {
      throw ShapeError("predictor returned " + shape_str(preds.shape()));
    }
    const std::size_t n = 2 * ep.height * ep.width;
    double sum_mse = 0.0, sum_is = 0.0, sum_mobbm = 0.0;
    std::size_t mobbm_n = 0;
    for (std::size_t p = 0; p < horizon; ++p) {
      const std::size_t t = start + input_length + p;
      const Tensor<float> target = ep.frame(t);
      const Tensor<float> pred({2, ep.height, ep.width},
                               std::vector<float>(preds.data() + p * n, preds.data() + (p + 1) * n));
      const double m = mse(pred, target);
      const ClassGrid pc = classify_tensor(pred), tc = classify_tensor(target);
      const double is = image_similarity(pc, tc);
      mse_t[p].push_back(m);
      is_t[p].push_back(is);
      sum_mse += m;
      sum_is += is;
      const MobbmStep mb = mobbm_step(pc, tc, ep.box_mask(t));
      if (!mb.skipped) {
        const double v = std::min(mb.value, 1.0);
        mobbm_t[p].push_back(v);
        sum_mobbm += v;
        ++mobbm_n;
      }
    }
    ep_mse.push_back(sum_mse / static_cast<double>(horizon));
    ep_is.push_back(sum_is / static_cast<double>(horizon));
    if (mobbm_n > 0) ep_mobbm.push_back(sum_mobbm / static_cast<double>(mobbm_n));
    ++rep.episodes;
  }
  if (rep.episodes == 0) throw std::invalid_argument("no episode long enough to evaluate");
  for (std::size_t p = 0; p < horizon; ++p) {
    auto [m, ms] = mean_and_se(mse_t[p]);
    auto [i, is] = mean_and_se(is_t[p]);
    auto [b, bs] = mean_and_se(mobbm_t[p]);
    rep.mse.push_back(m);
    rep.mse_se.push_back(ms);
    rep.is.push_back(i);
    rep.is_se.push_back(is);
    rep.mobbm.push_back(b);
    rep.mobbm_se.push_back(bs);
    rep.mobbm_count.push_back(mobbm_t[p].size());
  }
  std::tie(rep.mean_mse, rep.mean_mse_se) = mean_and_se(ep_mse);
  std::tie(rep.mean_is, rep.mean_is_se) = mean_and_se(ep_is);
  std::tie(rep.mean_mobbm, rep.mean_mobbm_se) = mean_and_se(ep_mobbm);
  if (ep_mobbm.empty()) rep.warnings.push_back("no boxed occupied cells in any target; MOBBM empty");
  return rep;
}

nlohmann::json EvalReport::summary() const {
  return {{"model", model_id},
          {"dataset", dataset_id},
          {"N", input_length},
          {"P", horizon},
          {"episodes", episodes},
          {"mse", number_or_null(mean_mse)},
          {"mse_se", number_or_null(mean_mse_se)},
          {"is", number_or_null(mean_is)},
          {"is_se", number_or_null(mean_is_se)},
          {"mobbm", number_or_null(mean_mobbm)},
          {"mobbm_se", number_or_null(mean_mobbm_se)},
          {"warnings", warnings}};
}

std::string EvalReport::to_jsonl() const {
  std::ostringstream os;
  for (std::size_t p = 0; p < horizon; ++p) {
    nlohmann::json j = {{"step", p + 1},
                        {"mse", number_or_null(mse[p])},
                        {"mse_se", number_or_null(mse_se[p])},
                        {"is", number_or_null(is[p])},
                        {"is_se", number_or_null(is_se[p])},
                        {"mobbm", number_or_null(mobbm[p])},
                        {"mobbm_se", number_or_null(mobbm_se[p])},
                        {"mobbm_episodes", mobbm_count[p]}};
    os << j.dump() << '\n';
  }
  os << nlohmann::json{{"summary", summary()}}.dump() << '\n';
  return os.str();
}

template double mse<float>(const Tensor<float>&, const Tensor<float>&);
template double mse<double>(const Tensor<double>&, const Tensor<double>&);
template double mean_abs_error<float>(const Tensor<float>&, const Tensor<float>&);
template double mean_abs_error<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace gridcast

// SPDX-License-Identifier: Apache-2.0
#include "gridcast/bench.hpp"

#include <algorithm>
#include <chrono>
#include <random>

#include "gridcast/attention.hpp"

namespace gridcast {

namespace {

Tensor<double> uniform_tensor(Shape s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace

std::vector<AttentionBenchRow> bench_temporal_attention(const AttentionBenchConfig& cfg) {
  if (cfg.horizons.empty() || cfg.runs == 0) {
    throw std::invalid_argument("benchmark needs at least one horizon and one run");
  }
  AttentionConfig ac;
  ac.in_channels = cfg.channels;
  ac.heads = cfg.heads;
  ac.key_channels = cfg.channels;
  ac.value_channels = cfg.channels;
  ac.height = cfg.size;
  ac.width = cfg.size;
  ac.validate();

  std::vector<AttentionBenchRow> rows;
  for (std::size_t h_a : cfg.horizons) {
    ParamStore<double> store(cfg.seed);
    TemporalAttentionParams<double> p(store, "bench", ac, h_a);
    std::mt19937_64 rng(cfg.seed + h_a);
    const Shape s{cfg.channels, cfg.size, cfg.size};
    const Tensor<double> x = uniform_tensor(s, rng);
    std::vector<Tensor<double>> hist;
    for (std::size_t k = 0; k < h_a; ++k) hist.push_back(uniform_tensor(s, rng));
    const HeadMask mask = HeadMask::all(cfg.heads);

    auto once = [&] {
      const auto t0 = std::chrono::steady_clock::now();
      Tape<double> tape;
      std::vector<Var<double>> hv;
      for (const auto& h : hist) hv.push_back(tape.constant(h));
      Var<double> y = multi_head_temporal_attention(p, tape.constant(x), std::span<const Var<double>>(hv), mask);
      if (cfg.backward) tape.backward(sum(y));
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    once();
    std::vector<double> times;
    for (std::size_t r = 0; r < cfg.runs; ++r) times.push_back(once());
    AttentionBenchRow row;
    row.horizon = h_a;
    row.median_seconds = median(times);
    row.min_seconds = *std::min_element(times.begin(), times.end());
    rows.push_back(row);
  }
  for (auto& r : rows) r.ratio_to_first = r.median_seconds / rows.front().median_seconds;
  return rows;
}

nlohmann::json to_json(const std::vector<AttentionBenchRow>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"history", r.horizon},
                   {"median_s", r.median_seconds},
                   {"min_s", r.min_seconds},
                   {"ratio", r.ratio_to_first}});
  }
  return out;
}

}  // namespace gridcast

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "json.hpp"

namespace gridcast {

struct AttentionBenchConfig {
  std::vector<std::size_t> horizons{1, 2, 4, 6};  // H_a values
  std::size_t size = 16;                          // H = W
  std::size_t heads = 4;
  std::size_t channels = 32;  // F_in = d_k = d_v
  std::size_t runs = 20;
  bool backward = false;  // time the backward pass too
  std::uint64_t seed = 0;
};

struct AttentionBenchRow {
  std::size_t horizon = 0;
  double median_seconds = 0.0;
  double min_seconds = 0.0;
  double ratio_to_first = 0.0;  // median over the median of horizons[0]
};

/// Wall time of one temporal attention call (64-bit) per history length,
/// median over `runs` after one warm-up call.
std::vector<AttentionBenchRow> bench_temporal_attention(const AttentionBenchConfig& cfg);

nlohmann::json to_json(const std::vector<AttentionBenchRow>& rows);

}  // namespace gridcast

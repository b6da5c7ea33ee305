// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gridcast/ops.hpp"
#include "gridcast/params.hpp"

namespace gridcast {

/// Channel budget of an attention-augmented convolution with F_out outputs.
struct AugmentedSplit {
  std::size_t conv_channels = 0;
  std::size_t key_channels = 0;    // d_k total
  std::size_t value_channels = 0;  // d_v total
};

/// Attention takes `attention_channels` outputs when non-zero, otherwise
/// round(fraction · F_out). Both d_k and d_v totals equal that count and must
/// divide evenly by `heads`; at least one convolution channel must remain.
AugmentedSplit split_augmented_channels(std::size_t out_channels, std::size_t heads,
                                        double fraction,
                                        std::size_t attention_channels = 0);

struct AttentionConfig {
  std::size_t in_channels = 0;     // F_in
  std::size_t heads = 1;           // N_h
  std::size_t key_channels = 0;    // d_k total
  std::size_t value_channels = 0;  // d_v total
  bool relative = true;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t key_per_head() const { return key_channels / heads; }
  std::size_t value_per_head() const { return value_channels / heads; }
  void validate() const;
};

/// Which heads contribute. A dropped head's output is replaced by zeros
/// before the output fusion.
struct HeadMask {
  std::vector<bool> keep;

  static HeadMask all(std::size_t heads) { return {std::vector<bool>(heads, true)}; }
  static HeadMask none(std::size_t heads) { return {std::vector<bool>(heads, false)}; }
  static HeadMask drop(std::size_t heads, std::size_t head) {
    HeadMask m = all(heads);
    m.keep.at(head) = false;
    return m;
  }
  std::size_t size() const { return keep.size(); }
};

/// Projections W_q, W_k ([F_in, d_k/N_h]) and W_v ([F_in, d_v/N_h]) per head,
/// fusion W_o [d_v, d_v], and factorized relative embeddings shared across
/// heads. Keys: "{prefix}.{head}.{wq|wk|wv}", "{prefix}.wo", "{prefix}.rel_{h|w}".
template <typename Dtype>
struct AttentionParams {
  AttentionConfig cfg;
  std::vector<Parameter<Dtype>*> wq, wk, wv;
  Parameter<Dtype>* wo = nullptr;
  Parameter<Dtype>* rel_h = nullptr;
  Parameter<Dtype>* rel_w = nullptr;

  AttentionParams() = default;
  AttentionParams(ParamStore<Dtype>& store, const std::string& prefix,
                  const AttentionConfig& cfg);
};

/// Adds the learned temporal weights w_τ ("{prefix}.w_tau", initialized to
/// 1/H_a). w[0] weighs the most recent history frame.
template <typename Dtype>
struct TemporalAttentionParams {
  AttentionParams<Dtype> base;
  std::size_t horizon = 1;  // H_a
  Parameter<Dtype>* w_tau = nullptr;

  TemporalAttentionParams() = default;
  TemporalAttentionParams(ParamStore<Dtype>& store, const std::string& prefix,
                          const AttentionConfig& cfg, std::size_t horizon);
};

/// Row-stochastic weights softmax((Q Kᵀ + S_rel) / sqrt(d_k)) for Q,K [HW,d_k].
/// `s_rel` may be a default-constructed Var for no positional term.
template <typename Dtype>
Var<Dtype> attention_weights(Var<Dtype> q, Var<Dtype> k, Var<Dtype> s_rel);

/// softmax((Q Kᵀ + S_rel) / sqrt(d_k)) V with Q,K [HW,d_k], V [HW,d_v].
template <typename Dtype>
Var<Dtype> single_head_attention(Var<Dtype> q, Var<Dtype> k, Var<Dtype> v,
                                 Var<Dtype> s_rel = Var<Dtype>());

/// [F,H,W] -> [HW,F]
template <typename Dtype>
Var<Dtype> flatten_positions(Var<Dtype> x);

/// Per-head queries and (if enabled) their relative logits, reusable across
/// several key/value sources.
template <typename Dtype>
struct ProjectedQueries {
  std::vector<Var<Dtype>> q;
  std::vector<Var<Dtype>> s_rel;
};

template <typename Dtype>
ProjectedQueries<Dtype> project_queries(const AttentionParams<Dtype>& p, Var<Dtype> x_q,
                                        const HeadMask& mask);

/// Attends precomputed queries onto keys/values projected from x_kv.
/// Returns [d_v, H, W].
template <typename Dtype>
Var<Dtype> attend(const AttentionParams<Dtype>& p, const ProjectedQueries<Dtype>& queries,
                  Var<Dtype> x_kv, const HeadMask& mask);

/// [A_1, ..., A_Nh] W_o reshaped to [d_v, H, W]. Queries come from x_q,
/// keys and values from x_kv (which may be a different frame).
template <typename Dtype>
Var<Dtype> multi_head_attention(const AttentionParams<Dtype>& p, Var<Dtype> x_q,
                                Var<Dtype> x_kv, const HeadMask& mask);

/// Σ_τ w_τ · MA(x_t, history[τ]) with history[0] the most recent frame. The
/// query projection of x_t is computed once. Fewer than H_a frames is allowed;
/// absent terms are simply dropped.
template <typename Dtype>
Var<Dtype> multi_head_temporal_attention(const TemporalAttentionParams<Dtype>& p,
                                         Var<Dtype> x_t,
                                         std::span<const Var<Dtype>> history,
                                         const HeadMask& mask);

/// [conv2d(x), MA(x, x)] along channels.
template <typename Dtype>
Var<Dtype> saaconv(Var<Dtype> x, Var<Dtype> conv_weight, Var<Dtype> conv_bias,
                   const AttentionParams<Dtype>& p, const HeadMask& mask);

/// [conv2d(x_t), MTA(x_t, history)] along channels.
template <typename Dtype>
Var<Dtype> taaconv(Var<Dtype> x_t, std::span<const Var<Dtype>> history,
                   Var<Dtype> conv_weight, Var<Dtype> conv_bias,
                   const TemporalAttentionParams<Dtype>& p, const HeadMask& mask);

}  // namespace gridcast

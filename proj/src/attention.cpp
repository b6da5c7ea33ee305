// SPDX-License-Identifier: Apache-2.0
#include "gridcast/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace gridcast {

AugmentedSplit split_augmented_channels(std::size_t out_channels, std::size_t heads,
                                        double fraction, std::size_t attention_channels) {
  if (heads == 0) throw std::invalid_argument("attention needs at least one head");
  std::size_t att = attention_channels;
  if (att == 0) {
    att = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(out_channels)));
  }
  if (att == 0 || att % heads != 0) {
    throw std::invalid_argument("attention channels (" + std::to_string(att) +
                                ") must be a positive multiple of the head count (" +
                                std::to_string(heads) + ")");
  }
  if (att >= out_channels) {
    throw std::invalid_argument("attention channels (" + std::to_string(att) +
                                ") leave no convolution channels out of " +
                                std::to_string(out_channels));
  }
  return {out_channels - att, att, att};
}

void AttentionConfig::validate() const {
  if (heads == 0 || key_channels % heads || value_channels % heads ||
      key_channels == 0 || value_channels == 0) {
    throw std::invalid_argument("attention: d_k=" + std::to_string(key_channels) +
                                " and d_v=" + std::to_string(value_channels) +
                                " must be positive multiples of N_h=" +
                                std::to_string(heads));
  }
  if (in_channels == 0) throw std::invalid_argument("attention: F_in must be positive");
  if (relative && (height == 0 || width == 0)) {
    throw std::invalid_argument("attention: relative encoding needs the grid size");
  }
}

template <typename Dtype>
AttentionParams<Dtype>::AttentionParams(ParamStore<Dtype>& store, const std::string& prefix,
                                        const AttentionConfig& c)
    : cfg(c) {
  cfg.validate();
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(cfg.in_channels));
  const std::size_t dk = cfg.key_per_head(), dv = cfg.value_per_head();
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const std::string hp = prefix + "." + std::to_string(h) + ".";
    wq.push_back(&store.normal(hp + "wq", {cfg.in_channels, dk}, proj_std));
    wk.push_back(&store.normal(hp + "wk", {cfg.in_channels, dk}, proj_std));
    wv.push_back(&store.normal(hp + "wv", {cfg.in_channels, dv}, proj_std));
  }
  wo = &store.normal(prefix + ".wo", {cfg.value_channels, cfg.value_channels},
                     1.0 / std::sqrt(static_cast<double>(cfg.value_channels)));
  if (cfg.relative) {
    const double rel_std = 1.0 / std::sqrt(static_cast<double>(dk));
    rel_h = &store.normal(prefix + ".rel_h", {2 * cfg.height - 1, dk}, rel_std);
    rel_w = &store.normal(prefix + ".rel_w", {2 * cfg.width - 1, dk}, rel_std);
  }
}

template <typename Dtype>
TemporalAttentionParams<Dtype>::TemporalAttentionParams(ParamStore<Dtype>& store,
                                                        const std::string& prefix,
                                                        const AttentionConfig& cfg,
                                                        std::size_t h_a)
    : base(store, prefix, cfg), horizon(h_a) {
  if (horizon == 0) throw std::invalid_argument("attention horizon must be >= 1");
  w_tau = &store.constant(prefix + ".w_tau", {horizon}, 1.0 / static_cast<double>(horizon));
}

template <typename Dtype>
Var<Dtype> attention_weights(Var<Dtype> q, Var<Dtype> k, Var<Dtype> s_rel) {
  if (q.value().rank() != 2 || k.value().rank() != 2 || q.dim(1) != k.dim(1)) {
    throw ShapeError("attention: query " + shape_str(q.shape()) + " and key " +
                     shape_str(k.shape()) + " disagree on d_k");
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  Var<Dtype> logits = matmul(q, k, false, true);
  if (s_rel.valid()) logits = logits + s_rel;
  return softmax(scale(logits, inv), 1);
}

template <typename Dtype>
Var<Dtype> single_head_attention(Var<Dtype> q, Var<Dtype> k, Var<Dtype> v, Var<Dtype> s_rel) {
  if (v.value().rank() != 2 || v.dim(0) != k.dim(0)) {
    throw ShapeError("attention: value " + shape_str(v.shape()) +
                     " does not match key rows " + shape_str(k.shape()));
  }
  return matmul(attention_weights(q, k, s_rel), v);
}

template <typename Dtype>
Var<Dtype> flatten_positions(Var<Dtype> x) {
  const auto& s = x.shape();
  if (s.size() != 3) throw ShapeError("flatten_positions: expected [F,H,W], got " + shape_str(s));
  return transpose(reshape(x, {s[0], s[1] * s[2]}));
}

namespace {

template <typename Dtype>
void check_input(const AttentionConfig& cfg, Var<Dtype> x, const char* what) {
  const auto& s = x.shape();
  if (s.size() != 3 || s[0] != cfg.in_channels ||
      (cfg.relative && (s[1] != cfg.height || s[2] != cfg.width))) {
    throw ShapeError(std::string("attention ") + what + ": got " + shape_str(s) +
                     ", expected [" + std::to_string(cfg.in_channels) + ",H,W]" +
                     (cfg.relative ? " on the configured grid" : ""));
  }
}

template <typename Dtype>
void check_mask(const AttentionConfig& cfg, const HeadMask& mask) {
  if (mask.size() != cfg.heads) {
    throw std::invalid_argument("head mask has " + std::to_string(mask.size()) +
                                " entries for " + std::to_string(cfg.heads) + " heads");
  }
}

// [F,H,W] -> [F,HW]; projections are then Xᵀ W via matmul(trans_a).
template <typename Dtype>
Var<Dtype> channels_by_positions(Var<Dtype> x) {
  const auto& s = x.shape();
  return reshape(x, {s[0], s[1] * s[2]});
}

}  // namespace

template <typename Dtype>
ProjectedQueries<Dtype> project_queries(const AttentionParams<Dtype>& p, Var<Dtype> x_q,
                                        const HeadMask& mask) {
  check_input(p.cfg, x_q, "query input");
  check_mask<Dtype>(p.cfg, mask);
  auto& tape = x_q.tape();
  const auto& s = x_q.shape();
  Var<Dtype> xf = channels_by_positions(x_q);
  ProjectedQueries<Dtype> out;
  out.q.resize(p.cfg.heads);
  out.s_rel.resize(p.cfg.heads);
  for (std::size_t h = 0; h < p.cfg.heads; ++h) {
    if (!mask.keep[h]) continue;
    out.q[h] = matmul(xf, tape.param(*p.wq[h]), true, false);
    if (p.cfg.relative) {
      out.s_rel[h] = relative_logits(out.q[h], tape.param(*p.rel_h), tape.param(*p.rel_w),
                                     s[1], s[2]);
    }
  }
  return out;
}

template <typename Dtype>
Var<Dtype> attend(const AttentionParams<Dtype>& p, const ProjectedQueries<Dtype>& queries,
                  Var<Dtype> x_kv, const HeadMask& mask) {
  check_input(p.cfg, x_kv, "key/value input");
  check_mask<Dtype>(p.cfg, mask);
  auto& tape = x_kv.tape();
  const auto& s = x_kv.shape();
  const std::size_t HW = s[1] * s[2];
  Var<Dtype> xf = channels_by_positions(x_kv);
  std::vector<Var<Dtype>> heads;
  for (std::size_t h = 0; h < p.cfg.heads; ++h) {
    if (!mask.keep[h]) {
      heads.push_back(zeros(tape, {HW, p.cfg.value_per_head()}));
      continue;
    }
    if (queries.q[h].dim(0) != HW) {
      throw ShapeError("attention: query and key/value grids differ");
    }
    Var<Dtype> k = matmul(xf, tape.param(*p.wk[h]), true, false);
    Var<Dtype> v = matmul(xf, tape.param(*p.wv[h]), true, false);
    heads.push_back(single_head_attention(queries.q[h], k, v, queries.s_rel[h]));
  }
  Var<Dtype> cat = heads.size() == 1 ? heads[0]
                                     : concat(std::span<const Var<Dtype>>(heads), 1);
  Var<Dtype> fused = matmul(cat, tape.param(*p.wo));
  return reshape(transpose(fused), {p.cfg.value_channels, s[1], s[2]});
}

template <typename Dtype>
Var<Dtype> multi_head_attention(const AttentionParams<Dtype>& p, Var<Dtype> x_q,
                                Var<Dtype> x_kv, const HeadMask& mask) {
  if (x_q.shape().size() != 3 || x_q.shape() != x_kv.shape()) {
    throw ShapeError("multi_head_attention: query input " + shape_str(x_q.shape()) +
                     " and key/value input " + shape_str(x_kv.shape()) + " differ");
  }
  return attend(p, project_queries(p, x_q, mask), x_kv, mask);
}

template <typename Dtype>
Var<Dtype> multi_head_temporal_attention(const TemporalAttentionParams<Dtype>& p,
                                         Var<Dtype> x_t,
                                         std::span<const Var<Dtype>> history,
                                         const HeadMask& mask) {
  if (history.empty()) throw std::invalid_argument("temporal attention: empty history");
  if (history.size() > p.horizon) {
    throw std::invalid_argument("temporal attention: " + std::to_string(history.size()) +
                                " frames exceed horizon " + std::to_string(p.horizon));
  }
  for (const auto& frame : history) {
    if (frame.shape() != x_t.shape()) {
      throw ShapeError("temporal attention: history frame " + shape_str(frame.shape()) +
                       " differs from current frame " + shape_str(x_t.shape()));
    }
  }
  auto& tape = x_t.tape();
  const ProjectedQueries<Dtype> queries = project_queries(p.base, x_t, mask);
  Var<Dtype> w = tape.param(*p.w_tau);
  Var<Dtype> total;
  for (std::size_t tau = 0; tau < history.size(); ++tau) {
    Var<Dtype> term = scale_by(attend(p.base, queries, history[tau], mask), w, tau);
    total = total.valid() ? total + term : term;
  }
  return total;
}

namespace {
template <typename Dtype>
void check_conv_split(Var<Dtype> conv_weight) {
  if (conv_weight.value().rank() != 4 || conv_weight.dim(0) == 0) {
    throw std::invalid_argument("augmented convolution needs at least one conv channel");
  }
}
}  // namespace

template <typename Dtype>
Var<Dtype> saaconv(Var<Dtype> x, Var<Dtype> conv_weight, Var<Dtype> conv_bias,
                   const AttentionParams<Dtype>& p, const HeadMask& mask) {
  check_conv_split(conv_weight);
  return concat({conv2d(x, conv_weight, conv_bias), multi_head_attention(p, x, x, mask)}, 0);
}

template <typename Dtype>
Var<Dtype> taaconv(Var<Dtype> x_t, std::span<const Var<Dtype>> history,
                   Var<Dtype> conv_weight, Var<Dtype> conv_bias,
                   const TemporalAttentionParams<Dtype>& p, const HeadMask& mask) {
  check_conv_split(conv_weight);
  return concat({conv2d(x_t, conv_weight, conv_bias),
                 multi_head_temporal_attention(p, x_t, history, mask)},
                0);
}

#define GRIDCAST_INSTANTIATE_ATTENTION(T)                                                 \
  template struct AttentionParams<T>;                                                     \
  template struct TemporalAttentionParams<T>;                                             \
  template Var<T> attention_weights(Var<T>, Var<T>, Var<T>);                              \
  template Var<T> single_head_attention(Var<T>, Var<T>, Var<T>, Var<T>);                  \
  template Var<T> flatten_positions(Var<T>);                                              \
  template ProjectedQueries<T> project_queries(const AttentionParams<T>&, Var<T>,         \
                                               const HeadMask&);                          \
  template Var<T> attend(const AttentionParams<T>&, const ProjectedQueries<T>&, Var<T>,   \
                         const HeadMask&);                                                \
  template Var<T> multi_head_attention(const AttentionParams<T>&, Var<T>, Var<T>,         \
                                       const HeadMask&);                                  \
  template Var<T> multi_head_temporal_attention(const TemporalAttentionParams<T>&, Var<T>, \
                                                std::span<const Var<T>>, const HeadMask&); \
  template Var<T> saaconv(Var<T>, Var<T>, Var<T>, const AttentionParams<T>&,              \
                          const HeadMask&);                                               \
  template Var<T> taaconv(Var<T>, std::span<const Var<T>>, Var<T>, Var<T>,                \
                          const TemporalAttentionParams<T>&, const HeadMask&);

GRIDCAST_INSTANTIATE_ATTENTION(float)
GRIDCAST_INSTANTIATE_ATTENTION(double)

}  // namespace gridcast

// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace gridcast;
using gridcast::test::random_projection;
using gridcast::test::random_tensor;

namespace {

AttentionConfig att_cfg(std::size_t f_in, std::size_t heads, std::size_t dk, std::size_t dv,
                        std::size_t h, std::size_t w, bool relative = true) {
  AttentionConfig c;
  c.in_channels = f_in;
  c.heads = heads;
  c.key_channels = dk;
  c.value_channels = dv;
  c.relative = relative;
  c.height = h;
  c.width = w;
  return c;
}

Tensor<double> eval_ma(const AttentionParams<double>& p, const Tensor<double>& xq,
                       const Tensor<double>& xkv, const HeadMask& m) {
  Tape<double> t;
  return multi_head_attention(p, t.constant(xq), t.constant(xkv), m).value();
}

}  // namespace

TEST_CASE("single_head_attention examples") {
  Tape<double> t;
  SUBCASE("identical keys give the column mean of V") {
    const auto v = random_tensor({4, 3}, 1);
    Tensor<double> k({4, 2});
    for (std::size_t r = 0; r < 4; ++r) k.at(r, 0) = 0.3, k.at(r, 1) = -0.7;
    auto out = single_head_attention(t.constant(random_tensor({4, 2}, 2)), t.constant(k), t.constant(v));
    for (std::size_t c = 0; c < 3; ++c) {
      const double m = (v.at(0, c) + v.at(1, c) + v.at(2, c) + v.at(3, c)) / 4;
      for (std::size_t r = 0; r < 4; ++r) CHECK(out.value().at(r, c) == doctest::Approx(m).epsilon(1e-14));
    }
  }
  SUBCASE("zero logits") {
    auto out = single_head_attention(t.constant(Tensor<double>({2, 1})), t.constant(Tensor<double>({2, 1})),
                                     t.constant(Tensor<double>({2, 2}, {1, 0, 0, 1})));
    for (double v : out.value().values()) CHECK(v == 0.5);
  }
  SUBCASE("sharp logits") {
    auto out = single_head_attention(t.constant(Tensor<double>({2, 1}, {10, -10})),
                                     t.constant(Tensor<double>({2, 1}, {1, -1})),
                                     t.constant(Tensor<double>({2, 2}, {1, 0, 0, 1})));
    // Row 0 logits (10, -10): weights 1/(1+e^-20) and e^-20/(1+e^-20).
    const double hi = 1.0 / (1.0 + std::exp(-20.0)), lo = 1.0 - hi;
    CHECK(out.value().at(0, 0) == doctest::Approx(hi).epsilon(1e-14));
    CHECK(out.value().at(0, 1) == doctest::Approx(lo).epsilon(1e-6));
    CHECK(out.value().at(1, 1) == doctest::Approx(hi).epsilon(1e-14));
    CHECK(out.value().at(0, 0) > 0.9999);
    CHECK(out.value().at(1, 0) < 1e-4);
  }
  SUBCASE("d_k mismatch") {
    CHECK_THROWS_AS(single_head_attention(t.constant(Tensor<double>({2, 2})), t.constant(Tensor<double>({2, 3})),
                                          t.constant(Tensor<double>({2, 2}))),
                    ShapeError);
  }
}

TEST_CASE("attention weights are row-stochastic") {
  Tape<double> t;
  const auto q = random_tensor({16, 3}, 3, -4, 4), k = random_tensor({16, 3}, 4, -4, 4);
  auto w = attention_weights(t.constant(q), t.constant(k), t.constant(random_tensor({16, 16}, 5, -3, 3)));
  for (std::size_t r = 0; r < 16; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 16; ++c) s += w.value().at(r, c);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  Tape<float> tf;
  auto wf = attention_weights(tf.constant(q.cast<float>()), tf.constant(k.cast<float>()), Var<float>());
  for (std::size_t r = 0; r < 16; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 16; ++c) s += wf.value().at(r, c);
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("single-head attention equivariances") {
  Tape<double> t;
  const auto q = random_tensor({6, 2}, 6), k = random_tensor({6, 2}, 7), v = random_tensor({6, 3}, 8);
  const auto base = single_head_attention(t.constant(q), t.constant(k), t.constant(v)).value();
  SUBCASE("value columns") {
    const std::size_t perm[3] = {2, 0, 1};
    Tensor<double> vp({6, 3});
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t c = 0; c < 3; ++c) vp.at(r, c) = v.at(r, perm[c]);
    auto out = single_head_attention(t.constant(q), t.constant(k), t.constant(vp)).value();
    for (std::size_t r = 0; r < 6; ++r)
      for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(out.at(r, c) - base.at(r, perm[c])) < 1e-14);
  }
  SUBCASE("joint spatial permutation without positional term") {
    const std::size_t perm[6] = {3, 5, 0, 1, 4, 2};
    auto permute_rows = [&](const Tensor<double>& x) {
      Tensor<double> y(x.shape());
      for (std::size_t r = 0; r < 6; ++r)
        for (std::size_t c = 0; c < x.dim(1); ++c) y.at(r, c) = x.at(perm[r], c);
      return y;
    };
    auto out = single_head_attention(t.constant(permute_rows(q)), t.constant(permute_rows(k)),
                                     t.constant(permute_rows(v)))
                   .value();
    CHECK(max_abs_diff(out, permute_rows(base)) < 1e-14);
  }
}

TEST_CASE("relative_logits examples") {
  Tape<double> t;
  const auto q = random_tensor({12, 3}, 9);
  SUBCASE("zero embeddings") {
    auto s = relative_logits(t.constant(q), t.constant(Tensor<double>({5, 3})), t.constant(Tensor<double>({7, 3})), 3, 4);
    for (double v : s.value().values()) CHECK(v == 0.0);
  }
  SUBCASE("matches the double loop") {
    for (auto [H, W] : {std::pair<std::size_t, std::size_t>{2, 2}, {3, 4}}) {
      const auto qq = random_tensor({H * W, 3}, 10 + H), rh = random_tensor({2 * H - 1, 3}, 11 + H),
                 rw = random_tensor({2 * W - 1, 3}, 12 + W);
      auto s = relative_logits(t.constant(qq), t.constant(rh), t.constant(rw), H, W);
      CHECK(max_abs_diff(s.value(), oracle::relative_logits(qq, rh, rw, H, W)) < 1e-14);
    }
  }
  SUBCASE("translation covariance for a fixed query") {
    const auto rh = random_tensor({5, 3}, 13), rw = random_tensor({7, 3}, 14);
    // Query i attends keys j; entries with equal (Δrow, Δcol) agree when the
    // query vector is shared, so give every position the same query.
    Tensor<double> qc({12, 3});
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t a = 0; a < 3; ++a) qc.at(i, a) = q.at(0, a);
    auto s = relative_logits(t.constant(qc), t.constant(rh), t.constant(rw), 3, 4).value();
    for (std::size_t i = 0; i < 12; ++i)
      for (std::size_t j = 0; j < 12; ++j)
        for (std::size_t i2 = 0; i2 < 12; ++i2)
          for (std::size_t j2 = 0; j2 < 12; ++j2) {
            const long dr = long(j / 4) - long(i / 4), dc = long(j % 4) - long(i % 4);
            const long dr2 = long(j2 / 4) - long(i2 / 4), dc2 = long(j2 % 4) - long(i2 % 4);
            if (dr == dr2 && dc == dc2) CHECK(s.at(i, j) == s.at(i2, j2));
          }
  }
}

TEST_CASE("split_augmented_channels") {
  const auto s = split_augmented_channels(32, 4, 0.25);
  CHECK(s.conv_channels == 24);
  CHECK(s.key_channels == 8);
  CHECK(s.value_channels == 8);
  CHECK(split_augmented_channels(16, 3, 0.25, 9).conv_channels == 7);
  CHECK_THROWS(split_augmented_channels(16, 3, 0.25));
  CHECK_THROWS(split_augmented_channels(4, 4, 1.0));
}

TEST_CASE("multi_head_attention examples") {
  SUBCASE("one head equals single-head attention times W_o") {
    ParamStore<double> store(1);
    AttentionParams<double> p(store, "att.0", att_cfg(3, 1, 2, 2, 3, 3, false));
    const auto x = random_tensor({3, 3, 3}, 20);
    Tape<double> t;
    Var<double> xf = flatten_positions(t.constant(x));
    auto a = single_head_attention(matmul(xf, t.param(*p.wq[0])), matmul(xf, t.param(*p.wk[0])),
                                   matmul(xf, t.param(*p.wv[0])));
    auto fused = transpose(matmul(a, t.param(*p.wo)));
    CHECK(max_abs_diff(reshape(fused, {2, 3, 3}).value(), eval_ma(p, x, x, HeadMask::all(1))) < 1e-14);
  }
  SUBCASE("all heads dropped") {
    ParamStore<double> store(2);
    AttentionParams<double> p(store, "att.0", att_cfg(2, 2, 2, 2, 4, 4));
    const auto x = random_tensor({2, 4, 4}, 21);
    for (double v : eval_ma(p, x, x, HeadMask::none(2)).values()) CHECK(v == 0.0);
  }
  SUBCASE("two heads on 4x4 match the per-head oracle") {
    ParamStore<double> store(3);
    AttentionParams<double> p(store, "att.0", att_cfg(3, 2, 4, 4, 4, 4));
    const auto xq = random_tensor({3, 4, 4}, 22), xkv = random_tensor({3, 4, 4}, 23);
    for (const auto& m : {HeadMask::all(2), HeadMask::drop(2, 0), HeadMask::drop(2, 1)}) {
      CHECK(max_abs_diff(eval_ma(p, xq, xkv, m), oracle::multi_head(p, xq, xkv, m)) < 1e-12);
    }
  }
  SUBCASE("mask length") {
    ParamStore<double> store(4);
    AttentionParams<double> p(store, "att.0", att_cfg(2, 2, 2, 2, 4, 4));
    const auto x = random_tensor({2, 4, 4}, 24);
    CHECK_THROWS_AS(eval_ma(p, x, x, HeadMask::all(3)), std::invalid_argument);
  }
  SUBCASE("dropping a head removes exactly its fused block") {
    ParamStore<double> store(5);
    AttentionParams<double> p(store, "att.0", att_cfg(4, 3, 6, 6, 4, 4));
    const auto x = random_tensor({4, 4, 4}, 25);
    const auto full = eval_ma(p, x, x, HeadMask::all(3));
    for (std::size_t h = 0; h < 3; ++h) {
      HeadMask only = HeadMask::none(3);
      only.keep[h] = true;
      const auto diff = oracle::zip(full, eval_ma(p, x, x, HeadMask::drop(3, h)),
                                    [](double a, double b) { return a - b; });
      CHECK(max_abs_diff(diff, eval_ma(p, x, x, only)) < 1e-12);
    }
  }
}

TEST_CASE("parameter keys") {
  ParamStore<double> store(6);
  TemporalAttentionParams<double> p(store, "att.1", att_cfg(4, 2, 2, 2, 4, 4), 3);
  const auto names = store.names();
  for (const char* k : {"att.1.0.wq", "att.1.0.wk", "att.1.0.wv", "att.1.1.wq", "att.1.wo",
                        "att.1.rel_h", "att.1.rel_w", "att.1.w_tau"}) {
    CHECK(std::find(names.begin(), names.end(), k) != names.end());
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(p.w_tau->value[i] == doctest::Approx(1.0 / 3));
  ParamStore<double> s2(6);
  AttentionParams<double> plain(s2, "att.0", att_cfg(4, 2, 2, 2, 4, 4, false));
  CHECK(plain.rel_h == nullptr);
  CHECK(s2.names().size() == 7);
}

TEST_CASE("saaconv examples") {
  ParamStore<double> store(7);
  AttentionParams<double> p(store, "att.0", att_cfg(2, 2, 2, 2, 4, 4));
  const auto x = random_tensor({2, 4, 4}, 30), w = random_tensor({6, 2, 3, 3}, 31), b = random_tensor({6}, 32);
  Tape<double> t;
  auto y = saaconv(t.constant(x), t.constant(w), t.constant(b), p, HeadMask::all(2));
  CHECK(y.shape() == Shape{8, 4, 4});
  const auto expect = oracle::cat({oracle::conv(x, w, b), oracle::multi_head(p, x, x, HeadMask::all(2))});
  CHECK(max_abs_diff(y.value(), expect) < 1e-12);

  for (auto* q : store.all()) {
    if (q->name.find(".wq") != std::string::npos || q->name.find(".wk") != std::string::npos ||
        q->name.find(".wv") != std::string::npos) {
      q->value.fill(0.0);
    }
  }
  Tape<double> t2;
  auto z = saaconv(t2.constant(x), t2.constant(w), t2.constant(b), p, HeadMask::all(2)).value();
  const auto conv_only = oracle::conv(x, w, b);
  for (std::size_t i = 0; i < conv_only.numel(); ++i) CHECK(z[i] == doctest::Approx(conv_only[i]).epsilon(1e-14));
  for (std::size_t i = conv_only.numel(); i < z.numel(); ++i) CHECK(z[i] == 0.0);
}

TEST_CASE("multi_head_temporal_attention examples") {
  ParamStore<double> store(8);
  TemporalAttentionParams<double> p2(store, "att.0", att_cfg(3, 2, 4, 4, 4, 4), 2);
  ParamStore<double> s1(8);
  TemporalAttentionParams<double> p1(s1, "att.0", att_cfg(3, 2, 4, 4, 4, 4), 1);
  const auto x = random_tensor({3, 4, 4}, 40), h0 = random_tensor({3, 4, 4}, 41), h1 = random_tensor({3, 4, 4}, 42);
  const HeadMask all = HeadMask::all(2);

  SUBCASE("one frame with unit weight is MA bit-for-bit") {
    CHECK(p1.w_tau->value[0] == 1.0);
    Tape<double> t;
    const Var<double> hist[] = {t.constant(h0)};
    auto mta = multi_head_temporal_attention(p1, t.constant(x), std::span<const Var<double>>(hist), all).value();
    CHECK(mta.storage() == eval_ma(p1.base, x, h0, all).storage());
  }
  SUBCASE("zero weights") {
    p2.w_tau->value.fill(0.0);
    Tape<double> t;
    const Var<double> hist[] = {t.constant(h0), t.constant(h1)};
    for (double v : multi_head_temporal_attention(p2, t.constant(x), std::span<const Var<double>>(hist), all).value().values()) {
      CHECK(v == 0.0);
    }
  }
  SUBCASE("term by term") {
    p2.w_tau->value = Tensor<double>({2}, {0.7, -0.4});
    Tape<double> t;
    const Var<double> hist[] = {t.constant(h0), t.constant(h1)};
    auto mta = multi_head_temporal_attention(p2, t.constant(x), std::span<const Var<double>>(hist), all).value();
    const auto a = eval_ma(p2.base, x, h0, all), b = eval_ma(p2.base, x, h1, all);
    CHECK(max_abs_diff(mta, oracle::zip(a, b, [](double u, double v) { return 0.7 * u - 0.4 * v; })) < 1e-12);
    CHECK(max_abs_diff(mta, oracle::temporal(p2, x, {h0, h1}, all)) < 1e-12);
  }
  SUBCASE("history bounds") {
    Tape<double> t;
    CHECK_THROWS_AS(multi_head_temporal_attention(p2, t.constant(x), std::span<const Var<double>>(), all),
                    std::invalid_argument);
    const Var<double> three[] = {t.constant(h0), t.constant(h1), t.constant(h0)};
    CHECK_THROWS_AS(multi_head_temporal_attention(p2, t.constant(x), std::span<const Var<double>>(three), all),
                    std::invalid_argument);
  }
}

TEST_CASE("taaconv examples") {
  ParamStore<double> store(9);
  TemporalAttentionParams<double> p(store, "att.0", att_cfg(2, 2, 2, 2, 4, 4), 4);
  const auto x = random_tensor({2, 4, 4}, 50), w = random_tensor({6, 2, 3, 3}, 51), b = random_tensor({6}, 52);
  std::vector<Tensor<double>> hist;
  for (std::uint64_t s = 0; s < 4; ++s) hist.push_back(random_tensor({2, 4, 4}, 53 + s));
  Tape<double> t;
  std::vector<Var<double>> hv;
  for (const auto& h : hist) hv.push_back(t.constant(h));
  auto y = taaconv(t.constant(x), std::span<const Var<double>>(hv), t.constant(w), t.constant(b), p, HeadMask::all(2));
  CHECK(y.shape() == Shape{8, 4, 4});
  const auto expect = oracle::cat({oracle::conv(x, w, b), oracle::temporal(p, x, hist, HeadMask::all(2))});
  CHECK(max_abs_diff(y.value(), expect) < 1e-12);

  p.w_tau->value.fill(0.0);
  Tape<double> t2;
  std::vector<Var<double>> zero_hist(4, t2.constant(Tensor<double>({2, 4, 4})));
  auto z = taaconv(t2.constant(x), std::span<const Var<double>>(zero_hist), t2.constant(w), t2.constant(b), p,
                   HeadMask::all(2)).value();
  for (std::size_t i = 6 * 16; i < z.numel(); ++i) CHECK(z[i] == 0.0);
}

TEST_CASE("attention gradients match finite differences") {
  ParamStore<double> store(10);
  TemporalAttentionParams<double> p(store, "att.0", att_cfg(3, 2, 4, 4, 3, 3), 2);
  p.w_tau->value = Tensor<double>({2}, {0.6, 0.3});
  Parameter<double> x("x", random_tensor({3, 3, 3}, 60)), h0("h0", random_tensor({3, 3, 3}, 61)),
      h1("h1", random_tensor({3, 3, 3}, 62)), cw("cw", random_tensor({5, 3, 3, 3}, 63)),
      cb("cb", random_tensor({5}, 64));
  auto params = store.all();
  for (auto* q : {&x, &h0, &h1, &cw, &cb}) params.push_back(q);
  SUBCASE("saaconv") {
    auto r = check_parameter_gradients([&](Tape<double>& t) {
      return random_projection(saaconv(t.param(x), t.param(cw), t.param(cb), p.base, HeadMask::drop(2, 1)), 65);
    }, params);
    CAPTURE(r.worst_param);
    CHECK(r.max_rel_error < 1e-6);
  }
  SUBCASE("taaconv") {
    auto r = check_parameter_gradients([&](Tape<double>& t) {
      const Var<double> hist[] = {t.param(h0), t.param(h1)};
      return random_projection(
          taaconv(t.param(x), std::span<const Var<double>>(hist), t.param(cw), t.param(cb), p, HeadMask::all(2)), 66);
    }, params);
    CAPTURE(r.worst_param);
    CHECK(r.max_rel_error < 1e-6);
  }
}

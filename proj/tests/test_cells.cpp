// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace gridcast;
using gridcast::test::random_projection;
using gridcast::test::random_tensor;
using gridcast::test::randomize;

namespace {

CellConfig cell_cfg(CellKind kind, std::size_t in, std::size_t d, std::size_t hw,
                    GateParamLayout layout = GateParamLayout::PerChannel) {
  CellConfig c;
  c.kind = kind;
  c.in_channels = in;
  c.hidden = d;
  c.kernel = 3;
  c.height = hw;
  c.width = hw;
  c.layout = layout;
  c.heads = 2;
  c.horizon = 2;
  return c;
}

void check_bounded(const Tensor<double>& h) {
  for (double v : h.values()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
}

}  // namespace

TEST_CASE("convlstm examples") {
  ParamStore<double> store(1);
  ConvLSTMCell<double> cell(store, "cell.0", cell_cfg(CellKind::ConvLSTM, 2, 4, 5));
  SUBCASE("zero weights and state") {
    for (auto* p : store.all()) p->value.fill(0.0);
    Tape<double> t;
    auto s = cell.step(t.constant(random_tensor({2, 5, 5}, 2)), cell.initial_state(t));
    for (double v : s.H.value().values()) CHECK(v == 0.0);
    for (double v : s.C.value().values()) CHECK(v == 0.0);
  }
  SUBCASE("saturated forget and input gates retain memory") {
    randomize(store, 3, 0.3);
    for (std::size_t c = 0; c < 4; ++c) {
      cell.gates.bias[1]->value[c] = 50.0;
      cell.gates.bias[0]->value[c] = -50.0;
    }
    Tape<double> t;
    auto s0 = cell.initial_state(t);
    s0.C = t.constant(random_tensor({4, 5, 5}, 4));
    auto s = cell.step(t.constant(random_tensor({2, 5, 5}, 5)), s0);
    CHECK(max_abs_diff(s.C.value(), s0.C.value()) < 1e-12);
  }
  SUBCASE("two steps match the transcription oracle") {
    for (auto layout : {GateParamLayout::PerChannel, GateParamLayout::PerCell}) {
      ParamStore<double> st(6);
      ConvLSTMCell<double> c2(st, "cell.0", cell_cfg(CellKind::ConvLSTM, 2, 4, 5, layout));
      randomize(st, 7, 0.5);
      const auto x0 = random_tensor({2, 5, 5}, 8), x1 = random_tensor({2, 5, 5}, 9);
      Tape<double> t;
      auto s = c2.step(t.constant(x0), c2.initial_state(t));
      s = c2.step(t.constant(x1), s);
      auto o = oracle::convlstm(c2, x0, Tensor<double>({4, 5, 5}), Tensor<double>({4, 5, 5}));
      o = oracle::convlstm(c2, x1, o.H, o.C);
      CHECK(max_abs_diff(s.H.value(), o.H) < 1e-12);
      CHECK(max_abs_diff(s.C.value(), o.C) < 1e-12);
      check_bounded(s.H.value());
    }
  }
  SUBCASE("shape errors") {
    Tape<double> t;
    CHECK_THROWS_AS(cell.step(t.constant(Tensor<double>({3, 5, 5})), cell.initial_state(t)), ShapeError);
    CHECK_THROWS_AS(cell.step(t.constant(Tensor<double>({2, 4, 5})), cell.initial_state(t)), ShapeError);
  }
  SUBCASE("keys") {
    const auto names = store.names();
    for (const char* k : {"cell.0.i.wx", "cell.0.f.wh", "cell.0.o.wc", "cell.0.c.b"}) {
      CHECK(std::find(names.begin(), names.end(), k) != names.end());
    }
    CHECK(std::find(names.begin(), names.end(), "cell.0.c.wc") == names.end());
  }
  CHECK_THROWS(ConvLSTMCell<double>(store, "cell.9", [] {
    auto c = cell_cfg(CellKind::ConvLSTM, 2, 4, 5);
    c.kernel = 4;
    return c;
  }()));
}

TEST_CASE("taaconvlstm examples") {
  auto cfg = cell_cfg(CellKind::TAAConvLSTM, 2, 8, 6);
  cfg.attention_channels = 2;
  SUBCASE("first step equals the conv branch with a zero attention block") {
    ParamStore<double> store(10);
    TAAConvLSTMCell<double> cell(store, "cell.0", "att.0", cfg);
    randomize(store, 11, 0.5);
    const auto x = random_tensor({2, 6, 6}, 12), h = random_tensor({8, 6, 6}, 13, -0.9, 0.9),
               c = random_tensor({8, 6, 6}, 14);
    Tape<double> t;
    CellState<double> s;
    s.H = t.constant(h);
    s.C = t.constant(c);
    auto n = cell.step(t.constant(x), s);
    const auto o = oracle::taaconvlstm(cell, x, h, c, {});
    CHECK(max_abs_diff(n.H.value(), o.H) < 1e-12);
    CHECK(n.history.empty());
  }
  SUBCASE("two steps with H_a=1 match the splice oracle") {
    auto c1 = cfg;
    c1.horizon = 1;
    ParamStore<double> store(15);
    TAAConvLSTMCell<double> cell(store, "cell.0", "att.0", c1);
    randomize(store, 16, 0.5);
    std::vector<Tensor<double>> xs;
    for (std::uint64_t k = 0; k < 3; ++k) xs.push_back(random_tensor({2, 6, 6}, 17 + k));
    Tape<double> t;
    auto s = cell.initial_state(t);
    oracle::LstmOut o{Tensor<double>({8, 6, 6}), Tensor<double>({8, 6, 6})};
    std::vector<Tensor<double>> hist;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const Tensor<double> h_prev = o.H;
      o = oracle::taaconvlstm(cell, xs[k], o.H, o.C, hist);
      if (k >= 1) hist = {h_prev};
      s = cell.step(t.constant(xs[k]), s);
      CHECK(max_abs_diff(s.H.value(), o.H) < 1e-12);
      CHECK(max_abs_diff(s.C.value(), o.C) < 1e-12);
      check_bounded(s.H.value());
    }
  }
  SUBCASE("history length is min(T-1, H_a)") {
    for (std::size_t ha : {1u, 2u, 3u}) {
      auto c2 = cfg;
      c2.horizon = ha;
      ParamStore<double> store(20);
      TAAConvLSTMCell<double> cell(store, "cell.0", "att.0", c2);
      Tape<double> t;
      auto s = cell.initial_state(t);
      for (std::size_t T = 1; T <= 6; ++T) {
        s = cell.step(t.constant(random_tensor({2, 6, 6}, 30 + T)), s);
        CHECK(s.history.size() == std::min(T - 1, ha));
        CHECK(cell.attended_history(s).size() == std::min(T - 1, ha));
      }
    }
  }
  SUBCASE("uniform history mode spreads over the span") {
    auto c2 = cfg;
    c2.horizon = 3;
    c2.history_mode = HistoryMode::Uniform;
    c2.uniform_span = 5;
    ParamStore<double> store(21);
    TAAConvLSTMCell<double> cell(store, "cell.0", "att.0", c2);
    Tape<double> t;
    auto s = cell.initial_state(t);
    for (std::size_t T = 1; T <= 8; ++T) s = cell.step(t.constant(random_tensor({2, 6, 6}, 40 + T)), s);
    CHECK(s.history.size() == 5);
    const auto att = cell.attended_history(s);
    REQUIRE(att.size() == 3);
    CHECK(att[0].id() == s.history[0].id());
    CHECK(att[1].id() == s.history[2].id());
    CHECK(att[2].id() == s.history[4].id());
  }
}

TEST_CASE("saaconvlstm examples") {
  auto cfg = cell_cfg(CellKind::SAAConvLSTM, 4, 6, 5);
  cfg.attention_channels = 2;
  ParamStore<double> store(50);
  SAAConvLSTMCell<double> cell(store, "cell.0", "att.0", cfg);
  randomize(store, 51, 0.5);
  const auto h = random_tensor({6, 5, 5}, 52, -0.9, 0.9), c = random_tensor({6, 5, 5}, 53);
  SUBCASE("splice oracle over two steps") {
    const auto x0 = random_tensor({4, 5, 5}, 54), x1 = random_tensor({4, 5, 5}, 55);
    Tape<double> t;
    CellState<double> s;
    s.H = t.constant(h);
    s.C = t.constant(c);
    s = cell.step(t.constant(x0), s);
    s = cell.step(t.constant(x1), s);
    auto o = oracle::saaconvlstm(cell, x0, h, c);
    o = oracle::saaconvlstm(cell, x1, o.H, o.C);
    CHECK(max_abs_diff(s.H.value(), o.H) < 1e-12);
    CHECK(max_abs_diff(s.C.value(), o.C) < 1e-12);
  }
  SUBCASE("zero input leaves only state terms") {
    for (auto* p : store.all()) {
      if (p->name.find(".b") != std::string::npos && p->name.rfind("cell.", 0) == 0) p->value.fill(0.0);
    }
    const Tensor<double> zero({4, 5, 5});
    Tape<double> t;
    CellState<double> s;
    s.H = t.constant(h);
    s.C = t.constant(c);
    auto n = cell.step(t.constant(zero), s);
    std::array<Tensor<double>, 4> xt, ht;
    for (std::size_t g = 0; g < 4; ++g) {
      xt[g] = Tensor<double>({6, 5, 5});
      ht[g] = oracle::conv(h, cell.wh[g]->value);
    }
    // Attention over an all-zero input: values are zero, so its block is too.
    const auto o = oracle::lstm(xt, ht, c, cell.gates);
    CHECK(max_abs_diff(n.H.value(), o.H) < 1e-12);
  }
}

TEST_CASE("attention cells reduce to block-structured ConvLSTM") {
  for (auto kind : {CellKind::TAAConvLSTM, CellKind::SAAConvLSTM}) {
    CAPTURE(to_string(kind));
    auto cfg = cell_cfg(kind, 3, 8, 6, GateParamLayout::PerCell);
    cfg.attention_channels = 2;
    ParamStore<double> store(60);
    auto cell = make_cell(store, "cell.0", "att.0", cfg);
    randomize(store, 61, 0.5);
    gridcast::test::zero_params_with_prefix(store, "att.0");

    auto ccfg = cfg;
    ccfg.kind = CellKind::ConvLSTM;
    ParamStore<double> ref_store(62);
    ConvLSTMCell<double> ref(ref_store, "cell.0", ccfg);
    for (auto* p : ref_store.all()) {
      const auto& src = store.at(p->name).value;
      if (src.shape() == p->value.shape()) {
        p->value = src;
        continue;
      }
      // Reduced conv branch: copy into the leading output channels, zero the rest.
      p->value.fill(0.0);
      std::copy(src.values().begin(), src.values().end(), p->value.data());
    }
    Tape<double> t;
    auto s = cell->initial_state(t);
    auto r = ref.initial_state(t);
    for (std::uint64_t k = 0; k < 3; ++k) {
      const auto x = t.constant(random_tensor({3, 6, 6}, 63 + k));
      s = cell->step(x, s);
      r = ref.step(x, r);
      CHECK(max_abs_diff(s.H.value(), r.H.value()) < 1e-12);
      CHECK(max_abs_diff(s.C.value(), r.C.value()) < 1e-12);
    }
  }
}

TEST_CASE("causal LSTM examples") {
  CausalLSTMConfig cfg{3, 4, 3};
  ParamStore<double> store(70);
  CausalLSTMCell<double> cell(store, "predrnn.0", cfg);
  SUBCASE("zero weights") {
    for (auto* p : store.all()) p->value.fill(0.0);
    Tape<double> t;
    const auto c_prev = random_tensor({4, 5, 5}, 71);
    auto o = cell.step(t.constant(random_tensor({3, 5, 5}, 72)), t.constant(random_tensor({4, 5, 5}, 73)),
                       t.constant(c_prev), t.constant(random_tensor({4, 5, 5}, 74)));
    for (std::size_t i = 0; i < c_prev.numel(); ++i) CHECK(o.C.value()[i] == doctest::Approx(0.5 * c_prev[i]));
    for (double v : o.H.value().values()) CHECK(v == 0.0);
    Tape<double> t0;
    const Tensor<double> z({4, 5, 5});
    auto o0 = cell.step(t0.constant(Tensor<double>({3, 5, 5})), t0.constant(z), t0.constant(z), t0.constant(z));
    for (double v : o0.H.value().values()) CHECK(v == 0.0);
    for (double v : o0.M.value().values()) CHECK(v == 0.0);
  }
  SUBCASE("transcription oracle") {
    randomize(store, 75, 0.3);
    const auto x = random_tensor({3, 5, 5}, 76), h = random_tensor({4, 5, 5}, 77), c = random_tensor({4, 5, 5}, 78),
               m = random_tensor({4, 5, 5}, 79);
    Tape<double> t;
    auto o = cell.step(t.constant(x), t.constant(h), t.constant(c), t.constant(m));
    const auto e = oracle::causal_lstm(cell, x, h, c, m);
    CHECK(max_abs_diff(o.H.value(), e.H) < 1e-12);
    CHECK(max_abs_diff(o.C.value(), e.C) < 1e-12);
    CHECK(max_abs_diff(o.M.value(), e.M) < 1e-12);
    check_bounded(o.H.value());
  }
  SUBCASE("full-scale hidden size keeps shapes") {
    ParamStore<float> s64(80);
    CausalLSTMCell<float> big(s64, "predrnn.0", {32, 64, 5});
    Tape<float> t;
    const Tensor<float> z({64, 8, 8});
    auto o = big.step(t.constant(Tensor<float>({32, 8, 8})), t.constant(z), t.constant(z), t.constant(z));
    CHECK(o.H.shape() == Shape{64, 8, 8});
    CHECK(o.C.shape() == Shape{64, 8, 8});
    CHECK(o.M.shape() == Shape{64, 8, 8});
  }
  SUBCASE("shape mismatch") {
    Tape<double> t;
    const Tensor<double> z({4, 5, 5});
    CHECK_THROWS_AS(cell.step(t.constant(Tensor<double>({2, 5, 5})), t.constant(z), t.constant(z), t.constant(z)),
                    ShapeError);
  }
}

TEST_CASE("gradient highway unit examples") {
  ParamStore<double> store(90);
  GradientHighwayUnit<double> ghu(store, "predrnn.ghu", 4, 4, 3);
  const auto x = random_tensor({4, 5, 5}, 91), z = random_tensor({4, 5, 5}, 92);
  auto run = [&] {
    Tape<double> t;
    return ghu.step(t.constant(x), t.constant(z)).value();
  };
  SUBCASE("closed gate passes Z through") {
    ghu.b_s->value.fill(-60.0);
    CHECK(max_abs_diff(run(), z) < 1e-12);
  }
  SUBCASE("open gate yields P") {
    ghu.b_s->value.fill(60.0);
    const auto p = oracle::tanh(oracle::add(oracle::conv(x, ghu.w_px->value, ghu.b_p->value),
                                            oracle::conv(z, ghu.w_pz->value)));
    CHECK(max_abs_diff(run(), p) < 1e-12);
  }
  SUBCASE("zero weights halve Z") {
    for (auto* p : store.all()) p->value.fill(0.0);
    const auto y = run();
    for (std::size_t i = 0; i < z.numel(); ++i) CHECK(y[i] == doctest::Approx(0.5 * z[i]).epsilon(1e-15));
  }
  SUBCASE("oracle") {
    randomize(store, 93, 0.4);
    CHECK(max_abs_diff(run(), oracle::ghu(ghu, x, z)) < 1e-12);
  }
}

TEST_CASE("two-step cell rollouts pass gradient checks") {
  const std::size_t hw = 4;
  Parameter<double> x0("x0", random_tensor({2, hw, hw}, 100)), x1("x1", random_tensor({2, hw, hw}, 101));
  for (auto kind : {CellKind::ConvLSTM, CellKind::TAAConvLSTM, CellKind::SAAConvLSTM}) {
    CAPTURE(to_string(kind));
    auto cfg = cell_cfg(kind, 2, 4, hw, GateParamLayout::PerCell);
    cfg.attention_channels = 2;
    ParamStore<double> store(102);
    auto cell = make_cell(store, "cell.0", "att.0", cfg);
    randomize(store, 103, 0.5);
    auto params = store.all();
    params.push_back(&x0);
    params.push_back(&x1);
    auto r = check_parameter_gradients([&](Tape<double>& t) {
      auto s = cell->initial_state(t);
      s.H = t.constant(random_tensor({4, hw, hw}, 104, -0.5, 0.5));
      s = cell->step(t.param(x0), s);
      s = cell->step(t.param(x1), s);
      s = cell->step(t.param(x0), s);  // third step so temporal attention sees history
      return random_projection(s.H, 105);
    }, params);
    CAPTURE(r.worst_param);
    CHECK(r.max_rel_error < 1e-4);
  }
}

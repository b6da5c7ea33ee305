// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include "doctest.h"
#include "gridcast/training.hpp"
#include "helpers.hpp"

using namespace gridcast;

namespace {

StackConfig tiny_cfg() {
  StackConfig c;
  c.channels = {2, 4};
  c.kernels = {3, 3};
  c.height = 8;
  c.width = 8;
  c.heads = 2;
  c.horizon = 2;
  c.attention_channels = 2;
  apply_variant(c, "prednet");
  return c;
}

/// An episode whose every frame is the same mass pair per cell.
EpisodeRecord constant_episode(std::size_t steps, float o, float f) {
  EpisodeRecord ep;
  ep.height = 8;
  ep.width = 8;
  ep.resolution = 1.0 / 3.0;
  ep.frames = Tensor<float>(Shape{steps, 2, 8, 8});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < 64; ++i) {
      ep.frames.storage()[t * 128 + i] = o;
      ep.frames.storage()[t * 128 + 64 + i] = f;
    }
  ep.ego.resize(steps);
  return ep;
}

/// Frames drifting one cell to the right per step.
EpisodeRecord moving_episode(std::size_t steps) {
  EpisodeRecord ep = constant_episode(steps, 0.0f, 0.6f);
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t c = t % 8;
    for (std::size_t r = 3; r < 5; ++r) {
      ep.frames.storage()[t * 128 + r * 8 + c] = 0.7f;
      ep.frames.storage()[t * 128 + 64 + r * 8 + c] = 0.0f;
    }
  }
  return ep;
}

}  // namespace

TEST_CASE("l1 sequence loss") {
  Tape<double> tape;
  const Tensor<double> target = test::random_tensor(Shape{3, 2, 4, 4}, 1, 0.0, 0.5);
  std::vector<Var<double>> same, off;
  for (std::size_t p = 0; p < 3; ++p) {
    std::vector<double> v(target.data() + p * 32, target.data() + (p + 1) * 32);
    Tensor<double> frame(Shape{2, 4, 4}, v);
    same.push_back(tape.constant(frame));
    for (auto& x : frame.values()) x += (p % 2 == 0 ? 0.2 : -0.2);
    off.push_back(tape.constant(frame));
  }
  CHECK(l1_sequence_loss(same, target).value()[0] == 0.0);
  CHECK(l1_sequence_loss(off, target).value()[0] == doctest::Approx(0.2).epsilon(1e-12));

  const Tensor<double> other = test::random_tensor(Shape{3, 2, 4, 4}, 2);
  double ref = 0.0;
  for (std::size_t i = 0; i < other.numel(); ++i) ref += std::abs(other.storage()[i] - target.storage()[i]);
  std::vector<Var<double>> preds;
  for (std::size_t p = 0; p < 3; ++p) {
    std::vector<double> v(other.data() + p * 32, other.data() + (p + 1) * 32);
    preds.push_back(tape.constant(Tensor<double>(Shape{2, 4, 4}, v)));
  }
  CHECK(std::abs(l1_sequence_loss(preds, target).value()[0] - ref / 96.0) < 1e-14);
  CHECK_THROWS_AS(l1_sequence_loss(std::vector<Var<double>>(same.begin(), same.begin() + 2), target),
                  ShapeError);
}

TEST_CASE("adam") {
  Parameter<double> p("w", Tensor<double>(Shape{3}, {1.0, -2.0, 0.5}));
  Adam<double> opt({&p}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  p.zero_grad();
  opt.step();
  CHECK(p.value[0] == 1.0);
  CHECK(p.value[1] == -2.0);

  SUBCASE("first step moves each weight by lr against the gradient sign") {
    Parameter<double> q("w", Tensor<double>(Shape{3}, {1.0, -2.0, 0.5}));
    Adam<double> a({&q}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
    q.grad = Tensor<double>(Shape{3}, {3.0, -0.01, 100.0});
    a.step();
    CHECK(q.value[0] == doctest::Approx(0.9).epsilon(1e-7));
    CHECK(q.value[1] == doctest::Approx(-1.9).epsilon(1e-5));
    CHECK(q.value[2] == doctest::Approx(0.4).epsilon(1e-7));
    CHECK(a.steps() == 1);
    CHECK(a.first_moment(0)[0] == doctest::Approx(0.3));
    CHECK(a.second_moment(0)[2] == doctest::Approx(10.0));
  }
  SUBCASE("frozen parameters stay put") {
    Parameter<double> q("w", Tensor<double>(Shape{1}, {1.0}));
    q.requires_grad = false;
    Adam<double> a({&q}, AdamConfig{});
    q.grad = Tensor<double>(Shape{1}, {5.0});
    a.step();
    CHECK(q.value[0] == 1.0);
  }
}

TEST_CASE("gradient clipping") {
  Parameter<double> a("a", Tensor<double>(Shape{2})), b("b", Tensor<double>(Shape{1}));
  a.grad = Tensor<double>(Shape{2}, {3.0, 0.0});
  b.grad = Tensor<double>(Shape{1}, {4.0});
  std::vector<Parameter<double>*> ps{&a, &b};
  CHECK(global_grad_norm(ps) == 5.0);
  CHECK(clip_grad_norm(ps, 10.0) == 5.0);
  CHECK(a.grad[0] == 3.0);
  CHECK(clip_grad_norm(ps, 1.0) == 5.0);
  CHECK(global_grad_norm(ps) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(a.grad[0] == doctest::Approx(0.6));
  CHECK(b.grad[0] == doctest::Approx(0.8));
  clip_grad_norm(ps, 0.0);
  CHECK(global_grad_norm(ps) == doctest::Approx(1.0));
}

TEST_CASE("windows") {
  std::vector<EpisodeRecord> data{constant_episode(10, 0, 0), constant_episode(3, 0, 0),
                                  constant_episode(4, 0, 0)};
  const auto w = enumerate_windows(data, 4);
  CHECK(w.size() == 7 + 1);
  CHECK(w.back().episode == 2);
  CHECK(w.back().start == 0);
}

TEST_CASE("train") {
  const std::vector<EpisodeRecord> data{moving_episode(12)};
  TrainConfig cfg;
  cfg.input_length = 3;
  cfg.horizon = 2;
  cfg.epochs = 3;
  cfg.samples_per_epoch = 4;
  cfg.batch = 2;
  cfg.seed = 5;

  SUBCASE("zero learning rate leaves the loss unchanged") {
    PredNet<float> net(tiny_cfg(), 1);
    const double before = window_loss(net, data[0], 0, 3, 2);
    cfg.adam.lr = 0.0;
    train(net, data, cfg);
    CHECK(window_loss(net, data[0], 0, 3, 2) == before);
  }
  SUBCASE("fixed seed gives identical curves") {
    PredNet<float> a(tiny_cfg(), 1), b(tiny_cfg(), 1);
    std::size_t calls = 0;
    const TrainResult ra = train(a, data, cfg, [&](const EpochStats& s) {
      ++calls;
      CHECK(s.epoch == calls);
      CHECK(s.grad_norm > 0.0);
    });
    const TrainResult rb = train(b, data, cfg);
    CHECK(calls == 3);
    REQUIRE(ra.epochs.size() == rb.epochs.size());
    for (std::size_t e = 0; e < ra.epochs.size(); ++e) CHECK(ra.epochs[e].loss == rb.epochs[e].loss);
    CHECK(ra.best_loss == rb.best_loss);
    for (auto* p : a.params().all()) { CAPTURE(p->name); CHECK(max_abs_diff(p->value, b.params().at(p->name).value) == 0.0); }
  }
  SUBCASE("divergence is reported") {
    PredNet<float> net(tiny_cfg(), 1);
    net.params().all().front()->value.fill(std::numeric_limits<float>::quiet_NaN());
    std::string msg;
    CHECK_THROWS_AS(train(net, data, cfg, {}, [&](const std::string& m) { msg = m; }),
                    NumericalError);
    CHECK(msg.find("non-finite") != std::string::npos);
  }
  SUBCASE("invalid settings") {
    PredNet<float> net(tiny_cfg(), 1);
    TrainConfig bad = cfg;
    bad.horizon = 20;
    CHECK_THROWS_AS(train(net, data, bad), std::invalid_argument);
    bad = cfg;
    bad.batch = 0;
    CHECK_THROWS_AS(train(net, data, bad), std::invalid_argument);
  }
}

TEST_CASE("overfits a constant sequence") {
  const std::vector<EpisodeRecord> data{constant_episode(8, 0.3f, 0.5f)};
  PredNet<float> net(tiny_cfg(), 2);
  TrainConfig cfg;
  cfg.input_length = 3;
  cfg.horizon = 1;
  cfg.epochs = 60;
  cfg.samples_per_epoch = 4;
  cfg.batch = 2;
  cfg.adam.lr = 1e-2;
  const double before = window_loss(net, data[0], 0, 3, 1);
  const TrainResult r = train(net, data, cfg);
  const double after = window_loss(net, data[0], 0, 3, 1);
  CHECK(after < 0.5 * before);
  CHECK(after < 0.03);
  CHECK(r.best_loss <= r.epochs.front().loss);
}

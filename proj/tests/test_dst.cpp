// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "doctest.h"
#include "gridcast/world.hpp"

using namespace gridcast;

namespace {

/// Dempster's rule by enumerating all nine focal-set pairs. Sets are bit
/// masks over {O=1, F=2}; 3 is {F,O}.
Masses combine_oracle(Masses a, Masses b) {
  const double ma[4] = {0, a.o, a.f, a.fo()}, mb[4] = {0, b.o, b.f, b.fo()};
  double m[4] = {0, 0, 0, 0};
  for (int x = 1; x < 4; ++x)
    for (int y = 1; y < 4; ++y) m[x & y] += ma[x] * mb[y];
  const double k = m[0];
  return {m[1] / (1 - k), m[2] / (1 - k)};
}

Masses random_masses(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double a = u(rng), b = u(rng);
  return {std::min(a, b), 1.0 - std::max(a, b)};
}

bool segments_cross(Point p, Point q, Point a, Point b) {
  auto cross = [](Point o, Point s, Point t) {
    return (s.x - o.x) * (t.y - o.y) - (s.y - o.y) * (t.x - o.x);
  };
  const double d1 = cross(a, b, p), d2 = cross(a, b, q), d3 = cross(p, q, a), d4 = cross(p, q, b);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0));
}

}  // namespace

TEST_CASE("dst_combine examples") {
  const Masses m{0.3, 0.45};
  const Masses v = dst_combine(Masses::vacuous(), m);
  CHECK(v.o == m.o);
  CHECK(v.f == m.f);

  const Masses r = dst_combine({0.5, 0.2}, {0.4, 0.4});
  CHECK(std::abs(r.o - 0.42 / 0.72) < 1e-12);
  CHECK(std::abs(r.f - 0.24 / 0.72) < 1e-12);
  CHECK(std::abs(r.fo() - 0.06 / 0.72) < 1e-12);
  CHECK(r.o == doctest::Approx(0.5833).epsilon(1e-4));
  CHECK(r.f == doctest::Approx(0.3333).epsilon(1e-4));
  CHECK(r.fo() == doctest::Approx(0.0833).epsilon(1e-3));
  const Masses o = combine_oracle({0.5, 0.2}, {0.4, 0.4});
  CHECK(std::abs(r.o - o.o) < 1e-15);
  CHECK(std::abs(r.f - o.f) < 1e-15);

  CHECK_THROWS_AS(dst_combine({1, 0}, {0, 1}), TotalConflictError);
}

TEST_CASE("dst_combine properties on random pairs") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20000; ++i) {
    const Masses a = random_masses(rng), b = random_masses(rng);
    const Masses ab = dst_combine(a, b), ba = dst_combine(b, a), o = combine_oracle(a, b);
    CHECK(std::abs(ab.o - ba.o) <= 1e-12);
    CHECK(std::abs(ab.f - ba.f) <= 1e-12);
    CHECK(std::abs(ab.o - o.o) <= 1e-12);
    CHECK(std::abs(ab.f - o.f) <= 1e-12);
    CHECK(ab.valid(1e-12));
    const Masses va = dst_combine(Masses::vacuous(), a);
    CHECK((va.o == a.o && va.f == a.f));
  }
}

TEST_CASE("aging") {
  const Masses m = age_masses({0.8, 0.1}, 0.9);
  CHECK(m.o == doctest::Approx(0.72).epsilon(1e-15));
  CHECK(m.f == doctest::Approx(0.09).epsilon(1e-15));
  CHECK(m.fo() == doctest::Approx(0.19).epsilon(1e-12));
  const Masses id = age_masses({0.8, 0.1}, 1.0);
  CHECK((id.o == 0.8 && id.f == 0.1));
  const Masses z = age_masses(Masses::vacuous(), 0.9);
  CHECK((z.o == 0.0 && z.f == 0.0));
  CHECK_THROWS_AS(age_masses(m, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(age_masses(m, 1.5), std::invalid_argument);
}

TEST_CASE("pignistic") {
  CHECK(pignistic(Masses::vacuous()) == 0.5);
  CHECK(pignistic({0.6, 0.2}) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(pignistic({1.0, 0.0}) == 1.0);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Masses m = random_masses(rng);
    const double bet_f = m.f + 0.5 * m.fo();
    CHECK(std::abs(pignistic(m) + bet_f - 1.0) < 1e-12);
  }
}

TEST_CASE("classify") {
  CHECK(classify(Masses::vacuous()) == CellClass::Unknown);
  CHECK(classify({0.5, 0.2}) == CellClass::Occupied);
  CHECK(classify({0.4, 0.2}) == CellClass::Unknown);
  CHECK(classify({0.4, 0.4}) == CellClass::Occupied);
  CHECK(classify({0.1, 0.6}) == CellClass::Free);
  CHECK(classify({0.45, 0.45}) == CellClass::Occupied);
}

TEST_CASE("belief grid fusion") {
  BeliefGrid g(2, 3, 0.5);
  CHECK(g.closure_holds());
  for (double p : g.pignistic()) CHECK(p == 0.5);
  BeliefGrid z(2, 3, 0.5);
  z.set(0, 0, {0.7, 0.0});
  z.set(1, 2, {0.0, 0.6});
  CHECK(g.fuse(z, 0.98) == 0);
  CHECK(g.at(0, 0).o == 0.7);
  CHECK(g.at(1, 2).f == 0.6);
  CHECK(g.at(0, 1).fo() == 1.0);

  BeliefGrid certain(2, 3, 0.5), contra(2, 3, 0.5);
  certain.set(0, 0, {1.0, 0.0});
  contra.set(0, 0, {0.0, 1.0});
  CHECK(certain.fuse(contra, 1.0) == 1);
  CHECK(certain.at(0, 0).o == 0.0);
  CHECK(certain.at(0, 0).f == 0.0);
  CHECK_THROWS_AS(g.fuse(BeliefGrid(3, 3, 0.5), 1.0), ShapeError);

  SUBCASE("repeated evidence converges monotonically") {
    BeliefGrid b(1, 1, 1.0), meas(1, 1, 1.0);
    meas.set(0, 0, {0.0, 0.6});
    double prev = 0.0;
    for (int t = 0; t < 200; ++t) {
      b.fuse(meas, 0.98);
      CHECK(b.at(0, 0).f >= prev);
      prev = b.at(0, 0).f;
    }
    // Fixed point of f = 1 - (1 - αf)(1 - p): f* = p / (1 - α(1 - p)).
    CHECK(prev == doctest::Approx(0.6 / (1 - 0.98 * 0.4)).epsilon(1e-9));
  }
  SUBCASE("tensor round trip") {
    const auto t = z.to_tensor<double>();
    CHECK(t.shape() == Shape{2, 2, 3});
    const BeliefGrid back = BeliefGrid::from_tensor(t, 0.5);
    CHECK(back.occupied() == z.occupied());
    CHECK(back.free() == z.free());
    const ClassGrid c = classify_tensor(t);
    CHECK(c.at(0, 0) == CellClass::Occupied);
    CHECK(c.at(1, 2) == CellClass::Free);
    CHECK(c.at(1, 1) == CellClass::Unknown);
  }
}

TEST_CASE("grid frame conventions") {
  GridFrame f;
  f.origin = {2.0, -1.0, 0.5};
  const GridPoint center = f.to_grid({2.0, -1.0});
  CHECK(center.row == doctest::Approx(16.0));
  CHECK(center.col == doctest::Approx(16.0));
  // A point ahead of the ego lands toward row 0; one to its left toward column 0.
  const GridPoint ahead = f.to_grid({2.0 + std::cos(0.5), -1.0 + std::sin(0.5)});
  CHECK(ahead.row == doctest::Approx(13.0));
  CHECK(ahead.col == doctest::Approx(16.0));
  const GridPoint left = f.to_grid({2.0 - std::sin(0.5), -1.0 + std::cos(0.5)});
  CHECK(left.col == doctest::Approx(13.0));
  const Point back = f.to_world(ahead.row, ahead.col);
  CHECK(back.x == doctest::Approx(2.0 + std::cos(0.5)));
}

TEST_CASE("traverse_cells") {
  const auto cells = traverse_cells({0.5, 0.5}, {3.5, 2.5}, 8, 8);
  CHECK(cells.front() == std::pair<std::size_t, std::size_t>{0, 0});
  CHECK(cells.back() == std::pair<std::size_t, std::size_t>{3, 2});
  CHECK(cells.size() == 6);  // |Δr| + |Δc| + 1
  for (std::size_t i = 1; i < cells.size(); ++i) {
    const long dr = long(cells[i].first) - long(cells[i - 1].first),
               dc = long(cells[i].second) - long(cells[i - 1].second);
    CHECK(std::abs(dr) + std::abs(dc) == 1);
  }
  CHECK(traverse_cells({-3.0, -3.0}, {-1.0, -2.0}, 8, 8).empty());
}

TEST_CASE("inverse sensor model") {
  GridFrame frame;
  SensorConfig sensor;
  SUBCASE("no obstacles") {
    WorldState w;
    const BeliefGrid m = raycast_inverse_sensor(w, sensor, frame);
    std::size_t free = 0;
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c) {
        CHECK(m.at(r, c).o == 0.0);
        if (m.at(r, c).f > 0) ++free;
      }
    CHECK(free == 32 * 32);  // 8 m range covers the whole 10.7 m grid
  }
  SUBCASE("one ray against a perpendicular wall") {
    WorldState w;
    w.walls.push_back({{3.1, -2.0}, {3.1, 2.0}});
    sensor.rays = 1;
    const BeliefGrid m = raycast_inverse_sensor(w, sensor, frame);
    std::size_t occ = 0;
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c) occ += m.at(r, c).o > 0;
    CHECK(occ == 1);
    CHECK(m.at(6, 16).o == sensor.p_occ);
    for (std::size_t r = 7; r < 16; ++r) CHECK(m.at(r, 16).f == sensor.p_free);
    for (std::size_t r = 0; r < 6; ++r) CHECK(m.at(r, 16).fo() == 1.0);
  }
  SUBCASE("shadow behind a box classifies unknown") {
    WorldState w;
    Box b;
    b.center = {2.5, 0.0};
    b.length = 1.0;
    b.width = 2.0;
    w.boxes.push_back(b);
    BeliefGrid belief(32, 32, frame.resolution);
    belief.fuse(raycast_inverse_sensor(w, sensor, frame), 0.98);
    const auto classes = belief.classify();
    const auto edges = b.edges();
    std::size_t shadowed = 0;
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c) {
        // Occluded when every corner's sight line crosses the box outline.
        bool all_blocked = true, any_blocked = false;
        for (double dr : {0.0, 1.0})
          for (double dc : {0.0, 1.0}) {
            const Point corner = frame.to_world(r + dr, c + dc);
            bool blocked = false;
            for (const auto& e : edges) blocked |= segments_cross({0, 0}, corner, e.a, e.b);
            all_blocked &= blocked;
            any_blocked |= blocked;
          }
        const Point ctr = frame.cell_center(r, c);
        if (all_blocked && !b.contains(ctr)) {
          ++shadowed;
          CHECK(classes.at(r, c) == CellClass::Unknown);
        }
        if (!any_blocked && std::hypot(ctr.x, ctr.y) < sensor.range - 0.5) {
          CHECK(classes.at(r, c) != CellClass::Unknown);
        }
      }
    CHECK(shadowed > 20);
  }
}

TEST_CASE("generated episodes") {
  for (Scenario s : all_scenarios()) {
    CAPTURE(to_string(s));
    ScenarioConfig cfg;
    cfg.scenario = s;
    cfg.seed = 3;
    const EpisodeRecord ep = generate_episode(cfg);
    CHECK(ep.steps() == 30);
    CHECK(ep.frames.shape() == Shape{30, 2, 32, 32});
    for (std::size_t t = 0; t < ep.steps(); ++t) {
      const BeliefGrid g = ep.belief(t);
      CHECK(g.closure_holds(1e-6));
      const Masses ego = g.at(16, 16);
      CHECK(ego.f > ego.o);
      CHECK(classify(ego) == CellClass::Free);
    }
    if (s != Scenario::StaticClutter) CHECK(!ep.boxes.empty());
  }
  SUBCASE("determinism and file round trip") {
    ScenarioConfig cfg;
    cfg.scenario = Scenario::Crossing;
    cfg.steps = 12;
    cfg.seed = 4;
    const EpisodeRecord a = generate_episode(cfg), b = generate_episode(cfg);
    CHECK(a.frames.storage() == b.frames.storage());
    std::stringstream ss;
    write_episode(ss, a);
    CHECK(ss.str().substr(0, 4) == "GCEP");
    const EpisodeRecord c = read_episode(ss);
    CHECK(c.frames.storage() == a.frames.storage());
    CHECK(c.steps() == a.steps());
    CHECK(c.boxes.size() == a.boxes.size());
    CHECK(c.resolution == a.resolution);
    CHECK(c.window(2, 5).shape() == Shape{5, 2, 32, 32});
    CHECK_THROWS(load_episode("/nonexistent/episode.gcep"));
  }
  SUBCASE("scenario names") {
    CHECK(scenario_from_string("intersection") == Scenario::IntersectionTurn);
    CHECK(scenario_from_string("straight_pass") == Scenario::StraightPass);
    CHECK_THROWS(scenario_from_string("highway"));
  }
}

TEST_CASE("static world converges along observed rays") {
  ScenarioConfig cfg;
  cfg.scenario = Scenario::StaticClutter;
  cfg.steps = 40;
  const EpisodeRecord ep = generate_episode(cfg);
  // Cells that were free-observed at step 1 keep gaining free mass.
  const BeliefGrid first = ep.belief(1), last = ep.belief(ep.steps() - 1);
  std::size_t gained = 0, checked = 0;
  for (std::size_t r = 0; r < 32; ++r)
    for (std::size_t c = 0; c < 32; ++c) {
      if (classify(first.at(r, c)) != CellClass::Free) continue;
      ++checked;
      gained += last.at(r, c).f >= first.at(r, c).f - 1e-6;
    }
  CHECK(checked > 100);
  CHECK(static_cast<double>(gained) / checked > 0.95);
}

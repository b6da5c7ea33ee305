// SPDX-License-Identifier: Apache-2.0
#include "gridcast/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

#include "gridcast/serialize.hpp"

namespace gridcast {

namespace {

constexpr std::uint32_t kEpisodeVersion = 1;
constexpr double kPi = std::numbers::pi;

Point rotate(Point p, double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {c * p.x - s * p.y, s * p.x + c * p.y};
}

/// Distance along the unit ray (o, d) to segment s, or +inf.
double ray_segment(Point o, Point d, const Segment& s) {
  const double ex = s.b.x - s.a.x, ey = s.b.y - s.a.y;
  const double denom = d.x * ey - d.y * ex;
  if (std::abs(denom) < 1e-15) return std::numeric_limits<double>::infinity();
  const double wx = s.a.x - o.x, wy = s.a.y - o.y;
  const double t = (wx * ey - wy * ex) / denom;
  const double u = (wx * d.y - wy * d.x) / denom;
  if (t < 0.0 || u < 0.0 || u > 1.0) return std::numeric_limits<double>::infinity();
  return t;
}

}  // namespace

// --- geometry ----------------------------------------------------------------

std::vector<Segment> Box::edges() const {
  const double hl = 0.5 * length, hw = 0.5 * width;
  const Point local[4] = {{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}};
  Point w[4];
  for (int i = 0; i < 4; ++i) {
    const Point r = rotate(local[i], heading);
    w[i] = {center.x + r.x, center.y + r.y};
  }
  return {{w[0], w[1]}, {w[1], w[2]}, {w[2], w[3]}, {w[3], w[0]}};
}

bool Box::contains(Point p) const {
  const Point l = rotate({p.x - center.x, p.y - center.y}, -heading);
  return std::abs(l.x) <= 0.5 * length && std::abs(l.y) <= 0.5 * width;
}

void WorldState::advance() {
  ego.x += ego_speed * std::cos(ego.theta) * dt;
  ego.y += ego_speed * std::sin(ego.theta) * dt;
  ego.theta += ego_yaw_rate * dt;
  for (Box& b : boxes) {
    b.center.x += b.velocity.x * dt;
    b.center.y += b.velocity.y * dt;
    if (b.yaw_rate != 0.0) {
      b.heading += b.yaw_rate * dt;
      b.velocity = rotate(b.velocity, b.yaw_rate * dt);
    }
  }
  time += dt;
}

Point GridFrame::to_local(Point world) const {
  return rotate({world.x - origin.x, world.y - origin.y}, -origin.theta);
}

GridPoint GridFrame::to_grid(Point world) const {
  const Point l = to_local(world);
  return {0.5 * static_cast<double>(height) - l.x / resolution,
          0.5 * static_cast<double>(width) - l.y / resolution};
}

Point GridFrame::to_world(double row, double col) const {
  const Point l{(0.5 * static_cast<double>(height) - row) * resolution,
                (0.5 * static_cast<double>(width) - col) * resolution};
  const Point r = rotate(l, origin.theta);
  return {origin.x + r.x, origin.y + r.y};
}

double cast_ray(const WorldState& world, Point from, double angle, double range) {
  const Point d{std::cos(angle), std::sin(angle)};
  double best = range;
  for (const Segment& s : world.walls) best = std::min(best, ray_segment(from, d, s));
  for (const Box& b : world.boxes) {
    for (const Segment& s : b.edges()) best = std::min(best, ray_segment(from, d, s));
  }
  return best;
}

std::vector<std::pair<std::size_t, std::size_t>> traverse_cells(GridPoint a, GridPoint b,
                                                                std::size_t height,
                                                                std::size_t width) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  long r = static_cast<long>(std::floor(a.row));
  long c = static_cast<long>(std::floor(a.col));
  const long er = static_cast<long>(std::floor(b.row));
  const long ec = static_cast<long>(std::floor(b.col));
  const double dr = b.row - a.row, dc = b.col - a.col;
  const long sr = dr > 0 ? 1 : -1, sc = dc > 0 ? 1 : -1;
  const double inf = std::numeric_limits<double>::infinity();
  double tmax_r = dr == 0 ? inf : (dr > 0 ? (r + 1 - a.row) : (a.row - r)) / std::abs(dr);
  double tmax_c = dc == 0 ? inf : (dc > 0 ? (c + 1 - a.col) : (a.col - c)) / std::abs(dc);
  const double tdel_r = dr == 0 ? inf : 1.0 / std::abs(dr);
  const double tdel_c = dc == 0 ? inf : 1.0 / std::abs(dc);
  const long n = std::labs(er - r) + std::labs(ec - c);
  auto emit = [&] {
    if (r >= 0 && c >= 0 && r < static_cast<long>(height) && c < static_cast<long>(width)) {
      out.emplace_back(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    }
  };
  emit();
  for (long i = 0; i < n; ++i) {
    if (r != er && (c == ec || tmax_r < tmax_c)) {
      r += sr;
      tmax_r += tdel_r;
    } else {
      c += sc;
      tmax_c += tdel_c;
    }
    emit();
  }
  return out;
}

BeliefGrid raycast_inverse_sensor(const WorldState& world, const SensorConfig& sensor,
                                  const GridFrame& frame, std::uint64_t noise_seed) {
  BeliefGrid meas(frame.height, frame.width, frame.resolution);
  std::vector<std::uint8_t> mark(frame.height * frame.width, 0);  // 1 free, 2 occupied
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> noise(0.0, sensor.noise_sigma > 0 ? sensor.noise_sigma : 1.0);
  const Point o{world.ego.x, world.ego.y};
  const GridPoint go = frame.to_grid(o);
  // Pushes the end point just past the obstacle surface so the hit cell is
  // the one containing the obstacle.
  const double nudge = 1e-6 * frame.resolution;
  for (std::size_t k = 0; k < sensor.rays; ++k) {
    const double angle = world.ego.theta + 2.0 * kPi * static_cast<double>(k) /
                                               static_cast<double>(sensor.rays);
    double dist = cast_ray(world, o, angle, sensor.range);
    const bool hit = dist < sensor.range;
    if (hit && sensor.noise_sigma > 0) dist = std::clamp(dist + noise(rng), 0.0, sensor.range);
    const double reach = hit ? dist + nudge : dist;
    const Point end{o.x + reach * std::cos(angle), o.y + reach * std::sin(angle)};
    const auto cells = traverse_cells(go, frame.to_grid(end), frame.height, frame.width);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::size_t idx = cells[i].first * frame.width + cells[i].second;
      const bool is_hit = hit && i + 1 == cells.size();
      if (is_hit) {
        mark[idx] = 2;
      } else if (mark[idx] == 0) {
        mark[idx] = 1;
      }
    }
  }
  for (std::size_t r = 0; r < frame.height; ++r) {
    for (std::size_t c = 0; c < frame.width; ++c) {
      const std::uint8_t m = mark[r * frame.width + c];
      if (m == 2) meas.set(r, c, {sensor.p_occ, 0.0});
      if (m == 1) meas.set(r, c, {0.0, sensor.p_free});
    }
  }
  return meas;
}

BeliefGrid resample(const BeliefGrid& src, const GridFrame& src_frame, const GridFrame& dst_frame) {
  BeliefGrid out(dst_frame.height, dst_frame.width, dst_frame.resolution);
  for (std::size_t r = 0; r < dst_frame.height; ++r) {
    for (std::size_t c = 0; c < dst_frame.width; ++c) {
      const GridPoint g = src_frame.to_grid(dst_frame.cell_center(r, c));
      const double fr = std::floor(g.row), fc = std::floor(g.col);
      if (fr < 0 || fc < 0 || fr >= static_cast<double>(src.height()) ||
          fc >= static_cast<double>(src.width())) {
        continue;
      }
      out.set(r, c, src.at(static_cast<std::size_t>(fr), static_cast<std::size_t>(fc)));
    }
  }
  return out;
}

// --- episodes ----------------------------------------------------------------

Tensor<float> EpisodeRecord::frame(std::size_t t) const { return window(t, 1).reshaped({2, height, width}); }

Tensor<float> EpisodeRecord::window(std::size_t begin, std::size_t count) const {
  if (begin + count > steps()) {
    throw std::out_of_range("episode window [" + std::to_string(begin) + ", " +
                            std::to_string(begin + count) + ") exceeds " +
                            std::to_string(steps()) + " steps");
  }
  const std::size_t n = 2 * height * width;
  std::vector<float> v(frames.data() + begin * n, frames.data() + (begin + count) * n);
  return Tensor<float>({count, 2, height, width}, std::move(v));
}

BeliefGrid EpisodeRecord::belief(std::size_t t) const {
  return BeliefGrid::from_tensor(frame(t), resolution);
}

std::vector<BoxRecord> EpisodeRecord::boxes_at(std::size_t t) const {
  std::vector<BoxRecord> out;
  for (const BoxRecord& b : boxes) {
    if (b.step == t) out.push_back(b);
  }
  return out;
}

std::vector<bool> EpisodeRecord::box_mask(std::size_t t) const {
  std::vector<bool> mask(height * width, false);
  const GridFrame ego_frame{Pose{}, resolution, height, width};
  for (const BoxRecord& br : boxes_at(t)) {
    Box b;
    b.center = {br.cu, br.cv};
    b.length = br.length + resolution;
    b.width = br.width + resolution;
    b.heading = br.heading;
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        if (b.contains(ego_frame.cell_center(r, c))) mask[r * width + c] = true;
      }
    }
  }
  return mask;
}

void write_episode(std::ostream& os, const EpisodeRecord& ep) {
  const std::size_t T = ep.steps();
  if (ep.frames.shape() != Shape{T, 2, ep.height, ep.width}) {
    throw ShapeError("episode frames " + shape_str(ep.frames.shape()) + " inconsistent with " +
                     std::to_string(T) + " poses");
  }
  write_magic(os, "GCEP");
  write_u32(os, kEpisodeVersion);
  write_u32(os, static_cast<std::uint32_t>(ep.height));
  write_u32(os, static_cast<std::uint32_t>(ep.width));
  write_u32(os, static_cast<std::uint32_t>(T));
  write_f64(os, ep.resolution);
  for (std::size_t i = 0; i < ep.frames.numel(); ++i) write_f32(os, ep.frames[i]);
  for (const Pose& p : ep.ego) {
    write_f64(os, p.x);
    write_f64(os, p.y);
    write_f64(os, p.theta);
  }
  write_u64(os, ep.boxes.size());
  for (const BoxRecord& b : ep.boxes) {
    write_u32(os, b.step);
    write_u32(os, b.id);
    write_f32(os, b.cu);
    write_f32(os, b.cv);
    write_f32(os, b.length);
    write_f32(os, b.width);
    write_f32(os, b.heading);
  }
}

EpisodeRecord read_episode(std::istream& is) {
  expect_magic(is, "GCEP");
  const std::uint32_t version = read_u32(is);
  if (version != kEpisodeVersion) {
    throw std::runtime_error("unsupported episode version " + std::to_string(version));
  }
  EpisodeRecord ep;
  ep.height = read_u32(is);
  ep.width = read_u32(is);
  const std::size_t T = read_u32(is);
  ep.resolution = read_f64(is);
  ep.frames = Tensor<float>({T, 2, ep.height, ep.width});
  for (std::size_t i = 0; i < ep.frames.numel(); ++i) ep.frames[i] = read_f32(is);
  ep.ego.resize(T);
  for (Pose& p : ep.ego) {
    p.x = read_f64(is);
    p.y = read_f64(is);
    p.theta = read_f64(is);
  }
  ep.boxes.resize(read_u64(is));
  for (BoxRecord& b : ep.boxes) {
    b.step = read_u32(is);
    b.id = read_u32(is);
    b.cu = read_f32(is);
    b.cv = read_f32(is);
    b.length = read_f32(is);
    b.width = read_f32(is);
    b.heading = read_f32(is);
  }
  return ep;
}

void save_episode(const std::string& path, const EpisodeRecord& ep) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::ios_base::failure("cannot write episode " + path);
  write_episode(os, ep);
  if (!os) throw std::ios_base::failure("write failed for episode " + path);
}

EpisodeRecord load_episode(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::ios_base::failure("cannot open episode " + path);
  return read_episode(is);
}

// --- scenarios -----------------------------------------------------------------

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::StraightPass: return "straight_pass";
    case Scenario::IntersectionTurn: return "intersection_turn";
    case Scenario::StaticClutter: return "static_clutter";
    case Scenario::Crossing: return "crossing";
  }
  return "?";
}

Scenario scenario_from_string(const std::string& s) {
  for (Scenario sc : all_scenarios()) {
    if (to_string(sc) == s) return sc;
  }
  // Short aliases accepted on the command line.
  if (s == "intersection") return Scenario::IntersectionTurn;
  if (s == "straight") return Scenario::StraightPass;
  if (s == "static") return Scenario::StaticClutter;
  throw std::invalid_argument("unknown scenario \"" + s + "\"");
}

std::vector<Scenario> all_scenarios() {
  return {Scenario::StraightPass, Scenario::IntersectionTurn, Scenario::StaticClutter,
          Scenario::Crossing};
}

WorldState make_world(Scenario scenario, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(scenario));
  auto jitter = [&](double a) { return std::uniform_real_distribution<double>(-a, a)(rng); };
  WorldState w;
  switch (scenario) {
    case Scenario::StraightPass: {
      w.ego_speed = 2.0 + jitter(0.3);
      const double half = 3.5 + jitter(0.3);
      w.walls = {{{-30, half}, {60, half}}, {{-30, -half}, {60, -half}}};
      Box car;
      car.id = 1;
      car.center = {7.0 + jitter(1.0), 1.6};
      car.length = 3.0;
      car.width = 1.5;
      car.heading = kPi;
      car.velocity = {-3.0 + jitter(0.5), 0.0};
      w.boxes = {car};
      break;
    }
    case Scenario::IntersectionTurn: {
      w.ego_speed = 2.0 + jitter(0.2);
      w.ego_yaw_rate = 0.35 + jitter(0.05);
      const double cx = 5.0 + jitter(0.5), gap = 3.5;
      // Four building corners around the junction.
      for (double sx : {-1.0, 1.0}) {
        for (double sy : {-1.0, 1.0}) {
          const Point corner{cx + sx * gap, sy * gap};
          w.walls.push_back({corner, {corner.x + sx * 10.0, corner.y}});
          w.walls.push_back({corner, {corner.x, corner.y + sy * 10.0}});
        }
      }
      Box car;
      car.id = 1;
      car.center = {cx + 1.6, -7.0 + jitter(0.5)};
      car.length = 3.0;
      car.width = 1.5;
      car.heading = kPi / 2;
      car.velocity = {0.0, 3.0 + jitter(0.5)};
      w.boxes = {car};
      break;
    }
    case Scenario::StaticClutter: {
      const double room = 4.8;
      w.walls = {{{-room, -room}, {room, -room}},
                 {{room, -room}, {room, room}},
                 {{room, room}, {-room, room}},
                 {{-room, room}, {-room, -room}}};
      std::uniform_real_distribution<double> pos(-4.0, 4.0), size(0.6, 1.5), ang(0.0, kPi);
      std::uint32_t id = 1;
      while (w.boxes.size() < 6) {
        Box b;
        b.center = {pos(rng), pos(rng)};
        if (std::hypot(b.center.x, b.center.y) < 1.5) continue;
        b.id = id++;
        b.length = size(rng);
        b.width = size(rng);
        b.heading = ang(rng);
        w.boxes.push_back(b);
      }
      break;
    }
    case Scenario::Crossing: {
      const double curb = 6.5 + jitter(0.3);
      w.walls = {{{curb, -20}, {curb, 20}}};
      Box car;
      car.id = 1;
      car.center = {3.5 + jitter(0.5), -6.0 + jitter(0.5)};
      car.length = 3.0;
      car.width = 1.5;
      car.heading = kPi / 2;
      car.velocity = {0.0, 3.0 + jitter(0.5)};
      w.boxes = {car};
      break;
    }
  }
  return w;
}

EpisodeRecord generate_episode(const ScenarioConfig& cfg) {
  if (cfg.height == 0 || cfg.width == 0 || cfg.steps == 0) {
    throw std::invalid_argument("episode needs a non-empty grid and at least one step");
  }
  WorldState world = make_world(cfg.scenario, cfg.seed);
  world.dt = cfg.dt;
  const GridFrame fusion{Pose{world.ego.x, world.ego.y, 0.0}, cfg.resolution, cfg.world_cells,
                         cfg.world_cells};
  BeliefGrid belief(cfg.world_cells, cfg.world_cells, cfg.resolution);

  EpisodeRecord ep;
  ep.height = cfg.height;
  ep.width = cfg.width;
  ep.resolution = cfg.resolution;
  std::vector<float> planes;
  std::size_t resets = 0;
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    const GridFrame ego_frame{world.ego, cfg.resolution, cfg.height, cfg.width};
    bool inside = true;
    for (double r : {0.0, static_cast<double>(cfg.height)}) {
      for (double c : {0.0, static_cast<double>(cfg.width)}) {
        const GridPoint g = fusion.to_grid(ego_frame.to_world(r, c));
        const double n = static_cast<double>(cfg.world_cells);
        if (g.row < 0 || g.col < 0 || g.row >= n || g.col >= n) inside = false;
      }
    }
    if (!inside) {
      ep.warnings.push_back("ego grid left the fusion area; episode truncated at step " +
                            std::to_string(t));
      break;
    }
    const BeliefGrid meas =
        raycast_inverse_sensor(world, cfg.sensor, fusion, cfg.seed * 1000003ULL + t);
    resets += belief.fuse(meas, cfg.alpha);
    const Tensor<float> f = resample(belief, fusion, ego_frame).to_tensor<float>();
    planes.insert(planes.end(), f.data(), f.data() + f.numel());
    ep.ego.push_back(world.ego);
    for (const Box& b : world.boxes) {
      const Point l = ego_frame.to_local(b.center);
      ep.boxes.push_back({static_cast<std::uint32_t>(t), b.id, static_cast<float>(l.x),
                          static_cast<float>(l.y), static_cast<float>(b.length),
                          static_cast<float>(b.width),
                          static_cast<float>(b.heading - world.ego.theta)});
    }
    world.advance();
  }
  if (resets > 0) {
    ep.warnings.push_back(std::to_string(resets) + " cells reset after total conflict");
  }
  ep.frames = Tensor<float>({ep.ego.size(), 2, cfg.height, cfg.width}, std::move(planes));
  return ep;
}

}  // namespace gridcast

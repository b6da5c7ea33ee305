// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gridcast/dst.hpp"

namespace gridcast {

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;  // heading, radians counter-clockwise from +x
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Continuous grid coordinates; cell (r,c) covers [r,r+1)×[c,c+1).
struct GridPoint {
  double row = 0.0;
  double col = 0.0;
};

struct Segment {
  Point a, b;
};

/// Oriented rectangle with constant planar velocity.
struct Box {
  std::uint32_t id = 0;
  Point center;
  double length = 0.0;  // along heading
  double width = 0.0;
  double heading = 0.0;
  Point velocity;
  double yaw_rate = 0.0;

  std::vector<Segment> edges() const;
  bool contains(Point p) const;
};

struct WorldState {
  Pose ego;
  double ego_speed = 0.0;
  double ego_yaw_rate = 0.0;
  std::vector<Segment> walls;
  std::vector<Box> boxes;
  double time = 0.0;
  double dt = 0.1;

  /// Constant-velocity / constant-turn-rate update of ego and boxes.
  void advance();
};

/// Placement of an H×W lattice in the world. Local axes: u along `origin`
/// heading (toward row 0), v to its left (toward column 0). The origin lies
/// on the corner shared by cells (H/2-1, W/2-1) and (H/2, W/2).
struct GridFrame {
  Pose origin;
  double resolution = 1.0 / 3.0;
  std::size_t height = 32;
  std::size_t width = 32;

  GridPoint to_grid(Point world) const;
  Point to_world(double row, double col) const;
  Point cell_center(std::size_t r, std::size_t c) const { return to_world(r + 0.5, c + 0.5); }
  /// World point -> ego-local (u, v).
  Point to_local(Point world) const;
};

struct SensorConfig {
  std::size_t rays = 720;
  double range = 8.0;        // meters
  double noise_sigma = 0.0;  // range noise, meters
  double p_occ = 0.7;
  double p_free = 0.6;
};

/// First intersection of the ray from `from` at angle `angle` with walls and
/// boxes, or `range` if none.
double cast_ray(const WorldState& world, Point from, double angle, double range);

/// Grid cells visited by the segment from `a` to `b`, in traversal order.
/// Cells outside the grid are omitted.
std::vector<std::pair<std::size_t, std::size_t>> traverse_cells(GridPoint a, GridPoint b,
                                                                std::size_t height,
                                                                std::size_t width);

/// One LiDAR sweep as measurement masses on `frame`. For each ray: cells
/// before the hit cell get m(F) = p_free, the hit cell m(O) = p_occ, cells
/// beyond stay vacuous. A cell marked occupied by any ray stays occupied.
BeliefGrid raycast_inverse_sensor(const WorldState& world, const SensorConfig& sensor,
                                  const GridFrame& frame, std::uint64_t noise_seed = 0);

/// Nearest-neighbor resampling of `src` (placed at `src_frame`) onto
/// `dst_frame`; cells falling outside `src` are vacuous.
BeliefGrid resample(const BeliefGrid& src, const GridFrame& src_frame, const GridFrame& dst_frame);

/// Ground-truth box in the ego frame of its step: center (u, v) in meters,
/// heading relative to the ego heading.
struct BoxRecord {
  std::uint32_t step = 0;
  std::uint32_t id = 0;
  float cu = 0.0f;
  float cv = 0.0f;
  float length = 0.0f;
  float width = 0.0f;
  float heading = 0.0f;
};

struct EpisodeRecord {
  std::size_t height = 0;
  std::size_t width = 0;
  double resolution = 0.0;
  Tensor<float> frames;  // [T,2,H,W]
  std::vector<Pose> ego;
  std::vector<BoxRecord> boxes;
  std::vector<std::string> warnings;

  std::size_t steps() const { return ego.size(); }
  Tensor<float> frame(std::size_t t) const;
  /// frames[begin, begin + count)
  Tensor<float> window(std::size_t begin, std::size_t count) const;
  BeliefGrid belief(std::size_t t) const;
  std::vector<BoxRecord> boxes_at(std::size_t t) const;
  /// Cells touching any box of step t: the cell center lies inside the box
  /// grown by half a cell on every side.
  std::vector<bool> box_mask(std::size_t t) const;
};

/// Episode file:
///   "GCEP" | u32 version | u32 H | u32 W | u32 T | f64 resolution
///   | T × (H·W f32 m(O), H·W f32 m(F))
///   | T × (f64 x, f64 y, f64 theta)
///   | u64 box count | count × (u32 step, u32 id, f32 cu, cv, length, width, heading)
void write_episode(std::ostream& os, const EpisodeRecord& ep);
EpisodeRecord read_episode(std::istream& is);
void save_episode(const std::string& path, const EpisodeRecord& ep);
EpisodeRecord load_episode(const std::string& path);

enum class Scenario { StraightPass, IntersectionTurn, StaticClutter, Crossing };
std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);
std::vector<Scenario> all_scenarios();

struct ScenarioConfig {
  Scenario scenario = Scenario::StraightPass;
  std::size_t height = 32;
  std::size_t width = 32;
  double resolution = 1.0 / 3.0;
  std::size_t steps = 30;  // T
  double dt = 0.1;
  double alpha = 0.98;
  SensorConfig sensor;
  std::size_t world_cells = 256;  // side of the world-frame fusion grid
  std::uint64_t seed = 0;
};

/// Initial world for a scenario; `seed` jitters positions and speeds.
WorldState make_world(Scenario scenario, std::uint64_t seed);

/// Simulates at 1/dt Hz. Each step ages and fuses a sweep into a world-frame
/// belief grid, then resamples it into the ego frame. Stops early (with a
/// warning) when the ego grid leaves the fusion grid.
EpisodeRecord generate_episode(const ScenarioConfig& cfg);

}  // namespace gridcast

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mwf/rng.hpp"

namespace mwf {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  double norm() const { return std::hypot(x, y); }
};

enum class Frame { raw, ego_normalized };

// One agent's full track over the history + future horizons.
struct AgentTrack {
  std::vector<Vec2> positions;   // length T_h + T_f
  std::vector<double> headings;  // radians in (-pi, pi], same length
  bool is_target = false;
};

// Lane centerline polyline.
struct LaneSegment {
  std::vector<Vec2> waypoints;
};

// Pose the normalization is taken relative to.
struct EgoFrame {
  Vec2 origin;
  double heading = 0.0;
};

struct Scene {
  std::vector<AgentTrack> agents;
  std::vector<LaneSegment> lanes;
  int ego_index = 0;
  int horizon_history = 0;  // T_h steps at 10 Hz
  int horizon_future = 0;   // T_f steps
  Frame frame = Frame::raw;

  int num_agents() const { return static_cast<int>(agents.size()); }
  int num_lanes() const { return static_cast<int>(lanes.size()); }
  int total_steps() const { return horizon_history + horizon_future; }
};

// Maps any finite angle into (-pi, pi]; idempotent and 2pi-periodic.
double wrap_angle(double a);

// Pose of the ego agent at the last observed step (index T_h - 1).
EgoFrame ego_frame_of(const Scene& scene);

// Rigid transform into the ego frame: p' = (p - o) * I(theta) in row-vector
// convention, headings wrapped to (psi - theta). Rejects scenes that are
// already normalized.
Scene normalize_scene(const Scene& scene);

// Inverse of normalize_scene given the frame it was taken against.
Scene denormalize_scene(const Scene& scene, const EgoFrame& frame);

// Throws std::invalid_argument naming the violated field when the scene
// breaks a structural invariant (track lengths, index bounds, heading range,
// speed cap, degenerate lanes).
void validate_scene(const Scene& scene, double speed_cap = 60.0);

struct SceneGenConfig {
  int n_agents_min = 2;
  int n_agents_max = 8;
  int n_lanes_min = 4;
  int n_lanes_max = 16;
  int t_history = 50;
  int t_future = 60;
  int lane_waypoints = 20;       // W points per lane segment
  double waypoint_spacing = 3.0; // meters between consecutive waypoints
  double speed_min = 2.0;
  double speed_max = 12.0;
  double noise_scale = 0.15;     // lateral jitter amplitude, meters
  double speed_cap = 60.0;
};

// Synthetic scenario: a small road graph (straights, arcs, a crossing) with
// agents following lane centerlines under a smooth speed profile and bounded
// lateral noise. Deterministic given rng. Throws on infeasible configs.
Scene generate_synthetic_scene(RngState rng, const SceneGenConfig& config = {});

// Single-scene JSON files and multi-scene JSONL files. Schema violations are
// reported with the offending field path. Round trips are exact.
void save_scene(const std::string& path, const Scene& scene);
Scene load_scene(const std::string& path);
void save_scenes(const std::string& path, const std::vector<Scene>& scenes);
std::vector<Scene> load_scenes(const std::string& path);

// In-memory JSON string forms used by both the file io and the tests.
std::string scene_to_json(const Scene& scene);
Scene scene_from_json(const std::string& text);

}  // namespace mwf

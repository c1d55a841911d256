#include "mwf/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mwf {

using nlohmann::json;

double wrap_angle(double a) {
  double x = std::fmod(a + M_PI, 2.0 * M_PI);
  if (x <= 0.0) x += 2.0 * M_PI;
  return x - M_PI;
}

EgoFrame ego_frame_of(const Scene& scene) {
  const AgentTrack& ego = scene.agents.at(static_cast<size_t>(scene.ego_index));
  size_t ref = static_cast<size_t>(scene.horizon_history - 1);
  return EgoFrame{ego.positions.at(ref), ego.headings.at(ref)};
}

namespace {

// Row-vector convention: p' = (p - o) * I(theta).
Vec2 to_frame(Vec2 p, const EgoFrame& f, double c, double s) {
  Vec2 d = p - f.origin;
  return {d.x * c + d.y * s, -d.x * s + d.y * c};
}

Vec2 from_frame(Vec2 p, const EgoFrame& f, double c, double s) {
  return {p.x * c - p.y * s + f.origin.x, p.x * s + p.y * c + f.origin.y};
}

}  // namespace

Scene normalize_scene(const Scene& scene) {
  if (scene.frame != Frame::raw)
    throw std::invalid_argument("normalize_scene: scene is already ego-normalized");
  EgoFrame f = ego_frame_of(scene);
  double c = std::cos(f.heading), s = std::sin(f.heading);
  Scene out = scene;
  for (AgentTrack& a : out.agents) {
    for (Vec2& p : a.positions) p = to_frame(p, f, c, s);
    for (double& h : a.headings) h = wrap_angle(h - f.heading);
  }
  for (LaneSegment& l : out.lanes)
    for (Vec2& w : l.waypoints) w = to_frame(w, f, c, s);
  out.frame = Frame::ego_normalized;
  return out;
}

Scene denormalize_scene(const Scene& scene, const EgoFrame& f) {
  if (scene.frame != Frame::ego_normalized)
    throw std::invalid_argument("denormalize_scene: scene is not ego-normalized");
  double c = std::cos(f.heading), s = std::sin(f.heading);
  Scene out = scene;
  for (AgentTrack& a : out.agents) {
    for (Vec2& p : a.positions) p = from_frame(p, f, c, s);
    for (double& h : a.headings) h = wrap_angle(h + f.heading);
  }
  for (LaneSegment& l : out.lanes)
    for (Vec2& w : l.waypoints) w = from_frame(w, f, c, s);
  out.frame = Frame::raw;
  return out;
}

void validate_scene(const Scene& scene, double speed_cap) {
  if (scene.agents.empty()) throw std::invalid_argument("scene.agents: empty");
  if (scene.lanes.empty()) throw std::invalid_argument("scene.lanes: empty");
  if (scene.horizon_history < 1)
    throw std::invalid_argument("scene.horizon_history: must be >= 1");
  if (scene.horizon_future < 0)
    throw std::invalid_argument("scene.horizon_future: must be >= 0");
  if (scene.ego_index < 0 || scene.ego_index >= scene.num_agents())
    throw std::invalid_argument("scene.ego_index: " + std::to_string(scene.ego_index) +
                                " out of range [0," +
                                std::to_string(scene.num_agents()) + ")");
  int total = scene.total_steps();
  for (int n = 0; n < scene.num_agents(); ++n) {
    const AgentTrack& a = scene.agents[static_cast<size_t>(n)];
    std::string base = "scene.agents[" + std::to_string(n) + "]";
    if (static_cast<int>(a.positions.size()) != total)
      throw std::invalid_argument(base + ".positions: " +
                                  std::to_string(a.positions.size()) +
                                  " entries, expected horizon_history+horizon_future=" +
                                  std::to_string(total));
    if (static_cast<int>(a.headings.size()) != total)
      throw std::invalid_argument(base + ".headings: " +
                                  std::to_string(a.headings.size()) +
                                  " entries, expected " + std::to_string(total));
    for (size_t t = 0; t < a.headings.size(); ++t) {
      double h = a.headings[t];
      if (!(h > -M_PI - 1e-12 && h <= M_PI + 1e-12) || !std::isfinite(h))
        throw std::invalid_argument(base + ".headings[" + std::to_string(t) +
                                    "]: " + std::to_string(h) +
                                    " outside (-pi, pi]");
    }
    for (size_t t = 1; t < a.positions.size(); ++t) {
      double v = (a.positions[t] - a.positions[t - 1]).norm() * 10.0;
      if (v >= speed_cap)
        throw std::invalid_argument(base + ": speed " + std::to_string(v) +
                                    " m/s at step " + std::to_string(t) +
                                    " exceeds cap " + std::to_string(speed_cap));
    }
  }
  for (int z = 0; z < scene.num_lanes(); ++z) {
    const LaneSegment& l = scene.lanes[static_cast<size_t>(z)];
    std::string base = "scene.lanes[" + std::to_string(z) + "].waypoints";
    if (l.waypoints.size() < 2)
      throw std::invalid_argument(base + ": need at least 2 points");
    for (size_t w = 1; w < l.waypoints.size(); ++w)
      if ((l.waypoints[w] - l.waypoints[w - 1]).norm() == 0.0)
        throw std::invalid_argument(base + "[" + std::to_string(w) +
                                    "]: duplicate of previous point");
  }
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

namespace {

struct Route {
  std::vector<Vec2> pts;
  std::vector<double> cum;  // cumulative arclength, cum[0] = 0

  double length() const { return cum.back(); }

  Vec2 at(double s) const {
    s = std::clamp(s, 0.0, length());
    auto it = std::upper_bound(cum.begin(), cum.end(), s);
    size_t hi = std::min(static_cast<size_t>(it - cum.begin()), pts.size() - 1);
    if (hi == 0) return pts[0];
    size_t lo = hi - 1;
    double seg = cum[hi] - cum[lo];
    double f = seg > 0 ? (s - cum[lo]) / seg : 0.0;
    return pts[lo] + f * (pts[hi] - pts[lo]);
  }

  Vec2 tangent_at(double s) const {
    Vec2 a = at(std::max(0.0, s - 0.5));
    Vec2 b = at(std::min(length(), s + 0.5));
    Vec2 d = b - a;
    double n = d.norm();
    return n > 0 ? (1.0 / n) * d : Vec2{1, 0};
  }

  void finalize() {
    cum.resize(pts.size());
    cum[0] = 0.0;
    for (size_t i = 1; i < pts.size(); ++i)
      cum[i] = cum[i - 1] + (pts[i] - pts[i - 1]).norm();
  }
};

Route make_straight(Vec2 p0, double phi, int npts, double ds) {
  Route r;
  r.pts.reserve(static_cast<size_t>(npts));
  Vec2 dir{std::cos(phi), std::sin(phi)};
  for (int i = 0; i < npts; ++i) r.pts.push_back(p0 + (i * ds) * dir);
  r.finalize();
  return r;
}

Route make_arc(Vec2 center, double radius, double a0, double turn_sign, int npts,
               double ds) {
  Route r;
  r.pts.reserve(static_cast<size_t>(npts));
  double da = turn_sign * ds / radius;
  for (int i = 0; i < npts; ++i) {
    double a = a0 + i * da;
    r.pts.push_back(center + Vec2{radius * std::cos(a), radius * std::sin(a)});
  }
  r.finalize();
  return r;
}

void check_config(const SceneGenConfig& c) {
  auto fail = [](const std::string& m) {
    throw std::invalid_argument("scene-gen config: " + m);
  };
  if (c.n_agents_min < 2 || c.n_agents_max < c.n_agents_min)
    fail("agent count range must satisfy 2 <= min <= max");
  if (c.n_lanes_min < 1 || c.n_lanes_max < c.n_lanes_min)
    fail("lane count range must satisfy 1 <= min <= max");
  if (c.t_history < 2 || c.t_future < 1) fail("horizons too short");
  if (c.lane_waypoints < 2) fail("lane_waypoints must be >= 2");
  if (c.waypoint_spacing <= 0) fail("waypoint_spacing must be positive");
  if (c.speed_min <= 0 || c.speed_max < c.speed_min) fail("bad speed range");
  if (c.speed_max >= 0.5 * c.speed_cap) fail("speed_max too close to the cap");
  if (c.noise_scale < 0) fail("noise_scale must be nonnegative");
}

}  // namespace

Scene generate_synthetic_scene(RngState rng, const SceneGenConfig& cfg) {
  check_config(cfg);
  int N = cfg.n_agents_min + rng.uniform_int(cfg.n_agents_max - cfg.n_agents_min + 1);
  int Z = cfg.n_lanes_min + rng.uniform_int(cfg.n_lanes_max - cfg.n_lanes_min + 1);
  int W = cfg.lane_waypoints;
  const int segs_per_route = 4;
  int n_routes = (Z + segs_per_route - 1) / segs_per_route;
  int route_pts = segs_per_route * (W - 1) + 1;
  double ds = cfg.waypoint_spacing;

  // layout 0: straights, 1: arcs, 2: two perpendicular arms through a shared
  // point plus random filler
  int layout = rng.uniform_int(3);
  Vec2 cross_pt{rng.uniform(-30.0, 30.0), rng.uniform(-30.0, 30.0)};
  double cross_phi = rng.uniform(0.0, 2.0 * M_PI);
  std::vector<Route> routes;
  routes.reserve(static_cast<size_t>(n_routes));
  for (int r = 0; r < n_routes; ++r) {
    Vec2 off{rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0)};
    if (layout == 2 && r < 2) {
      double phi = r == 0 ? cross_phi : cross_phi + M_PI / 2.0;
      Vec2 start =
          cross_pt - (0.5 * (route_pts - 1) * ds) * Vec2{std::cos(phi), std::sin(phi)};
      routes.push_back(make_straight(start, phi, route_pts, ds));
    } else if (layout == 1) {
      double radius = rng.uniform(40.0, 150.0);
      routes.push_back(make_arc(off, radius, rng.uniform(0.0, 2.0 * M_PI),
                                rng.uniform_int(2) == 0 ? 1.0 : -1.0, route_pts, ds));
    } else {
      routes.push_back(make_straight(off, rng.uniform(0.0, 2.0 * M_PI), route_pts, ds));
    }
  }

  Scene scene;
  scene.horizon_history = cfg.t_history;
  scene.horizon_future = cfg.t_future;
  scene.ego_index = 0;
  scene.frame = Frame::raw;

  for (int z = 0; z < Z; ++z) {
    int r = z % n_routes;
    int seg = (z / n_routes) % segs_per_route;
    LaneSegment lane;
    lane.waypoints.assign(routes[static_cast<size_t>(r)].pts.begin() + seg * (W - 1),
                          routes[static_cast<size_t>(r)].pts.begin() + seg * (W - 1) + W);
    scene.lanes.push_back(std::move(lane));
  }

  // arclength of route r actually emitted as lanes (a contiguous prefix)
  std::vector<double> covered(static_cast<size_t>(n_routes), 0.0);
  for (int r = 0; r < n_routes; ++r) {
    int segs = Z > r ? (Z - 1 - r) / n_routes + 1 : 0;
    covered[static_cast<size_t>(r)] =
        routes[static_cast<size_t>(r)].cum[static_cast<size_t>(segs * (W - 1))];
  }

  int total = cfg.t_history + cfg.t_future;
  const double dt = 0.1;
  double horizon_s = total * dt;
  for (int n = 0; n < N; ++n) {
    int ri = rng.uniform_int(n_routes);
    const Route& route = routes[static_cast<size_t>(ri)];
    double cov = covered[static_cast<size_t>(ri)];
    double s0 = rng.uniform(0.0, 0.25 * cov);
    // pick speeds that mostly keep the run inside the lane-covered prefix
    double v_fit = std::max(cfg.speed_min, (cov - s0) / horizon_s);
    double v0 = rng.uniform(cfg.speed_min, std::min(cfg.speed_max, v_fit));
    double accel = rng.uniform(-0.3, 0.3);
    double lat = 0.0;
    double s = s0;

    AgentTrack track;
    track.positions.reserve(static_cast<size_t>(total));
    for (int t = 0; t < total; ++t) {
      Vec2 tan = route.tangent_at(s);
      Vec2 normal{-tan.y, tan.x};
      track.positions.push_back(route.at(s) + lat * normal);
      double v = std::clamp(v0 + accel * t * dt, 0.5, cfg.speed_max);
      s = std::min(s + v * dt, cov);
      lat = 0.95 * lat + 0.3 * cfg.noise_scale * rng.normal();
    }
    track.headings.resize(static_cast<size_t>(total));
    double prev = std::atan2(route.tangent_at(s0).y, route.tangent_at(s0).x);
    for (int t = 0; t < total; ++t) {
      if (t + 1 < total) {
        Vec2 d = track.positions[static_cast<size_t>(t + 1)] -
                 track.positions[static_cast<size_t>(t)];
        if (d.norm() > 1e-9) prev = std::atan2(d.y, d.x);
      }
      track.headings[static_cast<size_t>(t)] = wrap_angle(prev);
    }
    track.is_target = n < 2 || rng.uniform() < 0.5;
    scene.agents.push_back(std::move(track));
  }

  validate_scene(scene, cfg.speed_cap);
  return scene;
}

// ---------------------------------------------------------------------------
// JSON io
// ---------------------------------------------------------------------------

namespace {

json vec2_list_to_json(const std::vector<Vec2>& v) {
  json arr = json::array();
  for (const Vec2& p : v) arr.push_back(json::array({p.x, p.y}));
  return arr;
}

const json& need(const json& j, const std::string& path, const char* field) {
  if (!j.is_object())
    throw std::runtime_error("scene schema: " + path + ": expected an object");
  auto it = j.find(field);
  if (it == j.end())
    throw std::runtime_error("scene schema: missing field '" +
                             (path.empty() ? std::string(field) : path + "." + field) +
                             "'");
  return *it;
}

double need_number(const json& j, const std::string& path) {
  if (!j.is_number())
    throw std::runtime_error("scene schema: " + path + ": expected a number");
  return j.get<double>();
}

std::vector<Vec2> parse_points(const json& j, const std::string& path) {
  if (!j.is_array())
    throw std::runtime_error("scene schema: " + path + ": expected an array");
  std::vector<Vec2> out;
  out.reserve(j.size());
  for (size_t i = 0; i < j.size(); ++i) {
    const json& p = j[i];
    std::string ppath = path + "[" + std::to_string(i) + "]";
    if (!p.is_array() || p.size() != 2)
      throw std::runtime_error("scene schema: " + ppath + ": expected [x,y]");
    out.push_back({need_number(p[0], ppath + "[0]"), need_number(p[1], ppath + "[1]")});
  }
  return out;
}

}  // namespace

std::string scene_to_json(const Scene& scene) {
  json j;
  j["version"] = 1;
  j["frame"] = scene.frame == Frame::raw ? "raw" : "ego_normalized";
  j["ego_index"] = scene.ego_index;
  j["horizon_history"] = scene.horizon_history;
  j["horizon_future"] = scene.horizon_future;
  json agents = json::array();
  for (const AgentTrack& a : scene.agents) {
    json ja;
    ja["positions"] = vec2_list_to_json(a.positions);
    ja["headings"] = a.headings;
    ja["is_target"] = a.is_target;
    agents.push_back(std::move(ja));
  }
  j["agents"] = std::move(agents);
  json lanes = json::array();
  for (const LaneSegment& l : scene.lanes) {
    json jl;
    jl["waypoints"] = vec2_list_to_json(l.waypoints);
    lanes.push_back(std::move(jl));
  }
  j["lanes"] = std::move(lanes);
  return j.dump();
}

Scene scene_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw std::runtime_error("scene schema: input is not valid JSON");
  Scene scene;
  int version = static_cast<int>(need_number(need(j, "", "version"), "version"));
  if (version != 1)
    throw std::runtime_error("scene schema: version: unsupported value " +
                             std::to_string(version));
  const json& jframe = need(j, "", "frame");
  if (!jframe.is_string())
    throw std::runtime_error("scene schema: frame: expected a string");
  std::string frame = jframe.get<std::string>();
  if (frame == "raw")
    scene.frame = Frame::raw;
  else if (frame == "ego_normalized")
    scene.frame = Frame::ego_normalized;
  else
    throw std::runtime_error("scene schema: frame: unknown value '" + frame + "'");
  scene.ego_index = static_cast<int>(need_number(need(j, "", "ego_index"), "ego_index"));
  scene.horizon_history =
      static_cast<int>(need_number(need(j, "", "horizon_history"), "horizon_history"));
  scene.horizon_future =
      static_cast<int>(need_number(need(j, "", "horizon_future"), "horizon_future"));

  const json& jagents = need(j, "", "agents");
  if (!jagents.is_array())
    throw std::runtime_error("scene schema: agents: expected an array");
  for (size_t i = 0; i < jagents.size(); ++i) {
    std::string path = "agents[" + std::to_string(i) + "]";
    const json& ja = jagents[i];
    AgentTrack a;
    a.positions = parse_points(need(ja, path, "positions"), path + ".positions");
    const json& jh = need(ja, path, "headings");
    if (!jh.is_array())
      throw std::runtime_error("scene schema: " + path + ".headings: expected an array");
    for (size_t t = 0; t < jh.size(); ++t)
      a.headings.push_back(
          need_number(jh[t], path + ".headings[" + std::to_string(t) + "]"));
    const json& jt = need(ja, path, "is_target");
    if (!jt.is_boolean())
      throw std::runtime_error("scene schema: " + path + ".is_target: expected a bool");
    a.is_target = jt.get<bool>();
    scene.agents.push_back(std::move(a));
  }

  const json& jlanes = need(j, "", "lanes");
  if (!jlanes.is_array())
    throw std::runtime_error("scene schema: lanes: expected an array");
  for (size_t i = 0; i < jlanes.size(); ++i) {
    std::string path = "lanes[" + std::to_string(i) + "]";
    LaneSegment l;
    l.waypoints = parse_points(need(jlanes[i], path, "waypoints"), path + ".waypoints");
    scene.lanes.push_back(std::move(l));
  }

  validate_scene(scene);
  return scene;
}

void save_scene(const std::string& path, const Scene& scene) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_scene: cannot open " + path);
  f << scene_to_json(scene) << "\n";
}

Scene load_scene(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_scene: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return scene_from_json(ss.str());
}

void save_scenes(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_scenes: cannot open " + path);
  for (const Scene& s : scenes) f << scene_to_json(s) << "\n";
}

std::vector<Scene> load_scenes(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_scenes: cannot open " + path);
  std::vector<Scene> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(scene_from_json(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mwf

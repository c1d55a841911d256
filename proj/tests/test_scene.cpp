#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "mwf/rng.hpp"
#include "mwf/scene.hpp"

using namespace mwf;

namespace {

// Minimal well-formed raw scene: two agents moving along +x, one lane.
Scene tiny_scene(int t_h = 3, int t_f = 2) {
  Scene s;
  s.horizon_history = t_h;
  s.horizon_future = t_f;
  s.ego_index = 0;
  int total = t_h + t_f;
  for (int n = 0; n < 2; ++n) {
    AgentTrack a;
    for (int t = 0; t < total; ++t) {
      a.positions.push_back({1.0 * t + 5.0 * n, 2.0 * n});
      a.headings.push_back(0.0);
    }
    a.is_target = true;
    s.agents.push_back(a);
  }
  LaneSegment l;
  for (int w = 0; w < 4; ++w) l.waypoints.push_back({3.0 * w, -1.0});
  s.lanes.push_back(l);
  return s;
}

double point_to_segment(Vec2 p, Vec2 a, Vec2 b) {
  Vec2 ab = b - a;
  double len2 = ab.x * ab.x + ab.y * ab.y;
  double t = len2 > 0 ? ((p.x - a.x) * ab.x + (p.y - a.y) * ab.y) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

double min_dist_to_lanes(const Scene& s, Vec2 p) {
  double best = 1e300;
  for (const LaneSegment& l : s.lanes)
    for (size_t w = 1; w < l.waypoints.size(); ++w)
      best = std::min(best, point_to_segment(p, l.waypoints[w - 1], l.waypoints[w]));
  return best;
}

}  // namespace

TEST_CASE("wrap_angle hits the documented boundary values") {
  CHECK(wrap_angle(0.0) == 0.0);
  CHECK(wrap_angle(M_PI) == doctest::Approx(M_PI).epsilon(1e-12));
  CHECK(wrap_angle(-M_PI) == doctest::Approx(M_PI).epsilon(1e-12));
  CHECK(wrap_angle(3.0 * M_PI / 2.0) == doctest::Approx(-M_PI / 2.0).epsilon(1e-12));
  CHECK(wrap_angle(2.0 * M_PI) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(wrap_angle(-5.0 * M_PI) == doctest::Approx(M_PI).epsilon(1e-12));
}

TEST_CASE("wrap_angle is 2pi-periodic, idempotent, and lands in (-pi, pi]") {
  RngState rng(77);
  for (int i = 0; i < 10000; ++i) {
    double a = rng.uniform(-40.0, 40.0);
    double w = wrap_angle(a);
    CHECK(w > -M_PI);
    CHECK(w <= M_PI);
    CHECK(wrap_angle(w) == doctest::Approx(w).epsilon(1e-12));
    CHECK(wrap_angle(a + 2.0 * M_PI) == doctest::Approx(w).epsilon(1e-9));
    CHECK(std::abs(std::sin(w - a)) < 1e-9);
  }
}

TEST_CASE("normalization rotates by the inverse ego pose") {
  // ego sits at the origin heading pi/2; the point (1, 0) must land at (0, -1)
  Scene s = tiny_scene();
  for (auto& a : s.agents)
    for (auto& h : a.headings) h = M_PI / 2.0;
  for (auto& p : s.agents[0].positions) p = {0.0, 0.0};
  s.agents[1].positions.assign(5, Vec2{1.0, 0.0});
  Scene n = normalize_scene(s);
  CHECK(n.agents[1].positions[2].x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(n.agents[1].positions[2].y == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(n.agents[0].headings[2] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("normalization preserves pairwise distances and headings relative") {
  RngState rng(11);
  Scene s = generate_synthetic_scene(rng);
  Scene n = normalize_scene(s);
  REQUIRE(n.frame == Frame::ego_normalized);

  std::vector<Vec2> before, after;
  for (const auto& a : s.agents)
    for (const auto& p : a.positions) before.push_back(p);
  for (const auto& l : s.lanes)
    for (const auto& p : l.waypoints) before.push_back(p);
  for (const auto& a : n.agents)
    for (const auto& p : a.positions) after.push_back(p);
  for (const auto& l : n.lanes)
    for (const auto& p : l.waypoints) after.push_back(p);
  REQUIRE(before.size() == after.size());
  for (size_t i = 0; i + 37 < before.size(); i += 13) {
    double d0 = (before[i] - before[i + 37]).norm();
    double d1 = (after[i] - after[i + 37]).norm();
    CHECK(std::abs(d0 - d1) <= 1e-9);
  }
}

TEST_CASE("the ego ends at the origin with heading zero") {
  RngState rng(23);
  Scene s = generate_synthetic_scene(rng);
  Scene n = normalize_scene(s);
  int ref = n.horizon_history - 1;
  const AgentTrack& ego = n.agents[static_cast<size_t>(n.ego_index)];
  CHECK(std::abs(ego.positions[static_cast<size_t>(ref)].x) <= 1e-9);
  CHECK(std::abs(ego.positions[static_cast<size_t>(ref)].y) <= 1e-9);
  CHECK(std::abs(ego.headings[static_cast<size_t>(ref)]) <= 1e-9);
}

TEST_CASE("denormalize inverts normalize") {
  RngState rng(31);
  Scene s = generate_synthetic_scene(rng);
  EgoFrame f = ego_frame_of(s);
  Scene back = denormalize_scene(normalize_scene(s), f);
  REQUIRE(back.frame == Frame::raw);
  for (size_t n = 0; n < s.agents.size(); ++n) {
    for (size_t t = 0; t < s.agents[n].positions.size(); ++t) {
      CHECK(std::abs(back.agents[n].positions[t].x - s.agents[n].positions[t].x) <= 1e-9);
      CHECK(std::abs(back.agents[n].positions[t].y - s.agents[n].positions[t].y) <= 1e-9);
      CHECK(std::abs(wrap_angle(back.agents[n].headings[t] - s.agents[n].headings[t])) <=
            1e-9);
    }
  }
  for (size_t z = 0; z < s.lanes.size(); ++z)
    for (size_t w = 0; w < s.lanes[z].waypoints.size(); ++w)
      CHECK((back.lanes[z].waypoints[w] - s.lanes[z].waypoints[w]).norm() <= 1e-9);
}

TEST_CASE("frame bookkeeping rejects double application") {
  Scene s = tiny_scene();
  Scene n = normalize_scene(s);
  CHECK_THROWS_WITH_AS(normalize_scene(n), doctest::Contains("already"),
                       std::invalid_argument);
  CHECK_THROWS_WITH_AS(denormalize_scene(s, EgoFrame{}),
                       doctest::Contains("not ego-normalized"), std::invalid_argument);
}

TEST_CASE("validation names the offending field") {
  Scene s = tiny_scene();
  SUBCASE("truncated track") {
    s.agents[1].positions.pop_back();
    CHECK_THROWS_WITH_AS(validate_scene(s), doctest::Contains("agents[1].positions"),
                         std::invalid_argument);
  }
  SUBCASE("ego index out of range") {
    s.ego_index = 9;
    CHECK_THROWS_WITH_AS(validate_scene(s), doctest::Contains("ego_index"),
                         std::invalid_argument);
  }
  SUBCASE("heading outside the principal range") {
    s.agents[0].headings[1] = 4.0;
    CHECK_THROWS_WITH_AS(validate_scene(s), doctest::Contains("headings[1]"),
                         std::invalid_argument);
  }
  SUBCASE("speed cap") {
    s.agents[0].positions[2] = {500.0, 0.0};
    CHECK_THROWS_WITH_AS(validate_scene(s), doctest::Contains("speed"),
                         std::invalid_argument);
  }
  SUBCASE("degenerate lane") {
    s.lanes[0].waypoints[2] = s.lanes[0].waypoints[1];
    CHECK_THROWS_WITH_AS(validate_scene(s), doctest::Contains("lanes[0]"),
                         std::invalid_argument);
  }
}

TEST_CASE("generation is deterministic in the seed") {
  Scene a = generate_synthetic_scene(RngState(404));
  Scene b = generate_synthetic_scene(RngState(404));
  Scene c = generate_synthetic_scene(RngState(405));
  CHECK(scene_to_json(a) == scene_to_json(b));
  CHECK(scene_to_json(a) != scene_to_json(c));
}

TEST_CASE("generated scenes satisfy the structural contract") {
  SceneGenConfig cfg;
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Scene s = generate_synthetic_scene(RngState(seed), cfg);
    CAPTURE(seed);
    CHECK_NOTHROW(validate_scene(s, cfg.speed_cap));
    CHECK(s.total_steps() == 110);
    CHECK(s.num_agents() >= cfg.n_agents_min);
    CHECK(s.num_agents() <= cfg.n_agents_max);
    CHECK(s.num_lanes() >= cfg.n_lanes_min);
    CHECK(s.num_lanes() <= cfg.n_lanes_max);
    for (const LaneSegment& l : s.lanes)
      CHECK(static_cast<int>(l.waypoints.size()) == cfg.lane_waypoints);
    int targets = 0;
    for (const AgentTrack& a : s.agents) targets += a.is_target ? 1 : 0;
    CHECK(targets >= 2);
  }
}

TEST_CASE("noise-free agents ride the lane polylines within 1e-6") {
  SceneGenConfig cfg;
  cfg.noise_scale = 0.0;
  for (uint64_t seed = 50; seed < 58; ++seed) {
    Scene s = generate_synthetic_scene(RngState(seed), cfg);
    CAPTURE(seed);
    for (const AgentTrack& a : s.agents)
      for (const Vec2& p : a.positions) CHECK(min_dist_to_lanes(s, p) < 1e-6);
    // observed speeds stay within the configured envelope
    for (const AgentTrack& a : s.agents)
      for (size_t t = 1; t < a.positions.size(); ++t)
        CHECK((a.positions[t] - a.positions[t - 1]).norm() * 10.0 <=
              cfg.speed_max + 1e-9);
  }
}

TEST_CASE("infeasible generator configs are rejected") {
  SceneGenConfig cfg;
  SUBCASE("agent range") {
    cfg.n_agents_min = 1;
    CHECK_THROWS_WITH_AS(generate_synthetic_scene(RngState(1), cfg),
                         doctest::Contains("agent count"), std::invalid_argument);
  }
  SUBCASE("speed range") {
    cfg.speed_min = 5.0;
    cfg.speed_max = 2.0;
    CHECK_THROWS_WITH_AS(generate_synthetic_scene(RngState(1), cfg),
                         doctest::Contains("speed"), std::invalid_argument);
  }
  SUBCASE("cap headroom") {
    cfg.speed_max = 40.0;
    CHECK_THROWS_WITH_AS(generate_synthetic_scene(RngState(1), cfg),
                         doctest::Contains("cap"), std::invalid_argument);
  }
  SUBCASE("degenerate lane spacing") {
    cfg.waypoint_spacing = 0.0;
    CHECK_THROWS_AS(generate_synthetic_scene(RngState(1), cfg), std::invalid_argument);
  }
}

TEST_CASE("scene JSON round trips bit-exactly") {
  Scene s = generate_synthetic_scene(RngState(7));
  Scene r = scene_from_json(scene_to_json(s));
  REQUIRE(r.num_agents() == s.num_agents());
  REQUIRE(r.num_lanes() == s.num_lanes());
  CHECK(r.ego_index == s.ego_index);
  CHECK(r.horizon_history == s.horizon_history);
  CHECK(r.horizon_future == s.horizon_future);
  CHECK(r.frame == s.frame);
  for (size_t n = 0; n < s.agents.size(); ++n) {
    CHECK(r.agents[n].is_target == s.agents[n].is_target);
    for (size_t t = 0; t < s.agents[n].positions.size(); ++t) {
      CHECK(r.agents[n].positions[t].x == s.agents[n].positions[t].x);
      CHECK(r.agents[n].positions[t].y == s.agents[n].positions[t].y);
      CHECK(r.agents[n].headings[t] == s.agents[n].headings[t]);
    }
  }
  for (size_t z = 0; z < s.lanes.size(); ++z)
    for (size_t w = 0; w < s.lanes[z].waypoints.size(); ++w) {
      CHECK(r.lanes[z].waypoints[w].x == s.lanes[z].waypoints[w].x);
      CHECK(r.lanes[z].waypoints[w].y == s.lanes[z].waypoints[w].y);
    }
}

TEST_CASE("schema violations name the offending path") {
  Scene s = tiny_scene();
  nlohmann::json j = nlohmann::json::parse(scene_to_json(s));
  SUBCASE("missing lanes") {
    j.erase("lanes");
    CHECK_THROWS_WITH_AS(scene_from_json(j.dump()), doctest::Contains("'lanes'"),
                         std::runtime_error);
  }
  SUBCASE("missing horizon") {
    j.erase("horizon_history");
    CHECK_THROWS_WITH_AS(scene_from_json(j.dump()),
                         doctest::Contains("horizon_history"), std::runtime_error);
  }
  SUBCASE("malformed point") {
    j["agents"][0]["positions"][1] = nlohmann::json::array({1.0});
    CHECK_THROWS_WITH_AS(scene_from_json(j.dump()), doctest::Contains("positions"),
                         std::runtime_error);
  }
  SUBCASE("track shorter than the declared horizons") {
    j["agents"][1]["positions"].erase(0);
    j["agents"][1]["headings"].erase(0);
    CHECK_THROWS_WITH_AS(scene_from_json(j.dump()), doctest::Contains("agents[1]"),
                         std::invalid_argument);
  }
}

TEST_CASE("scene files round trip, including multi-scene JSONL") {
  std::string dir = "scene_io_test";
  std::remove((dir + ".json").c_str());
  Scene s = generate_synthetic_scene(RngState(99));
  save_scene(dir + ".json", s);
  Scene r = load_scene(dir + ".json");
  CHECK(scene_to_json(r) == scene_to_json(s));

  std::vector<Scene> batch;
  for (uint64_t i = 0; i < 3; ++i) batch.push_back(generate_synthetic_scene(RngState(i + 1)));
  save_scenes(dir + ".jsonl", batch);
  std::vector<Scene> loaded = load_scenes(dir + ".jsonl");
  REQUIRE(loaded.size() == batch.size());
  for (size_t i = 0; i < batch.size(); ++i)
    CHECK(scene_to_json(loaded[i]) == scene_to_json(batch[i]));

  CHECK_THROWS_WITH_AS(load_scene("no_such_scene_file.json"),
                       doctest::Contains("no_such_scene_file"), std::runtime_error);
  std::remove((dir + ".json").c_str());
  std::remove((dir + ".jsonl").c_str());
}

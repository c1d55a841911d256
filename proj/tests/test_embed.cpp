#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "mwf/embed.hpp"
#include "mwf/masking.hpp"
#include "mwf/model.hpp"
#include "mwf/rng.hpp"
#include "mwf/scene.hpp"
#include "mwf/tensor.hpp"

using namespace mwf;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.heads = 2;
  cfg.depth_encoder = 2;
  cfg.depth_regressor = 1;
  cfg.depth_spatial = 1;
  cfg.depth_motion = 1;
  cfg.t_history = 10;
  cfg.t_future = 8;
  cfg.lane_waypoints = 6;
  return cfg;
}

ModelParams small_params(uint64_t seed = 1) {
  RngState rng(seed);
  return init_model_params(small_config(), rng);
}

LaneView lane_of(std::vector<Vec2> pts) {
  LaneView v;
  for (size_t i = 0; i < pts.size(); ++i) {
    v.indices.push_back(static_cast<int>(i));
    v.points.push_back(pts[i]);
  }
  return v;
}

StepView steps_of(std::vector<int> idx, std::vector<Vec2> pts) {
  StepView v;
  v.indices = std::move(idx);
  v.points = std::move(pts);
  return v;
}

Scene small_scene(uint64_t seed = 3) {
  SceneGenConfig gc;
  gc.t_history = 10;
  gc.t_future = 8;
  gc.lane_waypoints = 6;
  gc.n_agents_max = 4;
  gc.n_lanes_min = 2;
  gc.n_lanes_max = 5;
  return generate_synthetic_scene(RngState(seed), gc);
}

}  // namespace

TEST_CASE("lane tokens are exactly permutation and duplication invariant") {
  ModelParams p = small_params();
  std::vector<Vec2> pts{{0, 0}, {1, 2}, {-3, 1}, {4, -2}, {2, 2}};
  Tensor base = embed_lane(p.embed.lane, lane_of(pts));

  std::vector<Vec2> shuffled = pts;
  RngState rng(9);
  rng.shuffle(shuffled);
  Tensor permuted = embed_lane(p.embed.lane, lane_of(shuffled));
  for (int64_t i = 0; i < base.size(); ++i) CHECK(permuted.at(i) == base.at(i));

  std::vector<Vec2> doubled = pts;
  doubled.insert(doubled.end(), pts.begin(), pts.end());
  Tensor dup = embed_lane(p.embed.lane, lane_of(doubled));
  for (int64_t i = 0; i < base.size(); ++i) CHECK(dup.at(i) == base.at(i));
}

TEST_CASE("a single-waypoint lane reduces to the per-point network") {
  ModelParams p = small_params();
  Vec2 pt{1.5, -0.25};
  Tensor token = embed_lane(p.embed.lane, lane_of({pt}));
  Tensor x = Tensor::from({1, 2}, {pt.x, pt.y});
  Tensor expect = linear(gelu(linear(x, p.embed.lane.l1_w, p.embed.lane.l1_b)),
                         p.embed.lane.l2_w, p.embed.lane.l2_b);
  REQUIRE(token.size() == expect.size());
  for (int64_t i = 0; i < token.size(); ++i) CHECK(token.at(i) == expect.at(i));
}

TEST_CASE("empty inputs are rejected with a clear message") {
  ModelParams p = small_params();
  CHECK_THROWS_WITH_AS(embed_lane(p.embed.lane, LaneView{}),
                       doctest::Contains("empty"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(embed_trajectory(p.embed.traj, StepView{}, 10),
                       doctest::Contains("empty"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      embed_trajectory(p.embed.traj, steps_of({12}, {{0, 0}}), 10),
      doctest::Contains("outside horizon"), std::invalid_argument);
}

TEST_CASE("trajectory tokens are deterministic and translation sensitive") {
  ModelParams p = small_params();
  StepView s = steps_of({0, 2, 5, 9}, {{0, 0}, {1, 0.5}, {2, 1}, {3.5, 2}});
  Tensor a = embed_trajectory(p.embed.traj, s, 10);
  Tensor b = embed_trajectory(p.embed.traj, s, 10);
  REQUIRE(a.rows() == 1);
  REQUIRE(a.cols() == 16);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == b.at(i));

  StepView shifted = s;
  for (Vec2& pt : shifted.points) pt = pt + Vec2{10.0, 0.0};
  Tensor c = embed_trajectory(p.embed.traj, shifted, 10);
  double diff = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) diff += std::abs(c.at(i) - a.at(i));
  CHECK(diff > 1e-6);
}

TEST_CASE("a single observed step still yields a finite token") {
  ModelParams p = small_params();
  Tensor t = embed_trajectory(p.embed.traj, steps_of({4}, {{2.0, -1.0}}), 10);
  CHECK(all_finite(t));
  CHECK(t.cols() == 16);
}

TEST_CASE("pooling only covers observed rows") {
  // two step sets that differ only in an unobserved step's value must match
  ModelParams p = small_params();
  Tensor a = embed_trajectory(p.embed.traj, steps_of({1, 3}, {{1, 1}, {2, 2}}), 10);
  Tensor b = embed_trajectory(p.embed.traj, steps_of({1, 3}, {{1, 1}, {2, 2}}), 10);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == b.at(i));
  // and the pooled token depends on which rows are observed
  Tensor c = embed_trajectory(p.embed.traj, steps_of({1}, {{1, 1}}), 10);
  double diff = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) diff += std::abs(c.at(i) - a.at(i));
  CHECK(diff > 1e-9);
}

TEST_CASE("token batches carry one row per agent horizon and lane") {
  ModelParams p = small_params();
  Scene s = small_scene();
  RngState rng(4);
  MaskPlan plan = make_mask_plan(s, p.config.ratios, rng);
  auto [vis, msk] = split_tokens(s, plan);

  TokenBatch bv = assemble_tokens(p.embed, p.pe, p.config.max_agents,
                                  p.config.max_lanes, s, vis, false);
  TokenBatch bm = assemble_tokens(p.embed, p.pe, p.config.max_agents,
                                  p.config.max_lanes, s, msk, true);
  int n = s.num_agents(), z = s.num_lanes();
  CHECK(bv.length() == 2 * n + z);
  CHECK(bm.length() == bv.length());
  CHECK(bv.tokens.rows() == bv.length());
  CHECK(bv.tokens.cols() == p.config.d);
  CHECK(bm.masked_branch);
  CHECK_FALSE(bv.masked_branch);

  // slot scheme: history n -> n, future n -> max_agents + n, lane z -> offset
  for (int i = 0; i < n; ++i) {
    CHECK(bv.slots[static_cast<size_t>(i)] == i);
    CHECK(bv.slots[static_cast<size_t>(n + i)] == p.config.max_agents + i);
  }
  for (int i = 0; i < z; ++i)
    CHECK(bv.slots[static_cast<size_t>(2 * n + i)] == 2 * p.config.max_agents + i);
  CHECK(bv.slots == bm.slots);
  for (uint8_t v : bv.valid) CHECK(v == 1);
}

TEST_CASE("padding appends invalid rows with intact slot identity") {
  ModelParams p = small_params();
  Scene s = small_scene();
  RngState rng(4);
  MaskPlan plan = make_mask_plan(s, p.config.ratios, rng);
  auto [vis, msk] = split_tokens(s, plan);
  int n = s.num_agents(), z = s.num_lanes();
  int pa = n + 2, pl = z + 1;

  TokenBatch b = assemble_tokens(p.embed, p.pe, p.config.max_agents,
                                 p.config.max_lanes, s, vis, false, pa, pl);
  CHECK(b.length() == 2 * pa + pl);
  CHECK(b.padded_agents == pa);
  CHECK(b.padded_lanes == pl);
  int valid_count = 0;
  for (uint8_t v : b.valid) valid_count += v;
  CHECK(valid_count == 2 * n + z);
  // padding rows sit at the tail of each section
  for (int i = n; i < pa; ++i) {
    CHECK(b.valid[static_cast<size_t>(i)] == 0);
    CHECK(b.valid[static_cast<size_t>(pa + i)] == 0);
    CHECK(b.slots[static_cast<size_t>(i)] == i);
  }
  for (int i = z; i < pl; ++i) CHECK(b.valid[static_cast<size_t>(2 * pa + i)] == 0);

  CHECK_THROWS_WITH_AS(assemble_tokens(p.embed, p.pe, p.config.max_agents,
                                       p.config.max_lanes, s, vis, false, n - 1, z),
                       doctest::Contains("below scene counts"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(assemble_tokens(p.embed, p.pe, p.config.max_agents,
                                       p.config.max_lanes, s, vis, false,
                                       p.config.max_agents + 1, z),
                       doctest::Contains("positional table"), std::invalid_argument);
}

TEST_CASE("a zero positional table leaves the raw embeddings") {
  ModelParams p = small_params();
  Scene s = small_scene();
  RngState rng(4);
  MaskPlan plan = make_mask_plan(s, p.config.ratios, rng);
  auto [vis, msk] = split_tokens(s, plan);
  Tensor zero_pe = Tensor::zeros({p.config.pe_rows(), p.config.d});
  TokenBatch b = assemble_tokens(p.embed, zero_pe, p.config.max_agents,
                                 p.config.max_lanes, s, vis, false);
  Tensor direct = embed_trajectory(p.embed.traj, vis.history[0], s.horizon_history);
  for (int j = 0; j < p.config.d; ++j) CHECK(b.tokens.at(0, j) == direct.at(j));
  Tensor lane0 = embed_lane(p.embed.lane, vis.lanes[0]);
  for (int j = 0; j < p.config.d; ++j)
    CHECK(b.tokens.at(2 * s.num_agents(), j) == lane0.at(j));
}

TEST_CASE("positional rows shift the tokens by the slot entry") {
  ModelParams p = small_params();
  Scene s = small_scene();
  RngState rng(4);
  MaskPlan plan = make_mask_plan(s, p.config.ratios, rng);
  auto [vis, msk] = split_tokens(s, plan);
  Tensor zero_pe = Tensor::zeros({p.config.pe_rows(), p.config.d});
  TokenBatch plain = assemble_tokens(p.embed, zero_pe, p.config.max_agents,
                                     p.config.max_lanes, s, vis, false);
  TokenBatch with_pe = assemble_tokens(p.embed, p.pe, p.config.max_agents,
                                       p.config.max_lanes, s, vis, false);
  for (int i = 0; i < plain.length(); ++i)
    for (int j = 0; j < p.config.d; ++j)
      CHECK(with_pe.tokens.at(i, j) ==
            plain.tokens.at(i, j) + p.pe.at(plain.slots[static_cast<size_t>(i)], j));
}

TEST_CASE("history-only batches embed full tracks and whole lanes") {
  ModelParams p = small_params();
  Scene s = small_scene();
  TokenBatch b = assemble_history_tokens(p.embed, p.pe, p.config.max_agents,
                                         p.config.max_lanes, s);
  CHECK(b.history_only);
  CHECK(b.length() == s.num_agents() + s.num_lanes());
  for (int i = 0; i < s.num_agents(); ++i) CHECK(b.slots[static_cast<size_t>(i)] == i);
  for (int i = 0; i < s.num_lanes(); ++i)
    CHECK(b.slots[static_cast<size_t>(s.num_agents() + i)] ==
          2 * p.config.max_agents + i);

  // row 0 equals the direct full-history embedding plus its positional row
  StepView all;
  for (int t = 0; t < s.horizon_history; ++t) {
    all.indices.push_back(t);
    all.points.push_back(s.agents[0].positions[static_cast<size_t>(t)]);
  }
  Tensor direct = embed_trajectory(p.embed.traj, all, s.horizon_history);
  for (int j = 0; j < p.config.d; ++j)
    CHECK(b.tokens.at(0, j) == direct.at(j) + p.pe.at(0, j));
}

TEST_CASE("gradients reach every embedder weight through a token batch") {
  ModelParams p = small_params();
  Scene s = small_scene();
  RngState rng(4);
  MaskPlan plan = make_mask_plan(s, p.config.ratios, rng);
  auto [vis, msk] = split_tokens(s, plan);

  std::vector<NamedParam> params = named_params(p, Stage::pretrain);
  for (auto& np : params) np.tensor.zero_grad();
  Tape tape;
  TapeScope scope(tape);
  TokenBatch b = assemble_tokens(p.embed, p.pe, p.config.max_agents,
                                 p.config.max_lanes, s, vis, false);
  tape.backward(sum_all(b.tokens));
  const char* expect[] = {"embed.traj.lift.w", "embed.traj.conv1.w",
                          "embed.traj.conv2.w", "embed.traj.lat0.w",
                          "embed.traj.lat1.w", "embed.traj.lat2.w",
                          "embed.traj.fuse.w", "embed.lane.l1.w",
                          "embed.lane.l2.w",   "pe.table"};
  for (const char* name : expect) {
    double mag = 0.0;
    for (auto& np : params)
      if (np.name == name && np.tensor.has_grad())
        for (int64_t i = 0; i < np.tensor.size(); ++i)
          mag += std::abs(np.tensor.grad()[i]);
    CAPTURE(name);
    CHECK(mag > 0.0);
  }
}

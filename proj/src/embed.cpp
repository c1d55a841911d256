#include "mwf/embed.hpp"

#include <stdexcept>
#include <string>

namespace mwf {

Tensor embed_trajectory(const TrajEmbedWeights& w, const StepView& steps,
                        int horizon) {
  if (steps.indices.empty())
    throw std::invalid_argument("embed_trajectory: empty step set");
  if (horizon < 1) throw std::invalid_argument("embed_trajectory: horizon < 1");
  std::vector<double> grid(static_cast<size_t>(horizon) * 4, 0.0);
  for (size_t i = 0; i < steps.indices.size(); ++i) {
    int t = steps.indices[i];
    if (t < 0 || t >= horizon)
      throw std::invalid_argument("embed_trajectory: step index " +
                                  std::to_string(t) + " outside horizon " +
                                  std::to_string(horizon));
    size_t row = static_cast<size_t>(t) * 4;
    grid[row + 0] = steps.points[i].x;
    grid[row + 1] = steps.points[i].y;
    grid[row + 2] = static_cast<double>(t) / horizon;
    grid[row + 3] = 1.0;
  }
  Tensor g = Tensor::from({horizon, 4}, std::move(grid));
  Tensor x0 = gelu(linear(g, w.lift_w, w.lift_b));
  Tensor x1 = gelu(conv1d(x0, w.conv1_w, w.conv1_b, 3, 2, 1));
  Tensor x2 = gelu(conv1d(x1, w.conv2_w, w.conv2_b, 3, 2, 1));
  Tensor p1 = add(linear(x1, w.lat1_w, w.lat1_b),
                  upsample_rows_x2(linear(x2, w.lat2_w, w.lat2_b), x1.rows()));
  Tensor p0 = add(linear(x0, w.lat0_w, w.lat0_b), upsample_rows_x2(p1, horizon));
  Tensor fused = gelu(linear(p0, w.fuse_w, w.fuse_b));
  return mean_rows(gather_rows(fused, steps.indices));
}

Tensor embed_lane(const LaneEmbedWeights& w, const LaneView& waypoints) {
  if (waypoints.points.empty())
    throw std::invalid_argument("embed_lane: empty waypoint set");
  int n = static_cast<int>(waypoints.points.size());
  std::vector<double> pts(static_cast<size_t>(n) * 2);
  for (int i = 0; i < n; ++i) {
    pts[static_cast<size_t>(i) * 2 + 0] = waypoints.points[static_cast<size_t>(i)].x;
    pts[static_cast<size_t>(i) * 2 + 1] = waypoints.points[static_cast<size_t>(i)].y;
  }
  Tensor p = Tensor::from({n, 2}, std::move(pts));
  Tensor h = gelu(linear(p, w.l1_w, w.l1_b));
  Tensor h2 = linear(h, w.l2_w, w.l2_b);
  return max_rows(h2);
}

namespace {

int embed_width(const EmbedWeights& w) { return w.traj.lift_w.cols(); }

TokenBatch assemble_impl(const EmbedWeights& w, const Tensor& pe_table,
                         int max_agents, int max_lanes, const Scene& scene,
                         const SceneViews* views, bool masked_branch,
                         bool history_only, int padded_agents, int padded_lanes) {
  int n = scene.num_agents(), z = scene.num_lanes();
  if (padded_agents < 0) padded_agents = n;
  if (padded_lanes < 0) padded_lanes = z;
  if (padded_agents < n || padded_lanes < z)
    throw std::invalid_argument("assemble_tokens: padded counts below scene counts");
  if (padded_agents > max_agents || padded_lanes > max_lanes)
    throw std::invalid_argument(
        "assemble_tokens: scene exceeds the positional table (" +
        std::to_string(padded_agents) + " agents / " + std::to_string(padded_lanes) +
        " lanes vs max " + std::to_string(max_agents) + "/" +
        std::to_string(max_lanes) + ")");
  if (views) {
    if (static_cast<int>(views->history.size()) != n ||
        static_cast<int>(views->future.size()) != n ||
        static_cast<int>(views->lanes.size()) != z)
      throw std::invalid_argument("assemble_tokens: views do not match scene counts");
  }
  int d = embed_width(w);
  if (pe_table.cols() != d)
    throw std::invalid_argument("assemble_tokens: positional table width " +
                                std::to_string(pe_table.cols()) + " != D " +
                                std::to_string(d));

  TokenBatch batch;
  batch.n_agents = n;
  batch.n_lanes = z;
  batch.padded_agents = padded_agents;
  batch.padded_lanes = padded_lanes;
  batch.masked_branch = masked_branch;
  batch.history_only = history_only;

  std::vector<Tensor> rows;
  auto push = [&](Tensor row, int slot, bool is_valid) {
    rows.push_back(std::move(row));
    batch.slots.push_back(slot);
    batch.valid.push_back(is_valid ? 1 : 0);
  };
  Tensor zero_row = Tensor::zeros({1, d});

  for (int i = 0; i < padded_agents; ++i) {
    if (i >= n) {
      push(zero_row, i, false);
      continue;
    }
    if (history_only) {
      StepView all;
      for (int t = 0; t < scene.horizon_history; ++t) {
        all.indices.push_back(t);
        all.points.push_back(scene.agents[static_cast<size_t>(i)]
                                 .positions[static_cast<size_t>(t)]);
      }
      push(embed_trajectory(w.traj, all, scene.horizon_history), i, true);
    } else {
      const StepView& sv = views->history[static_cast<size_t>(i)];
      push(sv.indices.empty() ? zero_row
                              : embed_trajectory(w.traj, sv, scene.horizon_history),
           i, true);
    }
  }
  if (!history_only) {
    for (int i = 0; i < padded_agents; ++i) {
      if (i >= n) {
        push(zero_row, max_agents + i, false);
        continue;
      }
      const StepView& sv = views->future[static_cast<size_t>(i)];
      push(sv.indices.empty() ? zero_row
                              : embed_trajectory(w.traj, sv, scene.horizon_future),
           max_agents + i, true);
    }
  }
  for (int i = 0; i < padded_lanes; ++i) {
    if (i >= z) {
      push(zero_row, 2 * max_agents + i, false);
      continue;
    }
    if (history_only) {
      LaneView all;
      const LaneSegment& lane = scene.lanes[static_cast<size_t>(i)];
      for (size_t wp = 0; wp < lane.waypoints.size(); ++wp) {
        all.indices.push_back(static_cast<int>(wp));
        all.points.push_back(lane.waypoints[wp]);
      }
      push(embed_lane(w.lane, all), 2 * max_agents + i, true);
    } else {
      const LaneView& lv = views->lanes[static_cast<size_t>(i)];
      push(lv.points.empty() ? zero_row : embed_lane(w.lane, lv),
           2 * max_agents + i, true);
    }
  }

  batch.tokens = add(concat_rows(rows), gather_rows(pe_table, batch.slots));
  return batch;
}

}  // namespace

TokenBatch assemble_tokens(const EmbedWeights& w, const Tensor& pe_table,
                           int max_agents, int max_lanes, const Scene& scene,
                           const SceneViews& views, bool masked_branch,
                           int padded_agents, int padded_lanes) {
  return assemble_impl(w, pe_table, max_agents, max_lanes, scene, &views,
                       masked_branch, false, padded_agents, padded_lanes);
}

TokenBatch assemble_history_tokens(const EmbedWeights& w, const Tensor& pe_table,
                                   int max_agents, int max_lanes,
                                   const Scene& scene, int padded_agents,
                                   int padded_lanes) {
  return assemble_impl(w, pe_table, max_agents, max_lanes, scene, nullptr, false,
                       true, padded_agents, padded_lanes);
}

}  // namespace mwf

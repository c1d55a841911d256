#pragma once

#include <cstdint>
#include <vector>

#include "mwf/masking.hpp"
#include "mwf/scene.hpp"
#include "mwf/tensor.hpp"

namespace mwf {

// Trajectory embedder: per-step lift of (x, y, t/T, present) onto a
// full-horizon grid, a two-level strided conv pyramid with lateral links and
// top-down fusion, then a mean-pool over the present rows. One token per
// agent per branch.
struct TrajEmbedWeights {
  Tensor lift_w, lift_b;    // 4 -> D
  Tensor conv1_w, conv1_b;  // [3D, D], stride 2
  Tensor conv2_w, conv2_b;  // [3D, D], stride 2
  Tensor lat0_w, lat0_b;    // D -> D lateral links
  Tensor lat1_w, lat1_b;
  Tensor lat2_w, lat2_b;
  Tensor fuse_w, fuse_b;    // D -> D after top-down sum
};

// Lane embedder: shared per-point MLP then elementwise max over points, so
// the token is exactly permutation invariant.
struct LaneEmbedWeights {
  Tensor l1_w, l1_b;  // 2 -> D
  Tensor l2_w, l2_b;  // D -> D
};

struct EmbedWeights {
  TrajEmbedWeights traj;
  LaneEmbedWeights lane;
};

// [1, D]. Steps are (index within horizon, position); the grid rows of absent
// steps stay zero with a zero present-flag. Rejects empty step sets.
Tensor embed_trajectory(const TrajEmbedWeights& w, const StepView& steps,
                        int horizon);

// [1, D]. Rejects empty waypoint sets.
Tensor embed_lane(const LaneEmbedWeights& w, const LaneView& waypoints);

// One branch's token sequence. Order: history tokens for agents 0..n-1 (then
// agent padding), future tokens likewise, lane tokens 0..z-1 (then lane
// padding). slots[i] is the row of the positional/query tables that token i
// owns; valid[i]=0 marks padding rows.
struct TokenBatch {
  Tensor tokens;  // [2*padded_agents + padded_lanes, D]
  std::vector<int> slots;
  std::vector<uint8_t> valid;
  int n_agents = 0;      // real agents
  int n_lanes = 0;       // real lanes
  int padded_agents = 0;
  int padded_lanes = 0;
  bool masked_branch = false;
  bool history_only = false;  // fine-tune layout: no future tokens

  int length() const { return static_cast<int>(slots.size()); }
};

// Embeds one side of a visible/masked split and adds positional rows gathered
// by slot identity (history n -> n, future n -> max_agents + n, lane z ->
// 2*max_agents + z). Empty subsets embed to a zero token so both branches
// always have the same length. padded_* of -1 means no padding.
TokenBatch assemble_tokens(const EmbedWeights& w, const Tensor& pe_table,
                           int max_agents, int max_lanes, const Scene& scene,
                           const SceneViews& views, bool masked_branch,
                           int padded_agents = -1, int padded_lanes = -1);

// Fine-tune layout: one token per agent from its full observed history plus
// one per lane from all waypoints; future slots unused.
TokenBatch assemble_history_tokens(const EmbedWeights& w, const Tensor& pe_table,
                                   int max_agents, int max_lanes,
                                   const Scene& scene, int padded_agents = -1,
                                   int padded_lanes = -1);

}  // namespace mwf

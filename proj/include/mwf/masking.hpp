#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mwf/rng.hpp"
#include "mwf/scene.hpp"

namespace mwf {

enum class MaskMode { iid, block };

// Per-scene masking decision: true = masked. Counts are exact per agent and
// per lane: round(ratio * length) with ties to even, clamped so agent history
// and lanes always keep at least one visible entry.
struct MaskPlan {
  std::vector<std::vector<uint8_t>> history;  // [agent][step of T_h]
  std::vector<std::vector<uint8_t>> future;   // [agent][step of T_f]
  std::vector<std::vector<uint8_t>> lanes;    // [lane][waypoint]
  double r1 = 0.0;                            // history ratio
  double r2 = 0.0;                            // future ratio
  double r3 = 0.0;                            // lane ratio
};

struct MaskRatios {
  double r1 = 0.30;
  double r2 = 0.70;
  double r3 = 0.50;
};

// Uniform selection without replacement per agent and per lane (iid mode) or
// one contiguous run of the same count (block mode). Deterministic given rng.
// Ratios outside [0, 0.95] are rejected.
MaskPlan make_mask_plan(const Scene& scene, const MaskRatios& ratios, RngState& rng,
                        MaskMode mode = MaskMode::iid);

// Number of entries masked for a span of `length` at `ratio`, before the
// keep-one-visible clamp: nearest integer, ties to even.
int masked_count(double ratio, int length);

// Ordered subset of one agent's steps within one horizon; indices are
// positions within that horizon (0-based).
struct StepView {
  std::vector<int> indices;
  std::vector<Vec2> points;
};

struct LaneView {
  std::vector<int> indices;
  std::vector<Vec2> points;
};

// One side of the visible/masked partition.
struct SceneViews {
  std::vector<StepView> history;  // per agent
  std::vector<StepView> future;   // per agent
  std::vector<LaneView> lanes;    // per lane
};

// Splits the scene by the plan; first = visible, second = masked. The two
// sides partition every agent's steps and every lane's waypoints exactly.
std::pair<SceneViews, SceneViews> split_tokens(const Scene& scene,
                                               const MaskPlan& plan);

std::string mask_plan_to_json(const MaskPlan& plan);
MaskPlan mask_plan_from_json(const std::string& text);

}  // namespace mwf

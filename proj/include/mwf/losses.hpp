#pragma once

#include <cstdint>
#include <vector>

#include "mwf/masking.hpp"
#include "mwf/model.hpp"
#include "mwf/scene.hpp"
#include "mwf/tensor.hpp"

namespace mwf {

// Ground truth for the reconstruction heads, slot-aligned with the decode
// outputs. Coordinate rows flatten (x, y) per masked entry in ascending index
// order; speed rows hold m/s at each masked step (backward difference at 10
// Hz, forward at step 0). Padding rows are zero with valid=0.
struct PretrainTargets {
  Tensor hist_coords;  // [padded_agents, 2*mask_h]
  Tensor fut_coords;   // [padded_agents, 2*mask_f]
  Tensor lane_coords;  // [padded_lanes, 2*mask_w]
  Tensor hist_speeds;  // [padded_agents, mask_h]
  Tensor fut_speeds;   // [padded_agents, mask_f]
  std::vector<uint8_t> agent_valid;
  std::vector<uint8_t> lane_valid;
};

// Requires every lane to have exactly cfg.lane_waypoints points and the plan
// counts to equal the config's mask widths (uniform-width heads).
PretrainTargets build_pretrain_targets(const Scene& scene, const MaskPlan& plan,
                                       const ModelConfig& cfg,
                                       int padded_agents = -1,
                                       int padded_lanes = -1);

// Mean squared error over the valid slots of two equally-shaped encodings.
Tensor alignment_loss(const Tensor& r_m, const Tensor& e_m,
                      const std::vector<uint8_t>& valid);

// Sum of three per-modality mean absolute errors (history, future, lanes).
Tensor spatial_loss(const SpatialDecode& pred, const PretrainTargets& tgt);

// Sum of two per-modality mean absolute errors (history and future speeds).
Tensor motion_loss(const MotionDecode& pred, const PretrainTargets& tgt);

// total = alpha * l_align + l_spatial + l_motion; negative alpha rejected.
// Any undefined component participates as zero.
Tensor pretrain_total(const Tensor& l_align, const Tensor& l_spatial,
                      const Tensor& l_motion, double alpha);

struct PretrainLossReport {
  double l_align = 0.0;
  double l_spatial = 0.0;
  double l_motion = 0.0;
  double total = 0.0;
  double alpha = 0.0;
};

// Winner world: argmin over modes of the mean final-step Euclidean error over
// target agents; ties go to the smallest index. worlds[k] is [rows, T_f*2];
// truth has the same layout.
int select_winner(const std::vector<Tensor>& worlds, const Tensor& truth,
                  const std::vector<uint8_t>& is_target);

struct FinetuneLossReport {
  int k_star = 0;
  double l_huber = 0.0;
  double l_ce = 0.0;
  double total = 0.0;
};

// Huber (elementwise, averaged over target agents x steps x coords) on the
// winning world only, plus cross entropy of the mode logits against k_star.
// Gradients reach the winning trajectory and every logit; other worlds get
// exactly none.
Tensor finetune_loss(const std::vector<Tensor>& worlds, const Tensor& logits,
                     const Tensor& truth, const std::vector<uint8_t>& is_target,
                     int k_star, double delta = 1.0,
                     FinetuneLossReport* report = nullptr);

}  // namespace mwf

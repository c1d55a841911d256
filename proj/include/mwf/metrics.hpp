#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mwf/scene.hpp"

namespace mwf {

// worlds[k][n][t] and truth[n][t] are future positions; metrics reduce over
// the designated target agents only.
using WorldSet = std::vector<std::vector<std::vector<Vec2>>>;
using FutureTruth = std::vector<std::vector<Vec2>>;

// min over worlds of the mean final-step Euclidean error across target
// agents; the minimizing world index lands in *k_star when given. The minimum
// is taken at the world level, never by mixing agents across worlds.
double avg_min_fde(const WorldSet& worlds, const FutureTruth& truth,
                   const std::vector<uint8_t>& is_target, int* k_star = nullptr);

// min over worlds of the mean per-step Euclidean error across target agents
// and all future steps.
double avg_min_ade(const WorldSet& worlds, const FutureTruth& truth,
                   const std::vector<uint8_t>& is_target);

// Fraction of target agents whose final error exceeds tau in the
// FDE-minimizing world.
double actor_mr(const WorldSet& worlds, const FutureTruth& truth,
                const std::vector<uint8_t>& is_target, double tau = 2.0);

struct SceneMetrics {
  double min_fde = 0.0;
  double min_ade = 0.0;
  double actor_mr = 0.0;
  int k_star = 0;
};

SceneMetrics scene_metrics(const WorldSet& worlds, const FutureTruth& truth,
                           const std::vector<uint8_t>& is_target,
                           double tau = 2.0);

struct SingleAgentMetrics {
  double min_fde = 0.0;
  double min_ade = 0.0;
  double mr = 0.0;  // 0/1 per scene before dataset averaging
};

// The N=1 specialization for one focal agent.
SingleAgentMetrics single_agent_metrics(const WorldSet& worlds,
                                        const FutureTruth& truth, int focal,
                                        double tau = 2.0);

struct DatasetMetrics {
  double avg_min_fde = 0.0;
  double avg_min_ade = 0.0;
  double actor_mr = 0.0;
  int n_scenes = 0;
  double tau = 2.0;
  std::vector<SceneMetrics> per_scene;
};

// Unweighted mean over scenes.
DatasetMetrics aggregate_metrics(std::vector<SceneMetrics> scenes, double tau = 2.0);

std::string metrics_to_json(const DatasetMetrics& m);

}  // namespace mwf

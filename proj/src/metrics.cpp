#include "mwf/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace mwf {
namespace {

struct Layout {
  int n_worlds;
  int n_agents;
  int n_steps;
  std::vector<int> targets;
};

Layout check_layout(const WorldSet& worlds, const FutureTruth& truth,
                    const std::vector<uint8_t>& is_target) {
  if (worlds.empty()) throw std::invalid_argument("metrics: no worlds");
  Layout lay;
  lay.n_worlds = static_cast<int>(worlds.size());
  lay.n_agents = static_cast<int>(truth.size());
  if (lay.n_agents == 0) throw std::invalid_argument("metrics: no agents");
  if (static_cast<int>(is_target.size()) != lay.n_agents)
    throw std::invalid_argument("metrics: is_target size " +
                                std::to_string(is_target.size()) +
                                " does not match " +
                                std::to_string(lay.n_agents) + " agents");
  lay.n_steps = static_cast<int>(truth[0].size());
  if (lay.n_steps == 0) throw std::invalid_argument("metrics: empty horizon");
  for (int n = 0; n < lay.n_agents; ++n) {
    if (static_cast<int>(truth[n].size()) != lay.n_steps)
      throw std::invalid_argument("metrics: truth agent " + std::to_string(n) +
                                  " has " + std::to_string(truth[n].size()) +
                                  " steps, expected " +
                                  std::to_string(lay.n_steps));
  }
  for (int k = 0; k < lay.n_worlds; ++k) {
    if (static_cast<int>(worlds[k].size()) != lay.n_agents)
      throw std::invalid_argument("metrics: world " + std::to_string(k) +
                                  " has " + std::to_string(worlds[k].size()) +
                                  " agents, expected " +
                                  std::to_string(lay.n_agents));
    for (int n = 0; n < lay.n_agents; ++n) {
      if (static_cast<int>(worlds[k][n].size()) != lay.n_steps)
        throw std::invalid_argument(
            "metrics: world " + std::to_string(k) + " agent " +
            std::to_string(n) + " has " + std::to_string(worlds[k][n].size()) +
            " steps, expected " + std::to_string(lay.n_steps));
    }
  }
  for (int n = 0; n < lay.n_agents; ++n)
    if (is_target[n]) lay.targets.push_back(n);
  if (lay.targets.empty())
    throw std::invalid_argument("metrics: no target agents");
  return lay;
}

double dist(const Vec2& a, const Vec2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

}  // namespace

double avg_min_fde(const WorldSet& worlds, const FutureTruth& truth,
                   const std::vector<uint8_t>& is_target, int* k_star) {
  Layout lay = check_layout(worlds, truth, is_target);
  const int last = lay.n_steps - 1;
  double best = std::numeric_limits<double>::infinity();
  int best_k = 0;
  for (int k = 0; k < lay.n_worlds; ++k) {
    double sum = 0.0;
    for (int n : lay.targets)
      sum += dist(worlds[k][n][last], truth[n][last]);
    double fde = sum / static_cast<double>(lay.targets.size());
    if (fde < best) {
      best = fde;
      best_k = k;
    }
  }
  if (k_star) *k_star = best_k;
  return best;
}

double avg_min_ade(const WorldSet& worlds, const FutureTruth& truth,
                   const std::vector<uint8_t>& is_target) {
  Layout lay = check_layout(worlds, truth, is_target);
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < lay.n_worlds; ++k) {
    double sum = 0.0;
    for (int n : lay.targets)
      for (int t = 0; t < lay.n_steps; ++t)
        sum += dist(worlds[k][n][t], truth[n][t]);
    double ade = sum / static_cast<double>(lay.targets.size() * lay.n_steps);
    if (ade < best) best = ade;
  }
  return best;
}

double actor_mr(const WorldSet& worlds, const FutureTruth& truth,
                const std::vector<uint8_t>& is_target, double tau) {
  Layout lay = check_layout(worlds, truth, is_target);
  int k_star = 0;
  avg_min_fde(worlds, truth, is_target, &k_star);
  const int last = lay.n_steps - 1;
  int missed = 0;
  for (int n : lay.targets)
    if (dist(worlds[k_star][n][last], truth[n][last]) > tau) ++missed;
  return static_cast<double>(missed) / static_cast<double>(lay.targets.size());
}

SceneMetrics scene_metrics(const WorldSet& worlds, const FutureTruth& truth,
                           const std::vector<uint8_t>& is_target, double tau) {
  SceneMetrics m;
  m.min_fde = avg_min_fde(worlds, truth, is_target, &m.k_star);
  m.min_ade = avg_min_ade(worlds, truth, is_target);
  m.actor_mr = actor_mr(worlds, truth, is_target, tau);
  return m;
}

SingleAgentMetrics single_agent_metrics(const WorldSet& worlds,
                                        const FutureTruth& truth, int focal,
                                        double tau) {
  if (focal < 0 || focal >= static_cast<int>(truth.size()))
    throw std::invalid_argument("metrics: focal agent " +
                                std::to_string(focal) + " out of range for " +
                                std::to_string(truth.size()) + " agents");
  std::vector<uint8_t> only(truth.size(), 0);
  only[static_cast<size_t>(focal)] = 1;
  SceneMetrics m = scene_metrics(worlds, truth, only, tau);
  SingleAgentMetrics s;
  s.min_fde = m.min_fde;
  s.min_ade = m.min_ade;
  s.mr = m.actor_mr;
  return s;
}

DatasetMetrics aggregate_metrics(std::vector<SceneMetrics> scenes, double tau) {
  if (scenes.empty())
    throw std::invalid_argument("metrics: cannot aggregate zero scenes");
  DatasetMetrics d;
  d.n_scenes = static_cast<int>(scenes.size());
  d.tau = tau;
  for (const SceneMetrics& m : scenes) {
    d.avg_min_fde += m.min_fde;
    d.avg_min_ade += m.min_ade;
    d.actor_mr += m.actor_mr;
  }
  d.avg_min_fde /= d.n_scenes;
  d.avg_min_ade /= d.n_scenes;
  d.actor_mr /= d.n_scenes;
  d.per_scene = std::move(scenes);
  return d;
}

std::string metrics_to_json(const DatasetMetrics& m) {
  nlohmann::json j;
  j["avg_min_fde"] = m.avg_min_fde;
  j["avg_min_ade"] = m.avg_min_ade;
  j["actor_mr"] = m.actor_mr;
  j["n_scenes"] = m.n_scenes;
  j["tau"] = m.tau;
  nlohmann::json per = nlohmann::json::array();
  for (const SceneMetrics& s : m.per_scene) {
    per.push_back({{"min_fde", s.min_fde},
                   {"min_ade", s.min_ade},
                   {"actor_mr", s.actor_mr},
                   {"k_star", s.k_star}});
  }
  j["per_scene"] = per;
  return j.dump(2);
}

}  // namespace mwf

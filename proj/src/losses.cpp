#include "mwf/losses.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace mwf {

namespace {

double speed_at(const AgentTrack& a, int global_step) {
  // backward difference at 10 Hz; step 0 falls back to the forward one
  size_t g = static_cast<size_t>(global_step);
  if (global_step == 0) return (a.positions[1] - a.positions[0]).norm() * 10.0;
  return (a.positions[g] - a.positions[g - 1]).norm() * 10.0;
}

std::vector<int> masked_indices(const std::vector<uint8_t>& mask) {
  std::vector<int> out;
  for (size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(static_cast<int>(i));
  return out;
}

}  // namespace

PretrainTargets build_pretrain_targets(const Scene& scene, const MaskPlan& plan,
                                       const ModelConfig& cfg, int padded_agents,
                                       int padded_lanes) {
  int n = scene.num_agents(), z = scene.num_lanes();
  if (padded_agents < 0) padded_agents = n;
  if (padded_lanes < 0) padded_lanes = z;
  int mh = cfg.mask_h(), mf = cfg.mask_f(), mw = cfg.mask_w();
  if (scene.horizon_history != cfg.t_history || scene.horizon_future != cfg.t_future)
    throw std::invalid_argument("pretrain targets: scene horizons do not match config");

  std::vector<double> hist_c(static_cast<size_t>(padded_agents) * 2 * mh, 0.0);
  std::vector<double> fut_c(static_cast<size_t>(padded_agents) * 2 * mf, 0.0);
  std::vector<double> lane_c(static_cast<size_t>(padded_lanes) * 2 * mw, 0.0);
  std::vector<double> hist_s(static_cast<size_t>(padded_agents) * mh, 0.0);
  std::vector<double> fut_s(static_cast<size_t>(padded_agents) * mf, 0.0);

  for (int a = 0; a < n; ++a) {
    const AgentTrack& track = scene.agents[static_cast<size_t>(a)];
    std::vector<int> hi = masked_indices(plan.history[static_cast<size_t>(a)]);
    std::vector<int> fi = masked_indices(plan.future[static_cast<size_t>(a)]);
    if (static_cast<int>(hi.size()) != mh || static_cast<int>(fi.size()) != mf)
      throw std::invalid_argument(
          "pretrain targets: agent " + std::to_string(a) + " has " +
          std::to_string(hi.size()) + "/" + std::to_string(fi.size()) +
          " masked steps, config heads expect " + std::to_string(mh) + "/" +
          std::to_string(mf));
    for (int i = 0; i < mh; ++i) {
      Vec2 p = track.positions[static_cast<size_t>(hi[static_cast<size_t>(i)])];
      hist_c[static_cast<size_t>(a) * 2 * mh + 2 * i] = p.x;
      hist_c[static_cast<size_t>(a) * 2 * mh + 2 * i + 1] = p.y;
      hist_s[static_cast<size_t>(a) * mh + i] = speed_at(track, hi[static_cast<size_t>(i)]);
    }
    for (int i = 0; i < mf; ++i) {
      int g = scene.horizon_history + fi[static_cast<size_t>(i)];
      Vec2 p = track.positions[static_cast<size_t>(g)];
      fut_c[static_cast<size_t>(a) * 2 * mf + 2 * i] = p.x;
      fut_c[static_cast<size_t>(a) * 2 * mf + 2 * i + 1] = p.y;
      fut_s[static_cast<size_t>(a) * mf + i] = speed_at(track, g);
    }
  }
  for (int l = 0; l < z; ++l) {
    const LaneSegment& lane = scene.lanes[static_cast<size_t>(l)];
    if (static_cast<int>(lane.waypoints.size()) != cfg.lane_waypoints)
      throw std::invalid_argument(
          "pretrain targets: lane " + std::to_string(l) + " has " +
          std::to_string(lane.waypoints.size()) + " waypoints, config expects " +
          std::to_string(cfg.lane_waypoints) + " (uniform widths required)");
    std::vector<int> li = masked_indices(plan.lanes[static_cast<size_t>(l)]);
    if (static_cast<int>(li.size()) != mw)
      throw std::invalid_argument("pretrain targets: lane " + std::to_string(l) +
                                  " has " + std::to_string(li.size()) +
                                  " masked waypoints, config heads expect " +
                                  std::to_string(mw));
    for (int i = 0; i < mw; ++i) {
      Vec2 p = lane.waypoints[static_cast<size_t>(li[static_cast<size_t>(i)])];
      lane_c[static_cast<size_t>(l) * 2 * mw + 2 * i] = p.x;
      lane_c[static_cast<size_t>(l) * 2 * mw + 2 * i + 1] = p.y;
    }
  }

  PretrainTargets t;
  t.hist_coords = Tensor::from({padded_agents, 2 * mh}, std::move(hist_c));
  t.fut_coords = Tensor::from({padded_agents, 2 * mf}, std::move(fut_c));
  t.lane_coords = Tensor::from({padded_lanes, 2 * mw}, std::move(lane_c));
  t.hist_speeds = Tensor::from({padded_agents, mh}, std::move(hist_s));
  t.fut_speeds = Tensor::from({padded_agents, mf}, std::move(fut_s));
  t.agent_valid.assign(static_cast<size_t>(padded_agents), 0);
  for (int a = 0; a < n; ++a) t.agent_valid[static_cast<size_t>(a)] = 1;
  t.lane_valid.assign(static_cast<size_t>(padded_lanes), 0);
  for (int l = 0; l < z; ++l) t.lane_valid[static_cast<size_t>(l)] = 1;
  return t;
}

namespace {

int count_valid(const std::vector<uint8_t>& valid) {
  int c = 0;
  for (uint8_t v : valid) c += v ? 1 : 0;
  return c;
}

std::vector<double> row_weights(const std::vector<uint8_t>& valid) {
  std::vector<double> w(valid.size());
  for (size_t i = 0; i < valid.size(); ++i) w[i] = valid[i] ? 1.0 : 0.0;
  return w;
}

// Mean absolute error over valid rows; zero tensor when the head width is 0.
Tensor masked_mae(const Tensor& pred, const Tensor& tgt,
                  const std::vector<uint8_t>& valid) {
  if (pred.shape() != tgt.shape())
    throw ShapeError("loss: prediction shape " + shape_str(pred.shape()) +
                     " != target shape " + shape_str(tgt.shape()));
  int width = pred.cols();
  int rows = count_valid(valid);
  if (width == 0 || rows == 0) return Tensor::scalar(0.0);
  Tensor err = scale_rows(abs_elem(sub(pred, tgt)), row_weights(valid));
  return scale(sum_all(err), 1.0 / (static_cast<double>(rows) * width));
}

}  // namespace

Tensor alignment_loss(const Tensor& r_m, const Tensor& e_m,
                      const std::vector<uint8_t>& valid) {
  if (r_m.shape() != e_m.shape())
    throw ShapeError("alignment_loss: shapes " + shape_str(r_m.shape()) + " and " +
                     shape_str(e_m.shape()) + " differ");
  if (static_cast<int>(valid.size()) != r_m.rows())
    throw ShapeError("alignment_loss: validity length does not match rows");
  int rows = count_valid(valid);
  if (rows == 0) return Tensor::scalar(0.0);
  Tensor sq = scale_rows(square_elem(sub(r_m, e_m)), row_weights(valid));
  return scale(sum_all(sq), 1.0 / (static_cast<double>(rows) * r_m.cols()));
}

Tensor spatial_loss(const SpatialDecode& pred, const PretrainTargets& tgt) {
  Tensor h = masked_mae(pred.hist, tgt.hist_coords, tgt.agent_valid);
  Tensor f = masked_mae(pred.fut, tgt.fut_coords, tgt.agent_valid);
  Tensor l = masked_mae(pred.lane, tgt.lane_coords, tgt.lane_valid);
  return add(add(h, f), l);
}

Tensor motion_loss(const MotionDecode& pred, const PretrainTargets& tgt) {
  Tensor h = masked_mae(pred.hist, tgt.hist_speeds, tgt.agent_valid);
  Tensor f = masked_mae(pred.fut, tgt.fut_speeds, tgt.agent_valid);
  return add(h, f);
}

Tensor pretrain_total(const Tensor& l_align, const Tensor& l_spatial,
                      const Tensor& l_motion, double alpha) {
  if (alpha < 0.0)
    throw std::invalid_argument("pretrain_total: alpha must be nonnegative");
  Tensor total = Tensor::scalar(0.0);
  if (l_align.defined() && alpha > 0.0) total = add(total, scale(l_align, alpha));
  if (l_spatial.defined()) total = add(total, l_spatial);
  if (l_motion.defined()) total = add(total, l_motion);
  return total;
}

int select_winner(const std::vector<Tensor>& worlds, const Tensor& truth,
                  const std::vector<uint8_t>& is_target) {
  if (worlds.empty()) throw std::invalid_argument("select_winner: no worlds");
  int rows = truth.rows(), cols = truth.cols();
  if (cols < 2) throw std::invalid_argument("select_winner: no final step");
  int n_targets = count_valid(is_target);
  if (n_targets == 0)
    throw std::invalid_argument("select_winner: no target agents");
  int best_k = 0;
  double best = std::numeric_limits<double>::infinity();
  for (size_t k = 0; k < worlds.size(); ++k) {
    const Tensor& w = worlds[k];
    if (w.rows() != rows || w.cols() != cols)
      throw ShapeError("select_winner: world " + std::to_string(k) + " shape " +
                       shape_str(w.shape()) + " != truth " +
                       shape_str(truth.shape()));
    double sum = 0.0;
    for (int n = 0; n < rows; ++n) {
      if (!is_target[static_cast<size_t>(n)]) continue;
      double dx = w.at(n, cols - 2) - truth.at(n, cols - 2);
      double dy = w.at(n, cols - 1) - truth.at(n, cols - 1);
      sum += std::hypot(dx, dy);
    }
    double mean = sum / n_targets;
    if (mean < best) {
      best = mean;
      best_k = static_cast<int>(k);
    }
  }
  return best_k;
}

Tensor finetune_loss(const std::vector<Tensor>& worlds, const Tensor& logits,
                     const Tensor& truth, const std::vector<uint8_t>& is_target,
                     int k_star, double delta, FinetuneLossReport* report) {
  if (k_star < 0 || k_star >= static_cast<int>(worlds.size()))
    throw std::out_of_range("finetune_loss: k_star " + std::to_string(k_star) +
                            " out of " + std::to_string(worlds.size()) + " worlds");
  int n_targets = count_valid(is_target);
  if (n_targets == 0)
    throw std::invalid_argument("finetune_loss: no target agents");
  const Tensor& w = worlds[static_cast<size_t>(k_star)];
  Tensor h = scale_rows(huber_elem(sub(w, truth), delta), row_weights(is_target));
  Tensor l_huber = scale(sum_all(h), 1.0 / (static_cast<double>(n_targets) * w.cols()));
  Tensor l_ce = cross_entropy_with_index(logits, k_star);
  Tensor total = add(l_huber, l_ce);
  if (report) {
    report->k_star = k_star;
    report->l_huber = l_huber.item();
    report->l_ce = l_ce.item();
    report->total = total.item();
  }
  return total;
}

}  // namespace mwf

#include "mwf/masking.hpp"

#include <cfenv>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace mwf {

using nlohmann::json;

int masked_count(double ratio, int length) {
  // nearbyint under the default rounding mode is nearest-ties-even
  return static_cast<int>(std::nearbyint(ratio * length));
}

namespace {

std::vector<uint8_t> draw_mask(int length, double ratio, int max_masked,
                               RngState& rng, MaskMode mode) {
  int count = std::min(masked_count(ratio, length), max_masked);
  std::vector<uint8_t> mask(static_cast<size_t>(length), 0);
  if (count <= 0) return mask;
  if (mode == MaskMode::iid) {
    for (int i : sample_without_replacement(length, count, rng))
      mask[static_cast<size_t>(i)] = 1;
  } else {
    int start = rng.uniform_int(length - count + 1);
    for (int i = start; i < start + count; ++i) mask[static_cast<size_t>(i)] = 1;
  }
  return mask;
}

}  // namespace

MaskPlan make_mask_plan(const Scene& scene, const MaskRatios& ratios, RngState& rng,
                        MaskMode mode) {
  for (double r : {ratios.r1, ratios.r2, ratios.r3})
    if (r < 0.0 || r > 0.95)
      throw std::invalid_argument("make_mask_plan: ratio " + std::to_string(r) +
                                  " outside [0, 0.95]");
  MaskPlan plan;
  plan.r1 = ratios.r1;
  plan.r2 = ratios.r2;
  plan.r3 = ratios.r3;
  int th = scene.horizon_history, tf = scene.horizon_future;
  for (int n = 0; n < scene.num_agents(); ++n) {
    plan.history.push_back(draw_mask(th, ratios.r1, th - 1, rng, mode));
    plan.future.push_back(draw_mask(tf, ratios.r2, tf, rng, mode));
  }
  for (const LaneSegment& lane : scene.lanes) {
    int w = static_cast<int>(lane.waypoints.size());
    plan.lanes.push_back(draw_mask(w, ratios.r3, w - 1, rng, mode));
  }
  return plan;
}

std::pair<SceneViews, SceneViews> split_tokens(const Scene& scene,
                                               const MaskPlan& plan) {
  if (static_cast<int>(plan.history.size()) != scene.num_agents() ||
      static_cast<int>(plan.future.size()) != scene.num_agents() ||
      static_cast<int>(plan.lanes.size()) != scene.num_lanes())
    throw std::invalid_argument("split_tokens: plan agent/lane counts do not match scene");
  SceneViews visible, masked;
  int th = scene.horizon_history;
  for (int n = 0; n < scene.num_agents(); ++n) {
    const AgentTrack& a = scene.agents[static_cast<size_t>(n)];
    const auto& hm = plan.history[static_cast<size_t>(n)];
    const auto& fm = plan.future[static_cast<size_t>(n)];
    if (static_cast<int>(hm.size()) != th ||
        static_cast<int>(fm.size()) != scene.horizon_future)
      throw std::invalid_argument("split_tokens: plan horizon lengths do not match scene");
    StepView vh, mh, vf, mf;
    for (int t = 0; t < th; ++t) {
      StepView& dst = hm[static_cast<size_t>(t)] ? mh : vh;
      dst.indices.push_back(t);
      dst.points.push_back(a.positions[static_cast<size_t>(t)]);
    }
    for (int t = 0; t < scene.horizon_future; ++t) {
      StepView& dst = fm[static_cast<size_t>(t)] ? mf : vf;
      dst.indices.push_back(t);
      dst.points.push_back(a.positions[static_cast<size_t>(th + t)]);
    }
    visible.history.push_back(std::move(vh));
    masked.history.push_back(std::move(mh));
    visible.future.push_back(std::move(vf));
    masked.future.push_back(std::move(mf));
  }
  for (int z = 0; z < scene.num_lanes(); ++z) {
    const LaneSegment& lane = scene.lanes[static_cast<size_t>(z)];
    const auto& lm = plan.lanes[static_cast<size_t>(z)];
    if (lm.size() != lane.waypoints.size())
      throw std::invalid_argument("split_tokens: plan lane " + std::to_string(z) +
                                  " length does not match scene");
    LaneView vl, ml;
    for (size_t w = 0; w < lane.waypoints.size(); ++w) {
      LaneView& dst = lm[w] ? ml : vl;
      dst.indices.push_back(static_cast<int>(w));
      dst.points.push_back(lane.waypoints[w]);
    }
    visible.lanes.push_back(std::move(vl));
    masked.lanes.push_back(std::move(ml));
  }
  return {std::move(visible), std::move(masked)};
}

namespace {

json mask_rows_to_json(const std::vector<std::vector<uint8_t>>& rows) {
  json arr = json::array();
  for (const auto& row : rows) {
    json r = json::array();
    for (uint8_t b : row) r.push_back(static_cast<int>(b));
    arr.push_back(std::move(r));
  }
  return arr;
}

std::vector<std::vector<uint8_t>> mask_rows_from_json(const json& j,
                                                      const char* field) {
  if (!j.is_array())
    throw std::runtime_error(std::string("mask plan: ") + field +
                             ": expected an array");
  std::vector<std::vector<uint8_t>> rows;
  for (const json& r : j) {
    std::vector<uint8_t> row;
    for (const json& b : r) {
      int v = b.get<int>();
      if (v != 0 && v != 1)
        throw std::runtime_error(std::string("mask plan: ") + field +
                                 ": entries must be 0 or 1");
      row.push_back(static_cast<uint8_t>(v));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::string mask_plan_to_json(const MaskPlan& plan) {
  json j;
  j["r1"] = plan.r1;
  j["r2"] = plan.r2;
  j["r3"] = plan.r3;
  j["history"] = mask_rows_to_json(plan.history);
  j["future"] = mask_rows_to_json(plan.future);
  j["lanes"] = mask_rows_to_json(plan.lanes);
  return j.dump();
}

MaskPlan mask_plan_from_json(const std::string& text) {
  json j = json::parse(text);
  MaskPlan plan;
  plan.r1 = j.at("r1").get<double>();
  plan.r2 = j.at("r2").get<double>();
  plan.r3 = j.at("r3").get<double>();
  plan.history = mask_rows_from_json(j.at("history"), "history");
  plan.future = mask_rows_from_json(j.at("future"), "future");
  plan.lanes = mask_rows_from_json(j.at("lanes"), "lanes");
  return plan;
}

}  // namespace mwf

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mwf/pipeline.hpp"

using namespace mwf;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out.good()) throw std::runtime_error("write failed for " + path);
}

TrainConfig load_train_config(const std::string& path, uint64_t* seed_override) {
  TrainConfig cfg = train_config_from_json(read_file(path));
  if (seed_override) cfg.seed = *seed_override;
  return cfg;
}

json provenance(const TrainConfig& cfg) {
  return json::parse(train_config_to_json(cfg));
}

void emit(const json& summary, const std::string& out_path) {
  if (out_path.empty())
    std::cout << summary.dump(2) << "\n";
  else
    write_file(out_path, summary.dump(2) + "\n");
}

Checkpoint load_kind(const std::string& path, const std::string& want,
                     const std::string& guidance) {
  Checkpoint ck = load_checkpoint(path);
  if (ck.kind != want)
    throw std::runtime_error(path + ": checkpoint kind is '" + ck.kind + "'; " +
                             guidance);
  return ck;
}

json metrics_json(const DatasetMetrics& m) { return json::parse(metrics_to_json(m)); }

// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& out, int count, uint64_t seed,
                 const SceneGenConfig& g) {
  if (count < 0) throw std::runtime_error("gen-data: --count must be >= 0");
  RngState master(seed);
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    scenes.push_back(generate_synthetic_scene(master.derive(0, static_cast<uint64_t>(i)), g));
  save_scenes(out, scenes);

  int a_min = 0, a_max = 0, l_min = 0, l_max = 0;
  double a_sum = 0.0, l_sum = 0.0;
  for (size_t i = 0; i < scenes.size(); ++i) {
    int na = scenes[i].num_agents(), nl = scenes[i].num_lanes();
    if (i == 0) {
      a_min = a_max = na;
      l_min = l_max = nl;
    }
    a_min = std::min(a_min, na);
    a_max = std::max(a_max, na);
    l_min = std::min(l_min, nl);
    l_max = std::max(l_max, nl);
    a_sum += na;
    l_sum += nl;
  }
  json summary;
  summary["command"] = "gen-data";
  summary["seed"] = seed;
  summary["out"] = out;
  summary["count"] = count;
  summary["config"] = {{"n_agents_min", g.n_agents_min},
                       {"n_agents_max", g.n_agents_max},
                       {"n_lanes_min", g.n_lanes_min},
                       {"n_lanes_max", g.n_lanes_max},
                       {"t_history", g.t_history},
                       {"t_future", g.t_future},
                       {"lane_waypoints", g.lane_waypoints},
                       {"waypoint_spacing", g.waypoint_spacing},
                       {"speed_min", g.speed_min},
                       {"speed_max", g.speed_max},
                       {"noise_scale", g.noise_scale}};
  if (count > 0) {
    summary["agents"] = {{"min", a_min},
                         {"max", a_max},
                         {"mean", a_sum / count}};
    summary["lanes"] = {{"min", l_min}, {"max", l_max}, {"mean", l_sum / count}};
  }
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_pretrain(const std::string& config_path, uint64_t* seed_override,
                 const std::string& out, const std::string& resume_path,
                 const std::string& log_path) {
  TrainConfig cfg = load_train_config(config_path, seed_override);
  if (cfg.train_data.empty())
    throw std::runtime_error("pretrain: config needs train_data");
  std::vector<Scene> train = load_scenes(cfg.train_data);

  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!log_path.empty()) {
    log_file.open(log_path);
    if (!log_file) throw std::runtime_error("cannot write " + log_path);
    log = &log_file;
  }

  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = load_kind(resume_path, "pretrain",
                       "pass a pre-training checkpoint to --resume");
    resume_ptr = &resume;
  }

  PretrainRun run = run_pretrain(cfg, train, log, resume_ptr);
  if (!out.empty()) {
    Checkpoint ck;
    ck.kind = "pretrain";
    ck.config = cfg;
    ck.epochs_done = run.epochs_done;
    ck.params = run.params;
    ck.optim = run.optim;
    ck.has_optim = true;
    save_checkpoint(out, ck);
  }

  json summary;
  summary["command"] = "pretrain";
  summary["seed"] = cfg.seed;
  summary["config"] = provenance(cfg);
  summary["epochs_done"] = run.epochs_done;
  summary["steps"] = run.steps.size();
  if (!run.steps.empty()) summary["final_total"] = run.steps.back().total;
  if (!out.empty()) summary["checkpoint"] = out;
  if (!run.checkpoints.empty()) summary["epoch_checkpoints"] = run.checkpoints;
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_finetune(const std::string& config_path, uint64_t* seed_override,
                 const std::string& out, const std::string& from_path,
                 const std::string& resume_path, const std::string& log_path) {
  TrainConfig cfg = load_train_config(config_path, seed_override);
  if (cfg.train_data.empty())
    throw std::runtime_error("finetune: config needs train_data");
  std::vector<Scene> train = load_scenes(cfg.train_data);
  std::vector<Scene> heldout;
  if (!cfg.eval_data.empty()) heldout = load_scenes(cfg.eval_data);

  std::ofstream log_file;
  std::ostream* log = &std::cout;
  if (!log_path.empty()) {
    log_file.open(log_path);
    if (!log_file) throw std::runtime_error("cannot write " + log_path);
    log = &log_file;
  }

  Checkpoint from;
  const Checkpoint* from_ptr = nullptr;
  if (!from_path.empty()) {
    from = load_kind(from_path, "pretrain",
                     "--from expects the pre-training checkpoint to transfer");
    from_ptr = &from;
  }
  Checkpoint resume;
  const Checkpoint* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resume = load_kind(resume_path, "finetune",
                       "pass a fine-tuning checkpoint to --resume");
    resume_ptr = &resume;
  }

  FinetuneRun run = run_finetune(cfg, train, heldout, from_ptr, log, resume_ptr);
  if (!out.empty()) {
    Checkpoint ck;
    ck.kind = "finetune";
    ck.config = cfg;
    ck.epochs_done = run.epochs_done;
    ck.params = run.params;
    ck.optim = run.optim;
    ck.has_optim = true;
    save_checkpoint(out, ck);
  }

  json summary;
  summary["command"] = "finetune";
  summary["seed"] = cfg.seed;
  summary["config"] = provenance(cfg);
  summary["epochs_done"] = run.epochs_done;
  summary["steps"] = run.steps.size();
  summary["transferred"] = run.transfer.transferred.size();
  summary["fresh"] = run.transfer.fresh.size();
  if (!run.steps.empty()) summary["final_total"] = run.steps.back().total;
  if (!run.eval_history.empty()) summary["eval"] = metrics_json(run.eval_history.back());
  if (!out.empty()) summary["checkpoint"] = out;
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             double tau, const std::string& out) {
  Checkpoint ck = load_kind(ckpt_path, "finetune",
                            "evaluation needs the multi-world generator; run "
                            "'mwf finetune' first");
  std::vector<Scene> scenes = load_scenes(data_path);
  double use_tau = tau > 0 ? tau : ck.config.tau;
  DatasetMetrics m = evaluate_dataset(ck.params, scenes, use_tau);

  json report = metrics_json(m);
  report["command"] = "eval";
  report["seed"] = ck.config.seed;
  report["config"] = provenance(ck.config);
  report["data"] = data_path;
  emit(report, out);
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& data_path,
                const std::string& out) {
  Checkpoint ck = load_kind(ckpt_path, "finetune",
                            "prediction needs the multi-world generator; run "
                            "'mwf finetune' first");
  std::vector<Scene> scenes = load_scenes(data_path);

  json report;
  report["command"] = "predict";
  report["seed"] = ck.config.seed;
  report["config"] = provenance(ck.config);
  report["data"] = data_path;
  json out_scenes = json::array();
  for (size_t i = 0; i < scenes.size(); ++i) {
    std::vector<double> scores;
    WorldSet worlds = predict_worlds(ck.params, scenes[i], &scores);
    json ws = json::array();
    for (const auto& world : worlds) {
      json agents = json::array();
      for (const auto& track : world) {
        json pts = json::array();
        for (const Vec2& p : track) pts.push_back({p.x, p.y});
        agents.push_back(std::move(pts));
      }
      ws.push_back(std::move(agents));
    }
    out_scenes.push_back(
        {{"index", i}, {"scores", scores}, {"worlds", std::move(ws)}});
  }
  report["scenes"] = std::move(out_scenes);
  emit(report, out);
  return 0;
}

int cmd_reconstruct(const std::string& ckpt_path, const std::string& scene_path,
                    uint64_t seed, bool block, const std::string& out) {
  Checkpoint ck = load_kind(ckpt_path, "pretrain",
                            "the reconstruction heads are trained during "
                            "pre-training; pass a pre-training checkpoint");
  Scene scene = load_scene(scene_path);
  const ModelConfig& mc = ck.config.model;
  if (scene.horizon_history != mc.t_history || scene.horizon_future != mc.t_future)
    throw std::runtime_error("reconstruct: scene horizons " +
                             std::to_string(scene.horizon_history) + "+" +
                             std::to_string(scene.horizon_future) +
                             " do not match the checkpoint model " +
                             std::to_string(mc.t_history) + "+" +
                             std::to_string(mc.t_future));
  for (const LaneSegment& l : scene.lanes)
    if (static_cast<int>(l.waypoints.size()) != mc.lane_waypoints)
      throw std::runtime_error(
          "reconstruct: every lane needs exactly " +
          std::to_string(mc.lane_waypoints) + " waypoints for this checkpoint");

  EgoFrame frame = ego_frame_of(scene);
  Scene norm = normalize_scene(scene);
  RngState mask_rng(seed);
  MaskPlan plan = make_mask_plan(norm, mc.ratios, mask_rng,
                                 block ? MaskMode::block : MaskMode::iid);
  auto [vis, msk] = split_tokens(norm, plan);

  NoGradScope frozen;
  TokenBatch visible = assemble_tokens(ck.params.embed, ck.params.pe, mc.max_agents,
                                       mc.max_lanes, norm, vis, false);
  TokenBatch masked = assemble_tokens(ck.params.embed, ck.params.pe, mc.max_agents,
                                      mc.max_lanes, norm, msk, true);
  Tensor e_v = encode(ck.params, visible);
  Tensor r_m = regress_masked(ck.params, e_v, masked);
  SpatialDecode sd = decode_spatial(ck.params, r_m, masked);

  double c = std::cos(frame.heading), s = std::sin(frame.heading);
  auto to_raw = [&](double x, double y) {
    return json{x * c - y * s + frame.origin.x, x * s + y * c + frame.origin.y};
  };

  json mask_j, recon_j;
  double l1_sum = 0.0;
  int64_t l1_n = 0;
  json hist_idx = json::array(), fut_idx = json::array(), lane_idx = json::array();
  json hist_rec = json::array(), fut_rec = json::array(), lane_rec = json::array();
  for (int n = 0; n < scene.num_agents(); ++n) {
    json hi = json::array(), hr = json::array();
    json fi = json::array(), fr = json::array();
    int seen_h = 0, seen_f = 0;
    for (int t = 0; t < norm.horizon_history; ++t)
      if (plan.history[static_cast<size_t>(n)][static_cast<size_t>(t)]) {
        hi.push_back(t);
        double x = sd.hist.at(n, 2 * seen_h), y = sd.hist.at(n, 2 * seen_h + 1);
        hr.push_back(to_raw(x, y));
        const Vec2& truth = scene.agents[static_cast<size_t>(n)]
                                .positions[static_cast<size_t>(t)];
        l1_sum += std::abs(hr.back()[0].get<double>() - truth.x) +
                  std::abs(hr.back()[1].get<double>() - truth.y);
        l1_n += 2;
        ++seen_h;
      }
    for (int t = 0; t < norm.horizon_future; ++t)
      if (plan.future[static_cast<size_t>(n)][static_cast<size_t>(t)]) {
        fi.push_back(t);
        double x = sd.fut.at(n, 2 * seen_f), y = sd.fut.at(n, 2 * seen_f + 1);
        fr.push_back(to_raw(x, y));
        const Vec2& truth =
            scene.agents[static_cast<size_t>(n)]
                .positions[static_cast<size_t>(norm.horizon_history + t)];
        l1_sum += std::abs(fr.back()[0].get<double>() - truth.x) +
                  std::abs(fr.back()[1].get<double>() - truth.y);
        l1_n += 2;
        ++seen_f;
      }
    hist_idx.push_back(std::move(hi));
    hist_rec.push_back(std::move(hr));
    fut_idx.push_back(std::move(fi));
    fut_rec.push_back(std::move(fr));
  }
  for (int z = 0; z < scene.num_lanes(); ++z) {
    json li = json::array(), lr = json::array();
    int seen = 0;
    for (int w = 0; w < mc.lane_waypoints; ++w)
      if (plan.lanes[static_cast<size_t>(z)][static_cast<size_t>(w)]) {
        li.push_back(w);
        double x = sd.lane.at(z, 2 * seen), y = sd.lane.at(z, 2 * seen + 1);
        lr.push_back(to_raw(x, y));
        const Vec2& truth =
            scene.lanes[static_cast<size_t>(z)].waypoints[static_cast<size_t>(w)];
        l1_sum += std::abs(lr.back()[0].get<double>() - truth.x) +
                  std::abs(lr.back()[1].get<double>() - truth.y);
        l1_n += 2;
        ++seen;
      }
    lane_idx.push_back(std::move(li));
    lane_rec.push_back(std::move(lr));
  }
  mask_j["history"] = std::move(hist_idx);
  mask_j["future"] = std::move(fut_idx);
  mask_j["lanes"] = std::move(lane_idx);
  mask_j["mode"] = block ? "block" : "iid";
  recon_j["history"] = std::move(hist_rec);
  recon_j["future"] = std::move(fut_rec);
  recon_j["lanes"] = std::move(lane_rec);

  json report;
  report["command"] = "reconstruct";
  report["seed"] = seed;
  report["config"] = provenance(ck.config);
  report["original"] = json::parse(scene_to_json(scene));
  report["mask"] = std::move(mask_j);
  report["reconstruction"] = std::move(recon_j);
  report["mean_l1"] = l1_n > 0 ? l1_sum / static_cast<double>(l1_n) : 0.0;
  emit(report, out);
  return 0;
}

int cmd_compare(const std::string& config_path, uint64_t* seed_override,
                const std::string& ft_config_path, const std::string& pre_path,
                const std::string& fine_path, const std::string& held_path,
                std::vector<uint64_t> seeds, const std::string& out,
                const std::string& log_path) {
  TrainConfig cfg = load_train_config(config_path, seed_override);
  TrainConfig ft_cfg;
  const TrainConfig* ft_ptr = nullptr;
  if (!ft_config_path.empty()) {
    ft_cfg = load_train_config(ft_config_path, seed_override);
    ft_ptr = &ft_cfg;
  }
  std::vector<Scene> pre = load_scenes(pre_path);
  std::vector<Scene> fine = load_scenes(fine_path);
  std::vector<Scene> held = load_scenes(held_path);

  std::ofstream log_file;
  std::ostream* log = nullptr;
  if (!log_path.empty()) {
    log_file.open(log_path);
    if (!log_file) throw std::runtime_error("cannot write " + log_path);
    log = &log_file;
  }

  CompareOutcome outcome =
      compare_pretrain_vs_scratch(cfg, pre, fine, held, seeds, log, ft_ptr);

  auto mean_spread = [&](auto pick) {
    double sum = 0.0;
    for (const auto& so : outcome.per_seed) sum += pick(so);
    double mean = sum / static_cast<double>(outcome.per_seed.size());
    double var = 0.0;
    for (const auto& so : outcome.per_seed) {
      double d = pick(so) - mean;
      var += d * d;
    }
    var /= static_cast<double>(outcome.per_seed.size());
    return json{{"mean", mean}, {"spread", std::sqrt(var)}};
  };

  json report;
  report["command"] = "compare";
  report["config"] = provenance(cfg);
  report["seeds"] = seeds;
  json per_seed = json::array();
  for (const auto& so : outcome.per_seed) {
    json row;
    row["seed"] = so.seed;
    row["pretrained"] = metrics_json(so.pretrained);
    row["scratch"] = metrics_json(so.scratch);
    per_seed.push_back(std::move(row));
  }
  report["per_seed"] = std::move(per_seed);
  report["pretrained_wins"] = outcome.pretrained_wins;
  report["n_seeds"] = outcome.per_seed.size();
  report["pretrained_avg_min_fde"] =
      mean_spread([](const CompareSeedOutcome& s) { return s.pretrained.avg_min_fde; });
  report["scratch_avg_min_fde"] =
      mean_spread([](const CompareSeedOutcome& s) { return s.scratch.avg_min_fde; });
  report["pretrained_avg_min_ade"] =
      mean_spread([](const CompareSeedOutcome& s) { return s.pretrained.avg_min_ade; });
  report["scratch_avg_min_ade"] =
      mean_spread([](const CompareSeedOutcome& s) { return s.scratch.avg_min_ade; });
  report["pretrained_actor_mr"] =
      mean_spread([](const CompareSeedOutcome& s) { return s.pretrained.actor_mr; });
  report["scratch_actor_mr"] =
      mean_spread([](const CompareSeedOutcome& s) { return s.scratch.actor_mr; });
  emit(report, out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-world motion forecasting: data, training, evaluation"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate synthetic scenario files");
  std::string gen_out;
  int gen_count = 16;
  uint64_t gen_seed = 0;
  SceneGenConfig gcfg;
  gen->add_option("--out", gen_out, "output scenario file (json lines)")->required();
  gen->add_option("--count", gen_count, "number of scenes");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--agents-min", gcfg.n_agents_min, "minimum agents per scene");
  gen->add_option("--agents-max", gcfg.n_agents_max, "maximum agents per scene");
  gen->add_option("--lanes-min", gcfg.n_lanes_min, "minimum lane segments");
  gen->add_option("--lanes-max", gcfg.n_lanes_max, "maximum lane segments");
  gen->add_option("--t-history", gcfg.t_history, "observed steps at 10 Hz");
  gen->add_option("--t-future", gcfg.t_future, "future steps at 10 Hz");
  gen->add_option("--waypoints", gcfg.lane_waypoints, "waypoints per lane");
  gen->add_option("--spacing", gcfg.waypoint_spacing, "waypoint spacing, meters");
  gen->add_option("--speed-min", gcfg.speed_min, "minimum cruise speed, m/s");
  gen->add_option("--speed-max", gcfg.speed_max, "maximum cruise speed, m/s");
  gen->add_option("--noise", gcfg.noise_scale, "lateral jitter amplitude, meters");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "run the self-supervised stage");
  std::string pre_config, pre_out, pre_resume, pre_log;
  uint64_t pre_seed = 0;
  pre->add_option("--config", pre_config, "train config json")
      ->envname("MWF_CONFIG")
      ->required();
  pre->add_option("--seed", pre_seed, "override the config seed");
  pre->add_option("--out", pre_out, "write the final checkpoint here");
  pre->add_option("--resume", pre_resume, "resume from an epoch checkpoint");
  pre->add_option("--log", pre_log, "write the step log here instead of stdout");

  // finetune
  auto* fine = app.add_subcommand("finetune", "train the multi-world generator");
  std::string fine_config, fine_out, fine_from, fine_resume, fine_log;
  uint64_t fine_seed = 0;
  fine->add_option("--config", fine_config, "train config json")
      ->envname("MWF_CONFIG")
      ->required();
  fine->add_option("--seed", fine_seed, "override the config seed");
  fine->add_option("--out", fine_out, "write the final checkpoint here");
  fine->add_option("--from", fine_from, "pre-training checkpoint to transfer");
  fine->add_option("--resume", fine_resume, "resume from an epoch checkpoint");
  fine->add_option("--log", fine_log, "write the step log here instead of stdout");

  // eval
  auto* eval = app.add_subcommand("eval", "score a fine-tuned model on a dataset");
  std::string eval_ckpt, eval_data, eval_out;
  double eval_tau = -1.0;
  eval->add_option("--checkpoint", eval_ckpt, "fine-tuned checkpoint")->required();
  eval->add_option("--data", eval_data, "scenario file to score")->required();
  eval->add_option("--tau", eval_tau, "miss threshold, meters (default: config)");
  eval->add_option("--out", eval_out, "write the metrics report here");

  // predict
  auto* pred = app.add_subcommand("predict", "export multi-world predictions");
  std::string pred_ckpt, pred_data, pred_out;
  pred->add_option("--checkpoint", pred_ckpt, "fine-tuned checkpoint")->required();
  pred->add_option("--data", pred_data, "scenario file to predict")->required();
  pred->add_option("--out", pred_out, "write the prediction export here");

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct",
                                 "export original / mask / reconstruction views");
  std::string rec_ckpt, rec_scene, rec_out;
  uint64_t rec_seed = 0;
  bool rec_block = false;
  rec->add_option("--checkpoint", rec_ckpt, "pre-training checkpoint")->required();
  rec->add_option("--scene", rec_scene, "single-scene json file")->required();
  rec->add_option("--seed", rec_seed, "mask draw seed");
  rec->add_flag("--block", rec_block, "contiguous-run masking");
  rec->add_option("--out", rec_out, "write the trace here");

  // compare
  auto* cmp = app.add_subcommand("compare",
                                 "pretrained versus scratch initialization");
  std::string cmp_config, cmp_pre, cmp_fine, cmp_held, cmp_out, cmp_log;
  uint64_t cmp_seed = 0;
  std::vector<uint64_t> cmp_seeds = {1, 2, 3};
  cmp->add_option("--config", cmp_config, "train config json")
      ->envname("MWF_CONFIG")
      ->required();
  std::string cmp_ft_config;
  cmp->add_option("--finetune-config", cmp_ft_config,
                  "separate schedule for the fine-tune stage (same model)");
  cmp->add_option("--seed", cmp_seed, "override the config seed");
  cmp->add_option("--pretrain-data", cmp_pre, "pre-training split")->required();
  cmp->add_option("--finetune-data", cmp_fine, "fine-tuning split")->required();
  cmp->add_option("--heldout-data", cmp_held, "held-out split")->required();
  cmp->add_option("--seeds", cmp_seeds, "comma-separated run seeds")->delimiter(',');
  cmp->add_option("--out", cmp_out, "write the comparison report here");
  cmp->add_option("--log", cmp_log, "write step logs here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << json{{"error", e.what()}}.dump() << "\n";
    return 1;
  }

  try {
    if (*gen) return cmd_gen_data(gen_out, gen_count, gen_seed, gcfg);
    if (*pre) {
      uint64_t* s = pre->count("--seed") ? &pre_seed : nullptr;
      return cmd_pretrain(pre_config, s, pre_out, pre_resume, pre_log);
    }
    if (*fine) {
      uint64_t* s = fine->count("--seed") ? &fine_seed : nullptr;
      return cmd_finetune(fine_config, s, fine_out, fine_from, fine_resume,
                          fine_log);
    }
    if (*eval) return cmd_eval(eval_ckpt, eval_data, eval_tau, eval_out);
    if (*pred) return cmd_predict(pred_ckpt, pred_data, pred_out);
    if (*rec)
      return cmd_reconstruct(rec_ckpt, rec_scene, rec_seed, rec_block, rec_out);
    if (*cmp) {
      uint64_t* s = cmp->count("--seed") ? &cmp_seed : nullptr;
      return cmd_compare(cmp_config, s, cmp_ft_config, cmp_pre, cmp_fine,
                         cmp_held, cmp_seeds, cmp_out, cmp_log);
    }
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}}.dump() << "\n";
    return 1;
  }
  return 1;
}

#include "mwf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"

namespace mwf {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration serialization
// ---------------------------------------------------------------------------

namespace {

json model_config_to_json(const ModelConfig& m) {
  json j;
  j["d"] = m.d;
  j["heads"] = m.heads;
  j["depth_encoder"] = m.depth_encoder;
  j["depth_regressor"] = m.depth_regressor;
  j["depth_spatial"] = m.depth_spatial;
  j["depth_motion"] = m.depth_motion;
  j["k_modes"] = m.k_modes;
  j["max_agents"] = m.max_agents;
  j["max_lanes"] = m.max_lanes;
  j["t_history"] = m.t_history;
  j["t_future"] = m.t_future;
  j["lane_waypoints"] = m.lane_waypoints;
  j["dropout"] = m.dropout;
  j["ratios"] = {{"r1", m.ratios.r1}, {"r2", m.ratios.r2}, {"r3", m.ratios.r3}};
  j["use_alignment"] = m.use_alignment;
  j["use_spatial"] = m.use_spatial;
  j["use_motion"] = m.use_motion;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  m.d = j.at("d").get<int>();
  m.heads = j.at("heads").get<int>();
  m.depth_encoder = j.at("depth_encoder").get<int>();
  m.depth_regressor = j.at("depth_regressor").get<int>();
  m.depth_spatial = j.at("depth_spatial").get<int>();
  m.depth_motion = j.at("depth_motion").get<int>();
  m.k_modes = j.at("k_modes").get<int>();
  m.max_agents = j.at("max_agents").get<int>();
  m.max_lanes = j.at("max_lanes").get<int>();
  m.t_history = j.at("t_history").get<int>();
  m.t_future = j.at("t_future").get<int>();
  m.lane_waypoints = j.at("lane_waypoints").get<int>();
  m.dropout = j.at("dropout").get<double>();
  m.ratios.r1 = j.at("ratios").at("r1").get<double>();
  m.ratios.r2 = j.at("ratios").at("r2").get<double>();
  m.ratios.r3 = j.at("ratios").at("r3").get<double>();
  m.use_alignment = j.at("use_alignment").get<bool>();
  m.use_spatial = j.at("use_spatial").get<bool>();
  m.use_motion = j.at("use_motion").get<bool>();
  return m;
}

json train_config_to_json_obj(const TrainConfig& cfg) {
  json j;
  j["model"] = model_config_to_json(cfg.model);
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["weight_decay"] = cfg.weight_decay;
  j["alpha"] = cfg.alpha;
  j["grad_clip"] = cfg.grad_clip;
  j["tau"] = cfg.tau;
  j["cosine_lr"] = cfg.cosine_lr;
  j["mask_mode"] = cfg.mask_mode == MaskMode::block ? "block" : "iid";
  j["seed"] = cfg.seed;
  j["train_data"] = cfg.train_data;
  j["eval_data"] = cfg.eval_data;
  j["checkpoint_dir"] = cfg.checkpoint_dir;
  return j;
}

TrainConfig train_config_from_json_obj(const json& j) {
  TrainConfig cfg;
  cfg.model = model_config_from_json(j.at("model"));
  cfg.epochs = j.at("epochs").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.lr = j.at("lr").get<double>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.alpha = j.at("alpha").get<double>();
  cfg.grad_clip = j.at("grad_clip").get<double>();
  cfg.tau = j.at("tau").get<double>();
  cfg.cosine_lr = j.at("cosine_lr").get<bool>();
  std::string mode = j.at("mask_mode").get<std::string>();
  if (mode != "iid" && mode != "block")
    throw std::runtime_error("train config: mask_mode must be 'iid' or 'block'");
  cfg.mask_mode = mode == "block" ? MaskMode::block : MaskMode::iid;
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.train_data = j.value("train_data", std::string());
  cfg.eval_data = j.value("eval_data", std::string());
  cfg.checkpoint_dir = j.value("checkpoint_dir", std::string());
  return cfg;
}

}  // namespace

std::string train_config_to_json(const TrainConfig& cfg) {
  return train_config_to_json_obj(cfg).dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  return train_config_from_json_obj(json::parse(text));
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

std::vector<BatchSpec> batch_scenes(const std::vector<Scene>& scenes,
                                    const std::vector<size_t>& order,
                                    int batch_size) {
  if (batch_size < 1)
    throw std::invalid_argument("batch_scenes: batch_size must be >= 1");
  for (size_t i : order)
    if (i >= scenes.size())
      throw std::invalid_argument("batch_scenes: index " + std::to_string(i) +
                                  " out of range");
  std::vector<BatchSpec> batches;
  for (size_t at = 0; at < order.size(); at += static_cast<size_t>(batch_size)) {
    BatchSpec b;
    size_t end = std::min(order.size(), at + static_cast<size_t>(batch_size));
    for (size_t i = at; i < end; ++i) {
      size_t idx = order[i];
      b.indices.push_back(idx);
      b.padded_agents = std::max(b.padded_agents, scenes[idx].num_agents());
      b.padded_lanes = std::max(b.padded_lanes, scenes[idx].num_lanes());
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

// Complete parameter set regardless of stage or ablation switches, so a saved
// model can be reopened for either stage.
std::vector<NamedParam> checkpoint_params(ModelParams& p) {
  ModelConfig saved = p.config;
  p.config.use_spatial = true;
  p.config.use_motion = true;
  std::vector<NamedParam> all = named_params(p, Stage::pretrain);
  p.config = saved;
  for (auto& np : named_params(p, Stage::finetune)) {
    bool seen = false;
    for (const auto& have : all)
      if (have.name == np.name) {
        seen = true;
        break;
      }
    if (!seen) all.push_back(np);
  }
  return all;
}

Stage stage_of_kind(const std::string& kind) {
  if (kind == "pretrain") return Stage::pretrain;
  if (kind == "finetune") return Stage::finetune;
  throw std::runtime_error("checkpoint: unknown kind '" + kind + "'");
}

// Tensor handles share storage, so a plain struct copy would let training
// mutate the source checkpoint. Fresh storage, values copied by name.
ModelParams deep_copy_params(const ModelParams& src) {
  RngState rng(0);
  ModelParams dst = init_model_params(src.config, rng);
  ModelParams view = src;
  std::vector<NamedParam> from = checkpoint_params(view);
  for (auto& d : checkpoint_params(dst)) {
    for (const auto& s : from)
      if (s.name == d.name) {
        for (int64_t i = 0; i < d.tensor.size(); ++i) d.tensor.set(i, s.tensor.at(i));
        break;
      }
  }
  return dst;
}

}  // namespace

void save_checkpoint(const std::string& path, Checkpoint& ck) {
  stage_of_kind(ck.kind);
  json j;
  j["version"] = 1;
  j["kind"] = ck.kind;
  j["config"] = train_config_to_json_obj(ck.config);
  j["epochs_done"] = ck.epochs_done;
  json params = json::object();
  for (auto& np : checkpoint_params(ck.params)) {
    params[np.name] = {{"shape", np.tensor.shape()}, {"data", np.tensor.values()}};
  }
  j["params"] = std::move(params);
  if (ck.has_optim) {
    std::vector<NamedParam> reg = named_params(ck.params, stage_of_kind(ck.kind));
    if (reg.size() != ck.optim.m.size() || reg.size() != ck.optim.v.size())
      throw std::runtime_error("checkpoint: optimizer snapshot does not cover the "
                               "trainable set");
    json m = json::object(), v = json::object();
    for (size_t i = 0; i < reg.size(); ++i) {
      m[reg[i].name] = ck.optim.m[i];
      v[reg[i].name] = ck.optim.v[i];
    }
    j["optim"] = {{"t", ck.optim.steps}, {"m", std::move(m)}, {"v", std::move(v)}};
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out << j.dump() << "\n";
  if (!out.good()) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("checkpoint: " + path + ": " + e.what());
  }
  Checkpoint ck;
  ck.kind = j.at("kind").get<std::string>();
  Stage stage = stage_of_kind(ck.kind);
  ck.config = train_config_from_json_obj(j.at("config"));
  ck.epochs_done = j.at("epochs_done").get<int>();

  RngState init_rng(0);
  ck.params = init_model_params(ck.config.model, init_rng);
  const json& stored = j.at("params");
  for (auto& np : checkpoint_params(ck.params)) {
    auto it = stored.find(np.name);
    if (it == stored.end())
      throw std::runtime_error("checkpoint: missing parameter '" + np.name + "'");
    std::vector<int> shape = it->at("shape").get<std::vector<int>>();
    if (shape != np.tensor.shape())
      throw std::runtime_error("checkpoint: parameter '" + np.name + "' shape " +
                               shape_str(shape) + " does not match expected " +
                               shape_str(np.tensor.shape()));
    std::vector<double> data = it->at("data").get<std::vector<double>>();
    if (static_cast<int64_t>(data.size()) != np.tensor.size())
      throw std::runtime_error("checkpoint: parameter '" + np.name +
                               "' has the wrong element count");
    for (int64_t i = 0; i < np.tensor.size(); ++i) np.tensor.set(i, data[static_cast<size_t>(i)]);
  }

  if (j.contains("optim")) {
    const json& o = j.at("optim");
    ck.optim.steps = o.at("t").get<int64_t>();
    std::vector<NamedParam> reg = named_params(ck.params, stage);
    for (const auto& np : reg) {
      if (!o.at("m").contains(np.name) || !o.at("v").contains(np.name))
        throw std::runtime_error("checkpoint: optimizer state missing for '" +
                                 np.name + "'");
      ck.optim.m.push_back(o.at("m").at(np.name).get<std::vector<double>>());
      ck.optim.v.push_back(o.at("v").at(np.name).get<std::vector<double>>());
    }
    ck.has_optim = true;
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Shared training plumbing
// ---------------------------------------------------------------------------

namespace {

constexpr uint64_t kOrderStream = 1;
constexpr uint64_t kMaskStream = 2;
constexpr uint64_t kDropStream = 3;
constexpr uint64_t kInitStream = 4;

std::vector<size_t> epoch_order(size_t n, const RngState& master, int epoch) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  RngState rng = master.derive(kOrderStream, static_cast<uint64_t>(epoch));
  rng.shuffle(order);
  return order;
}

double lr_at(const TrainConfig& cfg, int64_t step, int64_t total_steps) {
  if (!cfg.cosine_lr || total_steps <= 1) return cfg.lr;
  double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, frac)));
}

void check_schedule(const TrainConfig& cfg, size_t n_scenes, const char* what) {
  if (cfg.epochs < 0)
    throw std::invalid_argument(std::string(what) + ": epochs must be >= 0");
  if (cfg.batch_size < 1)
    throw std::invalid_argument(std::string(what) + ": batch_size must be >= 1");
  if (cfg.lr <= 0) throw std::invalid_argument(std::string(what) + ": lr must be > 0");
  if (cfg.alpha < 0)
    throw std::invalid_argument(std::string(what) + ": alpha must be >= 0");
  if (cfg.epochs > 0 && n_scenes == 0)
    throw std::invalid_argument(std::string(what) + ": no training scenes");
}

AdamConfig adam_config(const TrainConfig& cfg) {
  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.weight_decay = cfg.weight_decay;
  return ac;
}

OptimSnapshot snapshot_of(const AdamState& opt) {
  OptimSnapshot s;
  s.m = opt.moment1();
  s.v = opt.moment2();
  s.steps = opt.step_count();
  return s;
}

std::string checkpoint_file(const TrainConfig& cfg, const std::string& kind,
                            int epoch) {
  std::filesystem::create_directories(cfg.checkpoint_dir);
  return (std::filesystem::path(cfg.checkpoint_dir) /
          (kind + "_epoch" + std::to_string(epoch) + ".json"))
      .string();
}

Scene normalized_copy(const Scene& scene) {
  return scene.frame == Frame::raw ? normalize_scene(scene) : scene;
}

double clip_and_report(AdamState& opt, double max_norm, bool* clipped) {
  if (max_norm <= 0) {
    *clipped = false;
    return opt.clip_global_norm(std::numeric_limits<double>::infinity());
  }
  double norm = opt.clip_global_norm(max_norm);
  *clipped = norm > max_norm;
  return norm;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pre-training
// ---------------------------------------------------------------------------

PretrainRun run_pretrain(const TrainConfig& cfg, const std::vector<Scene>& train,
                         std::ostream* log, const Checkpoint* resume) {
  check_schedule(cfg, train.size(), "pretrain");
  bool align_on = cfg.model.use_alignment && cfg.alpha > 0.0;
  if (!align_on && !cfg.model.use_spatial && !cfg.model.use_motion)
    throw std::invalid_argument(
        "pretrain: all objectives disabled (alignment off or alpha 0, spatial off, "
        "motion off); nothing to train");

  RngState master(cfg.seed);
  PretrainRun run;
  int start_epoch = 0;
  if (resume) {
    if (resume->kind != "pretrain")
      throw std::invalid_argument("pretrain: resume checkpoint has kind '" +
                                  resume->kind + "'");
    run.params = deep_copy_params(resume->params);
    run.params.config = cfg.model;
    start_epoch = resume->epochs_done;
  } else {
    RngState init = master.derive(kInitStream);
    run.params = init_model_params(cfg.model, init);
  }

  AdamState opt(named_params(run.params, Stage::pretrain), adam_config(cfg));
  if (resume && resume->has_optim)
    opt.restore(resume->optim.m, resume->optim.v, resume->optim.steps);

  int64_t batches_per_epoch =
      static_cast<int64_t>((train.size() + static_cast<size_t>(cfg.batch_size) - 1) /
                           static_cast<size_t>(cfg.batch_size));
  int64_t total_steps = batches_per_epoch * cfg.epochs;

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order = epoch_order(train.size(), master, epoch);
    std::vector<BatchSpec> batches = batch_scenes(train, order, cfg.batch_size);
    for (size_t b = 0; b < batches.size(); ++b) {
      const BatchSpec& batch = batches[b];
      int64_t step = epoch * batches_per_epoch + static_cast<int64_t>(b);
      RngState mask_rng = master.derive(kMaskStream, static_cast<uint64_t>(epoch),
                                        static_cast<uint64_t>(b));
      RngState drop_rng = master.derive(kDropStream, static_cast<uint64_t>(epoch),
                                        static_cast<uint64_t>(b));
      EncodeOptions train_opt;
      train_opt.training = true;
      train_opt.rng = &drop_rng;

      Tape tape;
      TapeScope scope(tape);
      Tensor batch_total;
      PretrainLossReport report;
      for (size_t idx : batch.indices) {
        Scene scene = normalized_copy(train[idx]);
        MaskPlan plan = make_mask_plan(scene, cfg.model.ratios, mask_rng,
                                       cfg.mask_mode);
        auto [vis, msk] = split_tokens(scene, plan);
        TokenBatch visible =
            assemble_tokens(run.params.embed, run.params.pe, cfg.model.max_agents,
                            cfg.model.max_lanes, scene, vis, false,
                            batch.padded_agents, batch.padded_lanes);
        Tensor e_v = encode(run.params, visible, train_opt);

        // target branch: same weights, no recording, deterministic forward
        TokenBatch masked;
        Tensor e_m;
        {
          NoGradScope frozen;
          masked = assemble_tokens(run.params.embed, run.params.pe,
                                   cfg.model.max_agents, cfg.model.max_lanes,
                                   scene, msk, true, batch.padded_agents,
                                   batch.padded_lanes);
          e_m = encode(run.params, masked, EncodeOptions{});
        }

        Tensor r_m = regress_masked(run.params, e_v, masked, train_opt);
        PretrainTargets targets = build_pretrain_targets(
            scene, plan, cfg.model, batch.padded_agents, batch.padded_lanes);

        Tensor l_align;
        if (align_on) {
          l_align = alignment_loss(r_m, e_m, masked.valid);
        } else {
          NoGradScope frozen;
          l_align = alignment_loss(r_m, e_m, masked.valid);
        }
        Tensor l_spatial, l_motion;
        if (cfg.model.use_spatial) {
          SpatialDecode sd = decode_spatial(run.params, r_m, masked, train_opt);
          l_spatial = spatial_loss(sd, targets);
        }
        if (cfg.model.use_motion) {
          MotionDecode md = decode_motion(run.params, r_m, masked, train_opt);
          l_motion = motion_loss(md, targets);
        }
        Tensor total = pretrain_total(align_on ? l_align : Tensor{}, l_spatial,
                                      l_motion, align_on ? cfg.alpha : 0.0);
        batch_total = batch_total.defined() ? add(batch_total, total) : total;

        report.l_align += l_align.item();
        report.l_spatial += cfg.model.use_spatial ? l_spatial.item() : 0.0;
        report.l_motion += cfg.model.use_motion ? l_motion.item() : 0.0;
      }
      double inv = 1.0 / static_cast<double>(batch.indices.size());
      batch_total = scale(batch_total, inv);
      report.l_align *= inv;
      report.l_spatial *= inv;
      report.l_motion *= inv;
      report.total = batch_total.item();
      report.alpha = align_on ? cfg.alpha : 0.0;

      if (!std::isfinite(report.total))
        throw std::runtime_error(
            "pretrain: non-finite loss at epoch " + std::to_string(epoch) +
            " step " + std::to_string(step) + " (l_align=" +
            std::to_string(report.l_align) + ", l_spatial=" +
            std::to_string(report.l_spatial) + ", l_motion=" +
            std::to_string(report.l_motion) + "); lower the learning rate");

      tape.backward(batch_total);
      bool clipped = false;
      double grad_norm = clip_and_report(opt, cfg.grad_clip, &clipped);
      double lr = lr_at(cfg, step, total_steps);
      opt.step(lr);
      opt.zero_grads();

      run.steps.push_back(report);
      if (log) {
        json line;
        line["step"] = step;
        line["epoch"] = epoch;
        line["l_align"] = report.l_align;
        line["l_spatial"] = report.l_spatial;
        line["l_motion"] = report.l_motion;
        line["total"] = report.total;
        line["lr"] = lr;
        line["grad_norm"] = grad_norm;
        line["clipped"] = clipped;
        *log << line.dump() << "\n";
      }
    }
    run.epochs_done = epoch + 1;
    if (!cfg.checkpoint_dir.empty()) {
      Checkpoint ck;
      ck.kind = "pretrain";
      ck.config = cfg;
      ck.epochs_done = run.epochs_done;
      ck.params = run.params;
      ck.optim = snapshot_of(opt);
      ck.has_optim = true;
      std::string path = checkpoint_file(cfg, "pretrain", run.epochs_done);
      save_checkpoint(path, ck);
      run.checkpoints.push_back(path);
    }
  }
  run.optim = snapshot_of(opt);
  if (run.epochs_done < start_epoch) run.epochs_done = start_epoch;
  return run;
}

// ---------------------------------------------------------------------------
// Fine-tuning
// ---------------------------------------------------------------------------

namespace {

bool transferable(const std::string& name) {
  return name.rfind("embed.", 0) == 0 || name.rfind("encoder.", 0) == 0 ||
         name.rfind("pe.", 0) == 0;
}

TransferReport transfer_trunk(ModelParams& dst, const Checkpoint& src) {
  ModelParams donor = src.params;  // shares storage with src tensors
  std::vector<NamedParam> donor_reg = checkpoint_params(donor);
  TransferReport report;
  for (auto& np : named_params(dst, Stage::finetune)) {
    if (!transferable(np.name)) {
      report.fresh.push_back(np.name);
      continue;
    }
    const NamedParam* found = nullptr;
    for (const auto& d : donor_reg)
      if (d.name == np.name) {
        found = &d;
        break;
      }
    if (!found)
      throw std::invalid_argument("transfer: checkpoint lacks parameter '" +
                                  np.name + "'");
    if (found->tensor.shape() != np.tensor.shape())
      throw std::invalid_argument(
          "transfer: parameter '" + np.name + "' shape " +
          shape_str(found->tensor.shape()) + " does not match " +
          shape_str(np.tensor.shape()));
    for (int64_t i = 0; i < np.tensor.size(); ++i)
      np.tensor.set(i, found->tensor.at(i));
    report.transferred.push_back(np.name);
  }
  return report;
}

struct SceneTensors {
  TokenBatch batch;
  std::vector<Vec2> last_obs;
  std::vector<uint8_t> is_target;
  Tensor truth;  // [padded_agents, 2*t_future]
};

SceneTensors finetune_inputs(const ModelParams& p, const Scene& scene,
                             int padded_agents, int padded_lanes) {
  SceneTensors st;
  st.batch = assemble_history_tokens(p.embed, p.pe, p.config.max_agents,
                                     p.config.max_lanes, scene, padded_agents,
                                     padded_lanes);
  int pa = st.batch.padded_agents;
  int tf = p.config.t_future;
  if (scene.horizon_future != tf)
    throw std::invalid_argument("finetune: scene future horizon " +
                                std::to_string(scene.horizon_future) +
                                " does not match config " + std::to_string(tf));
  st.last_obs.assign(static_cast<size_t>(pa), Vec2{});
  st.is_target.assign(static_cast<size_t>(pa), 0);
  std::vector<double> truth(static_cast<size_t>(pa) * 2 * tf, 0.0);
  for (int n = 0; n < scene.num_agents(); ++n) {
    const AgentTrack& a = scene.agents[static_cast<size_t>(n)];
    st.last_obs[static_cast<size_t>(n)] =
        a.positions[static_cast<size_t>(scene.horizon_history - 1)];
    st.is_target[static_cast<size_t>(n)] = a.is_target ? 1 : 0;
    for (int t = 0; t < tf; ++t) {
      const Vec2& pt = a.positions[static_cast<size_t>(scene.horizon_history + t)];
      truth[static_cast<size_t>(n) * 2 * tf + 2 * t] = pt.x;
      truth[static_cast<size_t>(n) * 2 * tf + 2 * t + 1] = pt.y;
    }
  }
  st.truth = Tensor::from({pa, 2 * tf}, std::move(truth));
  return st;
}

}  // namespace

FinetuneRun run_finetune(const TrainConfig& cfg, const std::vector<Scene>& train,
                         const std::vector<Scene>& heldout,
                         const Checkpoint* pretrained, std::ostream* log,
                         const Checkpoint* resume) {
  check_schedule(cfg, train.size(), "finetune");

  RngState master(cfg.seed);
  FinetuneRun run;
  int start_epoch = 0;
  if (resume) {
    if (resume->kind != "finetune")
      throw std::invalid_argument("finetune: resume checkpoint has kind '" +
                                  resume->kind + "'");
    run.params = deep_copy_params(resume->params);
    run.params.config = cfg.model;
    start_epoch = resume->epochs_done;
    for (const auto& np : named_params(run.params, Stage::finetune))
      run.transfer.fresh.push_back(np.name);
  } else {
    RngState init = master.derive(kInitStream);
    run.params = init_model_params(cfg.model, init);
    if (pretrained) {
      run.transfer = transfer_trunk(run.params, *pretrained);
    } else {
      for (const auto& np : named_params(run.params, Stage::finetune))
        run.transfer.fresh.push_back(np.name);
    }
  }

  AdamState opt(named_params(run.params, Stage::finetune), adam_config(cfg));
  if (resume && resume->has_optim)
    opt.restore(resume->optim.m, resume->optim.v, resume->optim.steps);

  int64_t batches_per_epoch =
      static_cast<int64_t>((train.size() + static_cast<size_t>(cfg.batch_size) - 1) /
                           static_cast<size_t>(cfg.batch_size));
  int64_t total_steps = batches_per_epoch * cfg.epochs;

  auto eval_now = [&]() {
    if (!heldout.empty())
      run.eval_history.push_back(evaluate_dataset(run.params, heldout, cfg.tau));
  };

  if (cfg.epochs == 0) {
    eval_now();
    run.epochs_done = start_epoch;
    return run;
  }

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order = epoch_order(train.size(), master, epoch);
    std::vector<BatchSpec> batches = batch_scenes(train, order, cfg.batch_size);
    for (size_t b = 0; b < batches.size(); ++b) {
      const BatchSpec& batch = batches[b];
      int64_t step = epoch * batches_per_epoch + static_cast<int64_t>(b);
      RngState drop_rng = master.derive(kDropStream, static_cast<uint64_t>(epoch),
                                        static_cast<uint64_t>(b));
      EncodeOptions train_opt;
      train_opt.training = true;
      train_opt.rng = &drop_rng;

      Tape tape;
      TapeScope scope(tape);
      Tensor batch_total;
      FinetuneLossReport report;
      for (size_t idx : batch.indices) {
        Scene scene = normalized_copy(train[idx]);
        SceneTensors st = finetune_inputs(run.params, scene, batch.padded_agents,
                                          batch.padded_lanes);
        Tensor z_e = encode(run.params, st.batch, train_opt);
        Generation gen = generate(run.params, z_e, st.batch, st.last_obs,
                                  st.is_target, train_opt);
        int k_star = select_winner(gen.worlds, st.truth, st.is_target);
        FinetuneLossReport scene_rep;
        Tensor total = finetune_loss(gen.worlds, gen.logits, st.truth,
                                     st.is_target, k_star, 1.0, &scene_rep);
        batch_total = batch_total.defined() ? add(batch_total, total) : total;
        report.l_huber += scene_rep.l_huber;
        report.l_ce += scene_rep.l_ce;
        report.k_star = scene_rep.k_star;
      }
      double inv = 1.0 / static_cast<double>(batch.indices.size());
      batch_total = scale(batch_total, inv);
      report.l_huber *= inv;
      report.l_ce *= inv;
      report.total = batch_total.item();

      if (!std::isfinite(report.total))
        throw std::runtime_error(
            "finetune: non-finite loss at epoch " + std::to_string(epoch) +
            " step " + std::to_string(step) + " (l_huber=" +
            std::to_string(report.l_huber) + ", l_ce=" +
            std::to_string(report.l_ce) + "); lower the learning rate");

      tape.backward(batch_total);
      bool clipped = false;
      double grad_norm = clip_and_report(opt, cfg.grad_clip, &clipped);
      double lr = lr_at(cfg, step, total_steps);
      opt.step(lr);
      opt.zero_grads();

      run.steps.push_back(report);
      if (log) {
        json line;
        line["step"] = step;
        line["epoch"] = epoch;
        line["l_huber"] = report.l_huber;
        line["l_ce"] = report.l_ce;
        line["total"] = report.total;
        line["lr"] = lr;
        line["grad_norm"] = grad_norm;
        line["clipped"] = clipped;
        *log << line.dump() << "\n";
      }
    }
    run.epochs_done = epoch + 1;
    eval_now();
    if (log && !run.eval_history.empty()) {
      const DatasetMetrics& m = run.eval_history.back();
      json line;
      line["epoch"] = epoch;
      line["eval_avg_min_fde"] = m.avg_min_fde;
      line["eval_avg_min_ade"] = m.avg_min_ade;
      line["eval_actor_mr"] = m.actor_mr;
      *log << line.dump() << "\n";
    }
    if (!cfg.checkpoint_dir.empty()) {
      Checkpoint ck;
      ck.kind = "finetune";
      ck.config = cfg;
      ck.epochs_done = run.epochs_done;
      ck.params = run.params;
      ck.optim = snapshot_of(opt);
      ck.has_optim = true;
      std::string path = checkpoint_file(cfg, "finetune", run.epochs_done);
      save_checkpoint(path, ck);
      run.checkpoints.push_back(path);
    }
  }
  run.optim = snapshot_of(opt);
  if (run.epochs_done < start_epoch) run.epochs_done = start_epoch;
  return run;
}

// ---------------------------------------------------------------------------
// Prediction and evaluation
// ---------------------------------------------------------------------------

WorldSet predict_worlds(const ModelParams& params, const Scene& scene,
                        std::vector<double>* scores) {
  if (scene.frame != Frame::raw)
    throw std::invalid_argument("predict: expects a raw-frame scene");
  EgoFrame frame = ego_frame_of(scene);
  Scene norm = normalize_scene(scene);

  NoGradScope frozen;
  SceneTensors st = finetune_inputs(params, norm, -1, -1);
  Tensor z_e = encode(params, st.batch, EncodeOptions{});
  Generation gen = generate(params, z_e, st.batch, st.last_obs, st.is_target,
                            EncodeOptions{});

  double c = std::cos(frame.heading), s = std::sin(frame.heading);
  int n = scene.num_agents(), tf = params.config.t_future;
  WorldSet worlds(gen.worlds.size());
  for (size_t k = 0; k < gen.worlds.size(); ++k) {
    worlds[k].resize(static_cast<size_t>(n));
    for (int a = 0; a < n; ++a)
      for (int t = 0; t < tf; ++t) {
        double x = gen.worlds[k].at(a, 2 * t);
        double y = gen.worlds[k].at(a, 2 * t + 1);
        worlds[k][static_cast<size_t>(a)].push_back(
            {x * c - y * s + frame.origin.x, x * s + y * c + frame.origin.y});
      }
  }
  if (scores) {
    Tensor probs = softmax_rows(gen.logits);
    scores->assign(probs.data(), probs.data() + probs.size());
  }
  return worlds;
}

DatasetMetrics evaluate_dataset(const ModelParams& params,
                                const std::vector<Scene>& scenes, double tau) {
  if (scenes.empty())
    throw std::invalid_argument("evaluate: no scenes");
  std::vector<SceneMetrics> per_scene;
  per_scene.reserve(scenes.size());
  for (const Scene& scene : scenes) {
    WorldSet worlds = predict_worlds(params, scene);
    FutureTruth truth(static_cast<size_t>(scene.num_agents()));
    std::vector<uint8_t> targets(static_cast<size_t>(scene.num_agents()), 0);
    for (int n = 0; n < scene.num_agents(); ++n) {
      targets[static_cast<size_t>(n)] =
          scene.agents[static_cast<size_t>(n)].is_target ? 1 : 0;
      for (int t = 0; t < scene.horizon_future; ++t)
        truth[static_cast<size_t>(n)].push_back(
            scene.agents[static_cast<size_t>(n)]
                .positions[static_cast<size_t>(scene.horizon_history + t)]);
    }
    per_scene.push_back(scene_metrics(worlds, truth, targets, tau));
  }
  return aggregate_metrics(std::move(per_scene), tau);
}

// ---------------------------------------------------------------------------
// Pre-train vs scratch comparison
// ---------------------------------------------------------------------------

namespace {

void check_disjoint(const std::vector<Scene>& a, const std::vector<Scene>& b,
                    const char* name_a, const char* name_b) {
  std::unordered_set<size_t> seen;
  std::hash<std::string> h;
  for (const Scene& s : a) seen.insert(h(scene_to_json(s)));
  for (const Scene& s : b)
    if (seen.count(h(scene_to_json(s))))
      throw std::invalid_argument(std::string("compare: ") + name_a + " and " +
                                  name_b + " splits share a scene");
}

}  // namespace

CompareOutcome compare_pretrain_vs_scratch(const TrainConfig& cfg,
                                           const std::vector<Scene>& pretrain_set,
                                           const std::vector<Scene>& finetune_set,
                                           const std::vector<Scene>& heldout,
                                           const std::vector<uint64_t>& seeds,
                                           std::ostream* log,
                                           const TrainConfig* finetune_cfg) {
  if (seeds.empty())
    throw std::invalid_argument("compare: need at least one seed");
  if (heldout.empty())
    throw std::invalid_argument("compare: need a held-out split");
  check_disjoint(pretrain_set, finetune_set, "pretrain", "finetune");
  check_disjoint(pretrain_set, heldout, "pretrain", "held-out");
  check_disjoint(finetune_set, heldout, "finetune", "held-out");

  CompareOutcome outcome;
  for (uint64_t seed : seeds) {
    TrainConfig arm = cfg;
    arm.seed = seed;
    arm.checkpoint_dir.clear();
    TrainConfig ft_arm = finetune_cfg ? *finetune_cfg : cfg;
    ft_arm.seed = seed;
    ft_arm.checkpoint_dir.clear();

    PretrainRun pre = run_pretrain(arm, pretrain_set, log);
    Checkpoint trunk;
    trunk.kind = "pretrain";
    trunk.config = arm;
    trunk.epochs_done = pre.epochs_done;
    trunk.params = pre.params;

    FinetuneRun warm = run_finetune(ft_arm, finetune_set, heldout, &trunk, log);
    FinetuneRun cold = run_finetune(ft_arm, finetune_set, heldout, nullptr, log);
    if (warm.eval_history.empty() || cold.eval_history.empty())
      throw std::runtime_error("compare: fine-tuning produced no evaluations");

    CompareSeedOutcome so;
    so.seed = seed;
    so.pretrained = warm.eval_history.back();
    so.scratch = cold.eval_history.back();
    if (so.pretrained.avg_min_fde <= so.scratch.avg_min_fde)
      ++outcome.pretrained_wins;
    if (log) {
      json line;
      line["seed"] = seed;
      line["pretrained_avg_min_fde"] = so.pretrained.avg_min_fde;
      line["pretrained_avg_min_ade"] = so.pretrained.avg_min_ade;
      line["pretrained_actor_mr"] = so.pretrained.actor_mr;
      line["scratch_avg_min_fde"] = so.scratch.avg_min_fde;
      line["scratch_avg_min_ade"] = so.scratch.avg_min_ade;
      line["scratch_actor_mr"] = so.scratch.actor_mr;
      *log << line.dump() << "\n";
    }
    outcome.per_seed.push_back(std::move(so));
  }
  return outcome;
}

}  // namespace mwf

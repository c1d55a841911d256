#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "mwf/pipeline.hpp"

using namespace mwf;

namespace {

SceneGenConfig small_gen() {
  SceneGenConfig g;
  g.n_agents_min = 2;
  g.n_agents_max = 3;
  g.n_lanes_min = 4;
  g.n_lanes_max = 5;
  g.t_history = 10;
  g.t_future = 8;
  g.lane_waypoints = 6;
  return g;
}

ModelConfig small_model() {
  ModelConfig m;
  m.d = 16;
  m.heads = 2;
  m.depth_encoder = 1;
  m.depth_regressor = 1;
  m.depth_spatial = 1;
  m.depth_motion = 1;
  m.k_modes = 2;
  m.max_agents = 4;
  m.max_lanes = 6;
  m.t_history = 10;
  m.t_future = 8;
  m.lane_waypoints = 6;
  m.dropout = 0.1;
  return m;
}

TrainConfig small_train(uint64_t seed) {
  TrainConfig cfg;
  cfg.model = small_model();
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.lr = 1e-3;
  cfg.alpha = 2.0;
  cfg.seed = seed;
  return cfg;
}

std::vector<Scene> make_scenes(int count, uint64_t seed0) {
  SceneGenConfig g = small_gen();
  std::vector<Scene> out;
  for (int i = 0; i < count; ++i)
    out.push_back(generate_synthetic_scene(RngState(seed0 + static_cast<uint64_t>(i)), g));
  return out;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& stem) {
    path = std::filesystem::temp_directory_path() / stem;
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<double> param_values(ModelParams& p, Stage stage) {
  std::vector<double> flat;
  for (const auto& np : named_params(p, stage))
    for (int64_t i = 0; i < np.tensor.size(); ++i) flat.push_back(np.tensor.at(i));
  return flat;
}

}  // namespace

TEST_CASE("train config json round trip preserves every field") {
  TrainConfig cfg = small_train(99);
  cfg.epochs = 7;
  cfg.batch_size = 5;
  cfg.lr = 2.5e-4;
  cfg.weight_decay = 0.02;
  cfg.alpha = 1.25;
  cfg.grad_clip = 3.0;
  cfg.tau = 1.5;
  cfg.cosine_lr = true;
  cfg.mask_mode = MaskMode::block;
  cfg.model.use_motion = false;
  cfg.model.ratios.r2 = 0.6;
  cfg.train_data = "train.jsonl";
  cfg.eval_data = "eval.jsonl";
  cfg.checkpoint_dir = "ckpts";

  TrainConfig back = train_config_from_json(train_config_to_json(cfg));
  CHECK(back.epochs == cfg.epochs);
  CHECK(back.batch_size == cfg.batch_size);
  CHECK(back.lr == cfg.lr);
  CHECK(back.weight_decay == cfg.weight_decay);
  CHECK(back.alpha == cfg.alpha);
  CHECK(back.grad_clip == cfg.grad_clip);
  CHECK(back.tau == cfg.tau);
  CHECK(back.cosine_lr == cfg.cosine_lr);
  CHECK(back.mask_mode == MaskMode::block);
  CHECK(back.seed == cfg.seed);
  CHECK(back.train_data == cfg.train_data);
  CHECK(back.eval_data == cfg.eval_data);
  CHECK(back.checkpoint_dir == cfg.checkpoint_dir);
  CHECK(back.model.d == cfg.model.d);
  CHECK(back.model.heads == cfg.model.heads);
  CHECK(back.model.k_modes == cfg.model.k_modes);
  CHECK(back.model.use_motion == false);
  CHECK(back.model.ratios.r2 == cfg.model.ratios.r2);

  nlohmann::json j = nlohmann::json::parse(train_config_to_json(cfg));
  j["mask_mode"] = "sometimes";
  CHECK_THROWS_AS(train_config_from_json(j.dump()), std::runtime_error);
}

TEST_CASE("batch_scenes pads each batch to its own maxima") {
  std::vector<Scene> scenes = make_scenes(5, 300);
  std::vector<size_t> order = {4, 0, 3, 1, 2};
  std::vector<BatchSpec> batches = batch_scenes(scenes, order, 2);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].indices == std::vector<size_t>{4, 0});
  CHECK(batches[1].indices == std::vector<size_t>{3, 1});
  CHECK(batches[2].indices == std::vector<size_t>{2});
  for (const BatchSpec& b : batches) {
    int want_a = 0, want_l = 0;
    for (size_t i : b.indices) {
      want_a = std::max(want_a, scenes[i].num_agents());
      want_l = std::max(want_l, scenes[i].num_lanes());
    }
    CHECK(b.padded_agents == want_a);
    CHECK(b.padded_lanes == want_l);
  }
  CHECK_THROWS_AS(batch_scenes(scenes, order, 0), std::invalid_argument);
  CHECK_THROWS_AS(batch_scenes(scenes, {5}, 1), std::invalid_argument);
}

TEST_CASE("checkpoint files round trip parameters and optimizer state exactly") {
  TrainConfig cfg = small_train(17);
  RngState rng(5);
  Checkpoint ck;
  ck.kind = "pretrain";
  ck.config = cfg;
  ck.epochs_done = 3;
  ck.params = init_model_params(cfg.model, rng);
  {
    AdamState opt(named_params(ck.params, Stage::pretrain), AdamConfig{});
    ck.optim.m = opt.moment1();
    ck.optim.v = opt.moment2();
    ck.optim.m[0][0] = 0.125;
    ck.optim.v[0][0] = 0.0625;
    ck.optim.steps = 9;
    ck.has_optim = true;
  }

  TempDir dir("mwf_ckpt_test");
  std::string path = dir.file("ck.json");
  save_checkpoint(path, ck);
  Checkpoint back = load_checkpoint(path);

  CHECK(back.kind == "pretrain");
  CHECK(back.epochs_done == 3);
  CHECK(back.config.seed == cfg.seed);
  CHECK(back.has_optim);
  CHECK(back.optim.steps == 9);
  CHECK(back.optim.m[0][0] == 0.125);
  CHECK(back.optim.v[0][0] == 0.0625);

  std::vector<double> a = param_values(ck.params, Stage::pretrain);
  std::vector<double> b = param_values(back.params, Stage::pretrain);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);

  SUBCASE("missing parameter is named") {
    nlohmann::json j;
    {
      std::ifstream in(path);
      in >> j;
    }
    j["params"].erase("gen.modes");
    std::string corrupt = dir.file("corrupt.json");
    {
      std::ofstream out(corrupt);
      out << j.dump();
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(corrupt),
                         doctest::Contains("gen.modes"), std::runtime_error);
  }
  SUBCASE("shape mismatch is named") {
    nlohmann::json j;
    {
      std::ifstream in(path);
      in >> j;
    }
    j["params"]["pe.table"]["shape"] = {1, 2};
    std::string corrupt = dir.file("badshape.json");
    {
      std::ofstream out(corrupt);
      out << j.dump();
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(corrupt), doctest::Contains("pe.table"),
                         std::runtime_error);
  }
}

TEST_CASE("pretraining is deterministic for a fixed seed") {
  std::vector<Scene> scenes = make_scenes(4, 1000);
  TrainConfig cfg = small_train(7);
  cfg.epochs = 1;
  PretrainRun a = run_pretrain(cfg, scenes);
  PretrainRun b = run_pretrain(cfg, scenes);
  REQUIRE(a.steps.size() == b.steps.size());
  REQUIRE(a.steps.size() == 2);
  for (size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].total == b.steps[i].total);
    CHECK(a.steps[i].l_align == b.steps[i].l_align);
    CHECK(a.steps[i].l_spatial == b.steps[i].l_spatial);
    CHECK(a.steps[i].l_motion == b.steps[i].l_motion);
  }
  std::vector<double> pa = param_values(a.params, Stage::pretrain);
  std::vector<double> pb = param_values(b.params, Stage::pretrain);
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i] == pb[i]);

  PretrainRun c = run_pretrain(small_train(8), scenes);
  bool differs = false;
  for (size_t i = 0; i < c.steps.size() && !differs; ++i)
    differs = c.steps[i].total != a.steps[i].total;
  CHECK(differs);
}

TEST_CASE("resuming a pretrain checkpoint reproduces the uninterrupted run exactly") {
  std::vector<Scene> scenes = make_scenes(4, 2000);
  TempDir dir("mwf_resume_test");

  // the schedule depends on the config's epoch count, so the interrupted run
  // must use the same config as the resumed one
  TrainConfig cfg = small_train(21);
  cfg.epochs = 2;
  cfg.cosine_lr = true;
  cfg.checkpoint_dir = dir.file("ck");
  PretrainRun full = run_pretrain(cfg, scenes);
  REQUIRE(full.steps.size() == 4);
  REQUIRE(full.checkpoints.size() == 2);

  Checkpoint ck = load_checkpoint(full.checkpoints[0]);
  CHECK(ck.epochs_done == 1);
  PretrainRun rest = run_pretrain(cfg, scenes, nullptr, &ck);
  REQUIRE(rest.steps.size() == 2);
  CHECK(rest.epochs_done == 2);

  CHECK(rest.steps[0].total == full.steps[2].total);
  CHECK(rest.steps[0].l_align == full.steps[2].l_align);
  CHECK(rest.steps[1].total == full.steps[3].total);
  CHECK(rest.steps[1].l_spatial == full.steps[3].l_spatial);
  CHECK(rest.steps[1].l_motion == full.steps[3].l_motion);

  std::vector<double> pf = param_values(full.params, Stage::pretrain);
  std::vector<double> pr = param_values(rest.params, Stage::pretrain);
  REQUIRE(pf.size() == pr.size());
  for (size_t i = 0; i < pf.size(); ++i) REQUIRE(pf[i] == pr[i]);

  SUBCASE("kind mismatch is rejected") {
    ck.kind = "finetune";
    CHECK_THROWS_AS(run_pretrain(cfg, scenes, nullptr, &ck), std::invalid_argument);
  }
}

TEST_CASE("resuming a finetune checkpoint reproduces the uninterrupted run exactly") {
  std::vector<Scene> scenes = make_scenes(4, 3000);
  TempDir dir("mwf_ft_resume_test");

  TrainConfig cfg = small_train(22);
  cfg.epochs = 2;
  FinetuneRun full = run_finetune(cfg, scenes, {});
  REQUIRE(full.steps.size() == 4);

  TrainConfig half = cfg;
  half.epochs = 1;
  half.checkpoint_dir = dir.file("ck");
  FinetuneRun first = run_finetune(half, scenes, {});
  REQUIRE(first.checkpoints.size() == 1);

  Checkpoint ck = load_checkpoint(first.checkpoints[0]);
  CHECK(ck.kind == "finetune");
  FinetuneRun rest = run_finetune(cfg, scenes, {}, nullptr, nullptr, &ck);
  REQUIRE(rest.steps.size() == 2);
  CHECK(rest.steps[0].total == full.steps[2].total);
  CHECK(rest.steps[1].total == full.steps[3].total);

  std::vector<double> pf = param_values(full.params, Stage::finetune);
  std::vector<double> pr = param_values(rest.params, Stage::finetune);
  REQUIRE(pf.size() == pr.size());
  for (size_t i = 0; i < pf.size(); ++i) REQUIRE(pf[i] == pr[i]);
}

TEST_CASE("trunk transfer copies shared weights and reports the split") {
  std::vector<Scene> scenes = make_scenes(2, 4000);
  TrainConfig cfg = small_train(31);
  cfg.epochs = 1;
  cfg.batch_size = 2;
  PretrainRun pre = run_pretrain(cfg, scenes);

  Checkpoint trunk;
  trunk.kind = "pretrain";
  trunk.config = cfg;
  trunk.epochs_done = 1;
  trunk.params = pre.params;

  TrainConfig ft = cfg;
  ft.epochs = 0;
  FinetuneRun warm = run_finetune(ft, scenes, {}, &trunk);

  for (const std::string& name : warm.transfer.transferred) {
    bool trunk_prefix = name.rfind("embed.", 0) == 0 ||
                        name.rfind("encoder.", 0) == 0 || name.rfind("pe.", 0) == 0;
    CHECK(trunk_prefix);
  }
  for (const std::string& name : warm.transfer.fresh) {
    CHECK(name.rfind("gen.", 0) == 0);
  }
  CHECK(!warm.transfer.transferred.empty());
  CHECK(!warm.transfer.fresh.empty());

  ModelParams donor = pre.params;
  size_t checked = 0;
  for (const auto& src : named_params(donor, Stage::finetune)) {
    bool expect_copied = false;
    for (const std::string& name : warm.transfer.transferred)
      if (name == src.name) expect_copied = true;
    if (!expect_copied) continue;
    for (const auto& dst : named_params(warm.params, Stage::finetune))
      if (dst.name == src.name) {
        REQUIRE(dst.tensor.size() == src.tensor.size());
        for (int64_t i = 0; i < dst.tensor.size(); ++i)
          REQUIRE(dst.tensor.at(i) == src.tensor.at(i));
        ++checked;
      }
  }
  CHECK(checked == warm.transfer.transferred.size());

  SUBCASE("shape mismatch names the parameter") {
    TrainConfig wide = ft;
    wide.model.d = 32;
    CHECK_THROWS_WITH_AS(run_finetune(wide, scenes, {}, &trunk),
                         doctest::Contains("embed."), std::invalid_argument);
  }
}

TEST_CASE("alpha zero keeps the alignment value out of the optimized total") {
  std::vector<Scene> scenes = make_scenes(2, 5000);
  TrainConfig cfg = small_train(41);
  cfg.epochs = 1;
  cfg.batch_size = 2;
  cfg.alpha = 0.0;
  PretrainRun run = run_pretrain(cfg, scenes);
  REQUIRE(run.steps.size() == 1);
  const PretrainLossReport& r = run.steps[0];
  CHECK(r.l_align > 0.0);
  CHECK(r.alpha == 0.0);
  CHECK(r.total == doctest::Approx(r.l_spatial + r.l_motion).epsilon(1e-12));

  SUBCASE("alignment-only run optimizes alpha times the alignment value") {
    TrainConfig only = cfg;
    only.alpha = 2.0;
    only.model.use_spatial = false;
    only.model.use_motion = false;
    PretrainRun a = run_pretrain(only, scenes);
    REQUIRE(a.steps.size() == 1);
    CHECK(a.steps[0].total == doctest::Approx(2.0 * a.steps[0].l_align).epsilon(1e-12));
    CHECK(a.steps[0].l_spatial == 0.0);
    CHECK(a.steps[0].l_motion == 0.0);
  }
  SUBCASE("all objectives off is rejected") {
    TrainConfig off = cfg;
    off.alpha = 0.0;
    off.model.use_spatial = false;
    off.model.use_motion = false;
    CHECK_THROWS_AS(run_pretrain(off, scenes), std::invalid_argument);
  }
}

TEST_CASE("training logs emit one json line per step with schedule fields") {
  std::vector<Scene> scenes = make_scenes(4, 6000);
  TrainConfig cfg = small_train(51);
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.cosine_lr = true;
  std::ostringstream log;
  PretrainRun run = run_pretrain(cfg, scenes, &log);
  REQUIRE(run.steps.size() == 4);

  std::istringstream lines(log.str());
  std::string line;
  int n_lines = 0;
  while (std::getline(lines, line)) {
    nlohmann::json j = nlohmann::json::parse(line);
    REQUIRE(j.contains("step"));
    REQUIRE(j.contains("lr"));
    REQUIRE(j.contains("grad_norm"));
    REQUIRE(j.contains("clipped"));
    int64_t step = j["step"].get<int64_t>();
    double want = cfg.lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / 4.0));
    CHECK(j["lr"].get<double>() == doctest::Approx(want).epsilon(1e-12));
    CHECK(j["grad_norm"].get<double>() > 0.0);
    ++n_lines;
  }
  CHECK(n_lines == 4);
}

TEST_CASE("a zero epoch finetune run still evaluates the held-out set") {
  std::vector<Scene> train = make_scenes(2, 7000);
  std::vector<Scene> heldout = make_scenes(2, 7100);
  TrainConfig cfg = small_train(61);
  cfg.epochs = 0;
  FinetuneRun run = run_finetune(cfg, train, heldout);
  CHECK(run.steps.empty());
  REQUIRE(run.eval_history.size() == 1);
  CHECK(std::isfinite(run.eval_history[0].avg_min_fde));
  CHECK(run.eval_history[0].n_scenes == 2);
}

TEST_CASE("a non-finite loss aborts with a diagnostic instead of training on") {
  std::vector<Scene> scenes = make_scenes(2, 8000);
  TrainConfig cfg = small_train(71);
  cfg.epochs = 1;
  cfg.batch_size = 2;

  RngState rng(3);
  Checkpoint poisoned;
  poisoned.kind = "pretrain";
  poisoned.config = cfg;
  poisoned.epochs_done = 0;
  poisoned.params = init_model_params(cfg.model, rng);
  poisoned.params.pe.set(0, std::nan(""));
  CHECK_THROWS_WITH_AS(run_pretrain(cfg, scenes, nullptr, &poisoned),
                       doctest::Contains("non-finite"), std::runtime_error);
}

TEST_CASE("predictions land in the raw frame with normalized mode scores") {
  std::vector<Scene> scenes = make_scenes(1, 9000);
  const Scene& scene = scenes[0];
  RngState rng(13);
  ModelParams params = init_model_params(small_model(), rng);

  std::vector<double> scores;
  WorldSet worlds = predict_worlds(params, scene, &scores);
  REQUIRE(static_cast<int>(worlds.size()) == params.config.k_modes);
  REQUIRE(static_cast<int>(worlds[0].size()) == scene.num_agents());
  REQUIRE(static_cast<int>(worlds[0][0].size()) == scene.horizon_future);
  REQUIRE(scores.size() == worlds.size());
  double sum = 0.0;
  for (double s : scores) {
    CHECK(s > 0.0);
    sum += s;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

  // offsets start from the last observed position, so with zeroed generator
  // output layers every world parks every agent there, in raw coordinates
  for (int64_t i = 0; i < params.gen2_w.size(); ++i) params.gen2_w.set(i, 0.0);
  for (int64_t i = 0; i < params.gen2_b.size(); ++i) params.gen2_b.set(i, 0.0);
  WorldSet still = predict_worlds(params, scene);
  for (const auto& world : still)
    for (int n = 0; n < scene.num_agents(); ++n) {
      Vec2 last = scene.agents[static_cast<size_t>(n)]
                      .positions[static_cast<size_t>(scene.horizon_history - 1)];
      for (const Vec2& p : still[0][static_cast<size_t>(n)]) {
        CHECK(p.x == doctest::Approx(last.x).epsilon(1e-9));
        CHECK(p.y == doctest::Approx(last.y).epsilon(1e-9));
      }
      (void)world;
    }

  Scene norm = normalize_scene(scene);
  CHECK_THROWS_AS(predict_worlds(params, norm), std::invalid_argument);
}

TEST_CASE("evaluation is invariant to a rigid transform of the scene") {
  std::vector<Scene> scenes = make_scenes(1, 9500);
  RngState rng(14);
  ModelParams params = init_model_params(small_model(), rng);

  Scene moved = scenes[0];
  double th = 0.83, c = std::cos(th), s = std::sin(th);
  Vec2 shift{13.0, -4.5};
  for (AgentTrack& a : moved.agents) {
    for (Vec2& p : a.positions) p = Vec2{p.x * c - p.y * s, p.x * s + p.y * c} + shift;
    for (double& h : a.headings) h = wrap_angle(h + th);
  }
  for (LaneSegment& l : moved.lanes)
    for (Vec2& p : l.waypoints) p = Vec2{p.x * c - p.y * s, p.x * s + p.y * c} + shift;

  DatasetMetrics base = evaluate_dataset(params, scenes, 2.0);
  DatasetMetrics turned = evaluate_dataset(params, {moved}, 2.0);
  CHECK(turned.avg_min_fde == doctest::Approx(base.avg_min_fde).epsilon(1e-6));
  CHECK(turned.avg_min_ade == doctest::Approx(base.avg_min_ade).epsilon(1e-6));
  CHECK(turned.actor_mr == doctest::Approx(base.actor_mr).epsilon(1e-6));

  CHECK_THROWS_AS(evaluate_dataset(params, {}, 2.0), std::invalid_argument);
}

TEST_CASE("padded and unpadded execution agree on every loss in eval mode") {
  SceneGenConfig g = small_gen();
  ModelConfig mc = small_model();
  RngState prng(77);
  ModelParams params = init_model_params(mc, prng);

  for (uint64_t seed : {11000u, 11001u, 11002u}) {
    Scene norm = normalize_scene(generate_synthetic_scene(RngState(seed), g));
    RngState mask_rng = RngState(seed).derive(9);
    MaskPlan plan = make_mask_plan(norm, mc.ratios, mask_rng);
    auto [vis, msk] = split_tokens(norm, plan);

    auto pretrain_losses = [&](int pa, int pl) {
      TokenBatch visible = assemble_tokens(params.embed, params.pe, mc.max_agents,
                                           mc.max_lanes, norm, vis, false, pa, pl);
      TokenBatch masked = assemble_tokens(params.embed, params.pe, mc.max_agents,
                                          mc.max_lanes, norm, msk, true, pa, pl);
      Tensor e_v = encode(params, visible);
      Tensor e_m = encode(params, masked);
      Tensor r_m = regress_masked(params, e_v, masked);
      PretrainTargets tgt = build_pretrain_targets(norm, plan, mc, pa, pl);
      SpatialDecode sd = decode_spatial(params, r_m, masked);
      MotionDecode md = decode_motion(params, r_m, masked);
      return std::vector<double>{alignment_loss(r_m, e_m, masked.valid).item(),
                                 spatial_loss(sd, tgt).item(),
                                 motion_loss(md, tgt).item()};
    };
    std::vector<double> tight = pretrain_losses(-1, -1);
    std::vector<double> padded = pretrain_losses(mc.max_agents, mc.max_lanes);
    for (size_t i = 0; i < tight.size(); ++i)
      CHECK(std::abs(tight[i] - padded[i]) <= 1e-9);

    auto finetune_losses = [&](int pa, int pl) {
      TokenBatch hb = assemble_history_tokens(params.embed, params.pe, mc.max_agents,
                                              mc.max_lanes, norm, pa, pl);
      int rows = hb.padded_agents;
      std::vector<Vec2> last_obs(static_cast<size_t>(rows));
      std::vector<uint8_t> is_target(static_cast<size_t>(rows), 0);
      std::vector<double> truth(static_cast<size_t>(rows) * 2 * mc.t_future, 0.0);
      for (int n = 0; n < norm.num_agents(); ++n) {
        const AgentTrack& a = norm.agents[static_cast<size_t>(n)];
        last_obs[static_cast<size_t>(n)] =
            a.positions[static_cast<size_t>(norm.horizon_history - 1)];
        is_target[static_cast<size_t>(n)] = a.is_target ? 1 : 0;
        for (int t = 0; t < mc.t_future; ++t) {
          const Vec2& p = a.positions[static_cast<size_t>(norm.horizon_history + t)];
          truth[static_cast<size_t>(n) * 2 * mc.t_future + 2 * t] = p.x;
          truth[static_cast<size_t>(n) * 2 * mc.t_future + 2 * t + 1] = p.y;
        }
      }
      Tensor truth_t = Tensor::from({rows, 2 * mc.t_future}, std::move(truth));
      Tensor z_e = encode(params, hb);
      Generation gen = generate(params, z_e, hb, last_obs, is_target);
      int k_star = select_winner(gen.worlds, truth_t, is_target);
      FinetuneLossReport rep;
      finetune_loss(gen.worlds, gen.logits, truth_t, is_target, k_star, 1.0, &rep);
      return std::pair<int, double>{k_star, rep.total};
    };
    auto [k_tight, loss_tight] = finetune_losses(-1, -1);
    auto [k_padded, loss_padded] = finetune_losses(mc.max_agents, mc.max_lanes);
    CHECK(k_tight == k_padded);
    CHECK(std::abs(loss_tight - loss_padded) <= 1e-9);
  }
}

TEST_CASE("the pretrain versus scratch harness runs end to end on a toy split") {
  std::vector<Scene> pre = make_scenes(2, 10000);
  std::vector<Scene> fine = make_scenes(2, 10100);
  std::vector<Scene> held = make_scenes(1, 10200);
  TrainConfig cfg = small_train(81);
  cfg.epochs = 1;
  cfg.batch_size = 2;

  CompareOutcome out = compare_pretrain_vs_scratch(cfg, pre, fine, held, {81});
  REQUIRE(out.per_seed.size() == 1);
  CHECK(out.per_seed[0].seed == 81);
  CHECK(std::isfinite(out.per_seed[0].pretrained.avg_min_fde));
  CHECK(std::isfinite(out.per_seed[0].scratch.avg_min_fde));
  CHECK((out.pretrained_wins == 0 || out.pretrained_wins == 1));

  SUBCASE("overlapping splits are rejected") {
    std::vector<Scene> overlap = {pre[0]};
    CHECK_THROWS_WITH_AS(compare_pretrain_vs_scratch(cfg, pre, overlap, held, {81}),
                         doctest::Contains("share a scene"), std::invalid_argument);
  }
  SUBCASE("an empty seed list is rejected") {
    CHECK_THROWS_AS(compare_pretrain_vs_scratch(cfg, pre, fine, held, {}),
                    std::invalid_argument);
  }
}

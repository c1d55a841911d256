#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mwf/losses.hpp"
#include "mwf/masking.hpp"
#include "mwf/metrics.hpp"
#include "mwf/model.hpp"
#include "mwf/optim.hpp"
#include "mwf/scene.hpp"

namespace mwf {

// One training recipe: architecture plus schedule. JSON round trips exactly.
struct TrainConfig {
  ModelConfig model;
  int epochs = 10;
  int batch_size = 32;
  double lr = 3e-3;
  double weight_decay = 1e-2;
  double alpha = 2.0;       // alignment weight; 0 keeps the term out of the total
  double grad_clip = 5.0;   // global-norm ceiling, <= 0 disables
  double tau = 2.0;         // miss-rate radius, meters
  bool cosine_lr = false;   // cosine decay over the full schedule
  MaskMode mask_mode = MaskMode::iid;
  uint64_t seed = 0;
  std::string train_data;       // JSONL scene files; CLI fills these
  std::string eval_data;
  std::string checkpoint_dir;   // empty disables checkpoint writing
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

// Scenes grouped for one optimizer step, padded to the widest member so every
// batch entry shares one token layout.
struct BatchSpec {
  std::vector<size_t> indices;
  int padded_agents = 0;
  int padded_lanes = 0;
};

std::vector<BatchSpec> batch_scenes(const std::vector<Scene>& scenes,
                                    const std::vector<size_t>& order,
                                    int batch_size);

// Optimizer moments captured for exact resume.
struct OptimSnapshot {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  int64_t steps = 0;
};

struct Checkpoint {
  std::string kind;  // "pretrain" or "finetune"
  TrainConfig config;
  int epochs_done = 0;
  ModelParams params;
  OptimSnapshot optim;
  bool has_optim = false;
};

// JSON on disk; doubles round trip exactly, so a reloaded run continues
// bit-identically.
void save_checkpoint(const std::string& path, Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

struct PretrainRun {
  ModelParams params;
  OptimSnapshot optim;
  std::vector<PretrainLossReport> steps;  // one entry per optimizer step
  std::vector<std::string> checkpoints;   // files written, one per epoch
  int epochs_done = 0;
};

// Disentangled pre-training over raw scenes (normalized internally). Writes
// one JSON object per optimizer step to `log` when given. Aborts with a
// diagnostic on a non-finite loss. Pass `resume` to continue a saved run on
// its exact trajectory.
PretrainRun run_pretrain(const TrainConfig& cfg, const std::vector<Scene>& train,
                         std::ostream* log = nullptr,
                         const Checkpoint* resume = nullptr);

// Which parameters a fine-tune run inherited from a pre-trained checkpoint
// and which started fresh.
struct TransferReport {
  std::vector<std::string> transferred;
  std::vector<std::string> fresh;
};

struct FinetuneRun {
  ModelParams params;
  OptimSnapshot optim;
  std::vector<FinetuneLossReport> steps;
  std::vector<DatasetMetrics> eval_history;  // held-out metrics, one per epoch
  TransferReport transfer;
  std::vector<std::string> checkpoints;
  int epochs_done = 0;
};

// Multi-world fine-tuning. `pretrained` seeds the shared trunk (embeddings,
// positional table, encoder); shape mismatches name the parameter. With zero
// epochs the held-out evaluation still runs once.
FinetuneRun run_finetune(const TrainConfig& cfg, const std::vector<Scene>& train,
                         const std::vector<Scene>& heldout,
                         const Checkpoint* pretrained = nullptr,
                         std::ostream* log = nullptr,
                         const Checkpoint* resume = nullptr);

// K futures for every agent of one raw scene, mapped back to the raw frame.
// `scores` receives the softmaxed mode probabilities when given.
WorldSet predict_worlds(const ModelParams& params, const Scene& scene,
                        std::vector<double>* scores = nullptr);

DatasetMetrics evaluate_dataset(const ModelParams& params,
                                const std::vector<Scene>& scenes, double tau);

struct CompareSeedOutcome {
  uint64_t seed = 0;
  DatasetMetrics pretrained;
  DatasetMetrics scratch;
};

struct CompareOutcome {
  std::vector<CompareSeedOutcome> per_seed;
  int pretrained_wins = 0;  // seeds where pre-training matched or beat scratch
};

// Trains both arms per seed (pretrain + finetune vs finetune-only) and
// evaluates on the held-out split. The three splits must be disjoint by
// content; overlaps are rejected. finetune_cfg lets the two stages run
// different schedules; it defaults to cfg and must keep the same model.
CompareOutcome compare_pretrain_vs_scratch(const TrainConfig& cfg,
                                           const std::vector<Scene>& pretrain_set,
                                           const std::vector<Scene>& finetune_set,
                                           const std::vector<Scene>& heldout,
                                           const std::vector<uint64_t>& seeds,
                                           std::ostream* log = nullptr,
                                           const TrainConfig* finetune_cfg = nullptr);

}  // namespace mwf

#pragma once

#include <string>
#include <vector>

#include "mwf/embed.hpp"
#include "mwf/masking.hpp"
#include "mwf/optim.hpp"
#include "mwf/scene.hpp"
#include "mwf/tensor.hpp"

namespace mwf {

struct ModelConfig {
  int d = 64;
  int heads = 4;
  int depth_encoder = 4;
  int depth_regressor = 2;
  int depth_spatial = 4;
  int depth_motion = 2;
  int k_modes = 6;
  int max_agents = 8;
  int max_lanes = 16;
  int t_history = 50;
  int t_future = 60;
  int lane_waypoints = 20;  // W, uniform across lanes at pre-train time
  double dropout = 0.1;
  MaskRatios ratios;
  // ablation switches; the trainer refuses a run with all three off
  bool use_alignment = true;
  bool use_spatial = true;
  bool use_motion = true;

  int pe_rows() const { return 2 * max_agents + max_lanes; }
  // masked entries per agent history / future and per lane, after the
  // keep-one-visible clamp; these fix the reconstruction head widths
  int mask_h() const;
  int mask_f() const;
  int mask_w() const;
};

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct BlockWeights {
  Tensor ln1_g, ln1_b;
  AttentionWeights attn;
  Tensor ln2_g, ln2_b;
  Tensor ff1_w, ff1_b, ff2_w, ff2_b;
};

struct StackWeights {
  std::vector<BlockWeights> blocks;
  Tensor final_ln_g, final_ln_b;
};

struct ModelParams {
  ModelConfig config;
  EmbedWeights embed;
  Tensor pe;  // [2*max_agents + max_lanes, D]
  StackWeights encoder;
  Tensor qm;  // learnable mask queries, same row layout as pe
  StackWeights regressor;
  StackWeights spatial;
  Tensor head_s_hist_w, head_s_hist_b;  // D -> 2*mask_h
  Tensor head_s_fut_w, head_s_fut_b;    // D -> 2*mask_f
  Tensor head_s_lane_w, head_s_lane_b;  // D -> 2*mask_w
  StackWeights motion;
  Tensor head_m_hist_w, head_m_hist_b;  // D -> mask_h
  Tensor head_m_fut_w, head_m_fut_b;    // D -> mask_f
  Tensor mode_emb;  // [K, D]
  Tensor gen1_w, gen1_b;      // 2D -> 2D
  Tensor gen2_w, gen2_b;      // 2D -> T_f*2
  Tensor score1_w, score1_b;  // 2D -> D
  Tensor score2_w, score2_b;  // D -> 1
};

// Xavier-uniform weights, zero biases, unit layer-norm gains, 0.02-scaled
// normal tables (pe, qm, mode embeddings).
ModelParams init_model_params(const ModelConfig& cfg, RngState& rng);

enum class Stage { pretrain, finetune };

// The trainable set for a stage, in a fixed registration order. Pre-train
// registration honors the ablation switches so the optimizer never sees a
// parameter the graph cannot reach.
std::vector<NamedParam> named_params(ModelParams& p, Stage stage);

struct EncodeOptions {
  bool training = false;
  RngState* rng = nullptr;  // required when training and dropout > 0
};

// Siamese encoder: full self-attention over the batch tokens; padding rows
// are skipped as attention keys.
Tensor encode(const ModelParams& p, const TokenBatch& batch,
              const EncodeOptions& opt = {});

// Learnable mask queries (rows of qm picked by the batch slots) cross-attend
// over the visible context e_v. Output is slot-aligned with the batch.
Tensor regress_masked(const ModelParams& p, const Tensor& e_v,
                      const TokenBatch& batch, const EncodeOptions& opt = {});

struct SpatialDecode {
  Tensor hist;  // [padded_agents, 2*mask_h] masked history coordinates
  Tensor fut;   // [padded_agents, 2*mask_f]
  Tensor lane;  // [padded_lanes, 2*mask_w]
};

struct MotionDecode {
  Tensor hist;  // [padded_agents, mask_h] speeds, m/s
  Tensor fut;   // [padded_agents, mask_f]
};

SpatialDecode decode_spatial(const ModelParams& p, const Tensor& r_m,
                             const TokenBatch& batch,
                             const EncodeOptions& opt = {});
MotionDecode decode_motion(const ModelParams& p, const Tensor& r_m,
                           const TokenBatch& batch,
                           const EncodeOptions& opt = {});

struct Generation {
  // worlds[k]: [padded_agents, T_f*2] absolute positions, row n flattening
  // (x_t, y_t) over future steps; padding rows meaningless
  std::vector<Tensor> worlds;
  Tensor logits;  // [1, K] raw mode scores
};

// Multi-world head over the fine-tune encoding z_e (history+lane layout).
// Each mode concatenates its embedding to every agent row of z_e, an MLP
// emits per-step offsets added to the agent's last observed position, and the
// score head pools target-agent features into one logit per mode.
Generation generate(const ModelParams& p, const Tensor& z_e,
                    const TokenBatch& batch, const std::vector<Vec2>& last_obs,
                    const std::vector<uint8_t>& agent_is_target,
                    const EncodeOptions& opt = {});

}  // namespace mwf

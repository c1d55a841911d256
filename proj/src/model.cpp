#include "mwf/model.hpp"

#include <cmath>
#include <stdexcept>

namespace mwf {

int ModelConfig::mask_h() const {
  return std::min(masked_count(ratios.r1, t_history), t_history - 1);
}
int ModelConfig::mask_f() const {
  return std::min(masked_count(ratios.r2, t_future), t_future);
}
int ModelConfig::mask_w() const {
  return std::min(masked_count(ratios.r3, lane_waypoints), lane_waypoints - 1);
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace {

Tensor xavier(int fan_in, int fan_out, RngState& rng) {
  double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = Tensor::zeros({fan_in, fan_out}, true);
  for (int64_t i = 0; i < t.size(); ++i) t.set(i, rng.uniform(-limit, limit));
  return t;
}

Tensor zeros_param(std::vector<int> shape) { return Tensor::zeros(std::move(shape), true); }

Tensor ones_param(int n) {
  Tensor t = Tensor::full({n}, 1.0);
  t.impl()->requires_grad = true;
  return t;
}

Tensor table_param(int rows, int cols, RngState& rng) {
  Tensor t = Tensor::zeros({rows, cols}, true);
  for (int64_t i = 0; i < t.size(); ++i) t.set(i, 0.02 * rng.normal());
  return t;
}

BlockWeights init_block(int d, RngState& rng) {
  BlockWeights b;
  b.ln1_g = ones_param(d);
  b.ln1_b = zeros_param({d});
  b.attn.wq = xavier(d, d, rng);
  b.attn.bq = zeros_param({d});
  b.attn.wk = xavier(d, d, rng);
  b.attn.bk = zeros_param({d});
  b.attn.wv = xavier(d, d, rng);
  b.attn.bv = zeros_param({d});
  b.attn.wo = xavier(d, d, rng);
  b.attn.bo = zeros_param({d});
  b.ln2_g = ones_param(d);
  b.ln2_b = zeros_param({d});
  b.ff1_w = xavier(d, 4 * d, rng);
  b.ff1_b = zeros_param({4 * d});
  b.ff2_w = xavier(4 * d, d, rng);
  b.ff2_b = zeros_param({d});
  return b;
}

StackWeights init_stack(int depth, int d, RngState& rng) {
  StackWeights s;
  for (int i = 0; i < depth; ++i) s.blocks.push_back(init_block(d, rng));
  s.final_ln_g = ones_param(d);
  s.final_ln_b = zeros_param({d});
  return s;
}

}  // namespace

ModelParams init_model_params(const ModelConfig& cfg, RngState& rng) {
  if (cfg.d % cfg.heads != 0)
    throw std::invalid_argument("model config: D must be divisible by head count");
  int d = cfg.d;
  ModelParams p;
  p.config = cfg;

  p.embed.traj.lift_w = xavier(4, d, rng);
  p.embed.traj.lift_b = zeros_param({d});
  p.embed.traj.conv1_w = xavier(3 * d, d, rng);
  p.embed.traj.conv1_b = zeros_param({d});
  p.embed.traj.conv2_w = xavier(3 * d, d, rng);
  p.embed.traj.conv2_b = zeros_param({d});
  p.embed.traj.lat0_w = xavier(d, d, rng);
  p.embed.traj.lat0_b = zeros_param({d});
  p.embed.traj.lat1_w = xavier(d, d, rng);
  p.embed.traj.lat1_b = zeros_param({d});
  p.embed.traj.lat2_w = xavier(d, d, rng);
  p.embed.traj.lat2_b = zeros_param({d});
  p.embed.traj.fuse_w = xavier(d, d, rng);
  p.embed.traj.fuse_b = zeros_param({d});
  p.embed.lane.l1_w = xavier(2, d, rng);
  p.embed.lane.l1_b = zeros_param({d});
  p.embed.lane.l2_w = xavier(d, d, rng);
  p.embed.lane.l2_b = zeros_param({d});

  p.pe = table_param(cfg.pe_rows(), d, rng);
  p.encoder = init_stack(cfg.depth_encoder, d, rng);
  p.qm = table_param(cfg.pe_rows(), d, rng);
  p.regressor = init_stack(cfg.depth_regressor, d, rng);

  p.spatial = init_stack(cfg.depth_spatial, d, rng);
  p.head_s_hist_w = xavier(d, 2 * cfg.mask_h(), rng);
  p.head_s_hist_b = zeros_param({2 * cfg.mask_h()});
  p.head_s_fut_w = xavier(d, 2 * cfg.mask_f(), rng);
  p.head_s_fut_b = zeros_param({2 * cfg.mask_f()});
  p.head_s_lane_w = xavier(d, 2 * cfg.mask_w(), rng);
  p.head_s_lane_b = zeros_param({2 * cfg.mask_w()});

  p.motion = init_stack(cfg.depth_motion, d, rng);
  p.head_m_hist_w = xavier(d, cfg.mask_h(), rng);
  p.head_m_hist_b = zeros_param({cfg.mask_h()});
  p.head_m_fut_w = xavier(d, cfg.mask_f(), rng);
  p.head_m_fut_b = zeros_param({cfg.mask_f()});

  p.mode_emb = table_param(cfg.k_modes, d, rng);
  p.gen1_w = xavier(2 * d, 2 * d, rng);
  p.gen1_b = zeros_param({2 * d});
  p.gen2_w = xavier(2 * d, cfg.t_future * 2, rng);
  p.gen2_b = zeros_param({cfg.t_future * 2});
  p.score1_w = xavier(2 * d, d, rng);
  p.score1_b = zeros_param({d});
  p.score2_w = xavier(d, 1, rng);
  p.score2_b = zeros_param({1});
  return p;
}

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

namespace {

void add_stack(std::vector<NamedParam>& out, const std::string& prefix,
               StackWeights& s) {
  for (size_t i = 0; i < s.blocks.size(); ++i) {
    BlockWeights& b = s.blocks[i];
    std::string base = prefix + ".block" + std::to_string(i);
    out.push_back({base + ".ln1.g", b.ln1_g});
    out.push_back({base + ".ln1.b", b.ln1_b});
    out.push_back({base + ".attn.wq", b.attn.wq});
    out.push_back({base + ".attn.bq", b.attn.bq});
    out.push_back({base + ".attn.wk", b.attn.wk});
    out.push_back({base + ".attn.bk", b.attn.bk});
    out.push_back({base + ".attn.wv", b.attn.wv});
    out.push_back({base + ".attn.bv", b.attn.bv});
    out.push_back({base + ".attn.wo", b.attn.wo});
    out.push_back({base + ".attn.bo", b.attn.bo});
    out.push_back({base + ".ln2.g", b.ln2_g});
    out.push_back({base + ".ln2.b", b.ln2_b});
    out.push_back({base + ".ff1.w", b.ff1_w});
    out.push_back({base + ".ff1.b", b.ff1_b});
    out.push_back({base + ".ff2.w", b.ff2_w});
    out.push_back({base + ".ff2.b", b.ff2_b});
  }
  out.push_back({prefix + ".final_ln.g", s.final_ln_g});
  out.push_back({prefix + ".final_ln.b", s.final_ln_b});
}

void add_embed(std::vector<NamedParam>& out, EmbedWeights& e) {
  TrajEmbedWeights& t = e.traj;
  out.push_back({"embed.traj.lift.w", t.lift_w});
  out.push_back({"embed.traj.lift.b", t.lift_b});
  out.push_back({"embed.traj.conv1.w", t.conv1_w});
  out.push_back({"embed.traj.conv1.b", t.conv1_b});
  out.push_back({"embed.traj.conv2.w", t.conv2_w});
  out.push_back({"embed.traj.conv2.b", t.conv2_b});
  out.push_back({"embed.traj.lat0.w", t.lat0_w});
  out.push_back({"embed.traj.lat0.b", t.lat0_b});
  out.push_back({"embed.traj.lat1.w", t.lat1_w});
  out.push_back({"embed.traj.lat1.b", t.lat1_b});
  out.push_back({"embed.traj.lat2.w", t.lat2_w});
  out.push_back({"embed.traj.lat2.b", t.lat2_b});
  out.push_back({"embed.traj.fuse.w", t.fuse_w});
  out.push_back({"embed.traj.fuse.b", t.fuse_b});
  out.push_back({"embed.lane.l1.w", e.lane.l1_w});
  out.push_back({"embed.lane.l1.b", e.lane.l1_b});
  out.push_back({"embed.lane.l2.w", e.lane.l2_w});
  out.push_back({"embed.lane.l2.b", e.lane.l2_b});
}

}  // namespace

std::vector<NamedParam> named_params(ModelParams& p, Stage stage) {
  std::vector<NamedParam> out;
  add_embed(out, p.embed);
  out.push_back({"pe.table", p.pe});
  add_stack(out, "encoder", p.encoder);
  if (stage == Stage::pretrain) {
    out.push_back({"qm.table", p.qm});
    add_stack(out, "regressor", p.regressor);
    if (p.config.use_spatial) {
      add_stack(out, "spatial", p.spatial);
      out.push_back({"spatial.head.hist.w", p.head_s_hist_w});
      out.push_back({"spatial.head.hist.b", p.head_s_hist_b});
      out.push_back({"spatial.head.fut.w", p.head_s_fut_w});
      out.push_back({"spatial.head.fut.b", p.head_s_fut_b});
      out.push_back({"spatial.head.lane.w", p.head_s_lane_w});
      out.push_back({"spatial.head.lane.b", p.head_s_lane_b});
    }
    if (p.config.use_motion) {
      add_stack(out, "motion", p.motion);
      out.push_back({"motion.head.hist.w", p.head_m_hist_w});
      out.push_back({"motion.head.hist.b", p.head_m_hist_b});
      out.push_back({"motion.head.fut.w", p.head_m_fut_w});
      out.push_back({"motion.head.fut.b", p.head_m_fut_b});
    }
  } else {
    out.push_back({"gen.modes", p.mode_emb});
    out.push_back({"gen.mlp1.w", p.gen1_w});
    out.push_back({"gen.mlp1.b", p.gen1_b});
    out.push_back({"gen.mlp2.w", p.gen2_w});
    out.push_back({"gen.mlp2.b", p.gen2_b});
    out.push_back({"gen.score1.w", p.score1_w});
    out.push_back({"gen.score1.b", p.score1_b});
    out.push_back({"gen.score2.w", p.score2_w});
    out.push_back({"gen.score2.b", p.score2_b});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transformer stacks
// ---------------------------------------------------------------------------

namespace {

Tensor multi_head_attention(const AttentionWeights& w, const Tensor& q_in,
                            const Tensor& kv_in,
                            const std::vector<uint8_t>& key_valid, int heads) {
  int d = q_in.cols();
  int dh = d / heads;
  Tensor q = linear(q_in, w.wq, w.bq);
  Tensor k = linear(kv_in, w.wk, w.bk);
  Tensor v = linear(kv_in, w.wv, w.bv);
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, kh, false, true), inv_sqrt);
    Tensor probs = softmax_rows(scores, &key_valid);
    outs.push_back(matmul(probs, vh));
  }
  return linear(concat_cols(outs), w.wo, w.bo);
}

Tensor run_block(const BlockWeights& b, Tensor x, const Tensor* memory,
                 const std::vector<uint8_t>& key_valid, int heads,
                 double drop_rate, const EncodeOptions& opt) {
  Tensor h = layer_norm(x, b.ln1_g, b.ln1_b);
  const Tensor& kv = memory ? *memory : h;
  Tensor attn = multi_head_attention(b.attn, h, kv, key_valid, heads);
  if (opt.training && drop_rate > 0.0)
    attn = dropout(attn, drop_rate, *opt.rng, true);
  x = add(x, attn);
  Tensor h2 = layer_norm(x, b.ln2_g, b.ln2_b);
  Tensor ff = linear(gelu(linear(h2, b.ff1_w, b.ff1_b)), b.ff2_w, b.ff2_b);
  if (opt.training && drop_rate > 0.0) ff = dropout(ff, drop_rate, *opt.rng, true);
  return add(x, ff);
}

Tensor run_stack(const StackWeights& s, Tensor x, const Tensor* memory,
                 const std::vector<uint8_t>& key_valid, int heads,
                 double drop_rate, const EncodeOptions& opt) {
  if (opt.training && drop_rate > 0.0 && opt.rng == nullptr)
    throw std::invalid_argument("model: training forward needs an rng for dropout");
  for (const BlockWeights& b : s.blocks)
    x = run_block(b, x, memory, key_valid, heads, drop_rate, opt);
  return layer_norm(x, s.final_ln_g, s.final_ln_b);
}

}  // namespace

Tensor encode(const ModelParams& p, const TokenBatch& batch,
              const EncodeOptions& opt) {
  if (batch.tokens.cols() != p.config.d)
    throw std::invalid_argument("encode: token width " +
                                std::to_string(batch.tokens.cols()) + " != D " +
                                std::to_string(p.config.d));
  return run_stack(p.encoder, batch.tokens, nullptr, batch.valid, p.config.heads,
                   p.config.dropout, opt);
}

Tensor regress_masked(const ModelParams& p, const Tensor& e_v,
                      const TokenBatch& batch, const EncodeOptions& opt) {
  if (e_v.rows() != batch.length())
    throw std::invalid_argument("regress_masked: context length " +
                                std::to_string(e_v.rows()) +
                                " does not match batch length " +
                                std::to_string(batch.length()));
  Tensor queries = gather_rows(p.qm, batch.slots);
  return run_stack(p.regressor, queries, &e_v, batch.valid, p.config.heads,
                   p.config.dropout, opt);
}

namespace {

void check_decode_batch(const Tensor& r_m, const TokenBatch& batch) {
  if (batch.history_only)
    throw std::invalid_argument("decode: fine-tune batches have no masked slots");
  if (r_m.rows() != batch.length())
    throw std::invalid_argument("decode: slot count mismatch");
}

}  // namespace

SpatialDecode decode_spatial(const ModelParams& p, const Tensor& r_m,
                             const TokenBatch& batch, const EncodeOptions& opt) {
  check_decode_batch(r_m, batch);
  Tensor g = run_stack(p.spatial, r_m, nullptr, batch.valid, p.config.heads,
                       p.config.dropout, opt);
  int na = batch.padded_agents, nl = batch.padded_lanes;
  SpatialDecode out;
  out.hist = linear(slice_rows(g, 0, na), p.head_s_hist_w, p.head_s_hist_b);
  out.fut = linear(slice_rows(g, na, na), p.head_s_fut_w, p.head_s_fut_b);
  out.lane = linear(slice_rows(g, 2 * na, nl), p.head_s_lane_w, p.head_s_lane_b);
  return out;
}

MotionDecode decode_motion(const ModelParams& p, const Tensor& r_m,
                           const TokenBatch& batch, const EncodeOptions& opt) {
  check_decode_batch(r_m, batch);
  Tensor g = run_stack(p.motion, r_m, nullptr, batch.valid, p.config.heads,
                       p.config.dropout, opt);
  int na = batch.padded_agents;
  MotionDecode out;
  out.hist = linear(slice_rows(g, 0, na), p.head_m_hist_w, p.head_m_hist_b);
  out.fut = linear(slice_rows(g, na, na), p.head_m_fut_w, p.head_m_fut_b);
  return out;
}

Generation generate(const ModelParams& p, const Tensor& z_e,
                    const TokenBatch& batch, const std::vector<Vec2>& last_obs,
                    const std::vector<uint8_t>& agent_is_target,
                    const EncodeOptions& opt) {
  (void)opt;
  if (!batch.history_only)
    throw std::invalid_argument("generate: expects the history+lane token layout");
  int na = batch.padded_agents;
  int k_modes = p.mode_emb.rows();
  if (static_cast<int>(last_obs.size()) != na ||
      static_cast<int>(agent_is_target.size()) != na)
    throw std::invalid_argument("generate: last_obs/target flags must cover padded agents");
  int n_targets = 0;
  for (int n = 0; n < batch.n_agents; ++n)
    if (agent_is_target[static_cast<size_t>(n)]) ++n_targets;
  if (n_targets == 0)
    throw std::invalid_argument("generate: no target agents in scene");

  Tensor agent_feats = slice_rows(z_e, 0, na);

  // base = row-repeated last observed positions, [na, T_f*2]
  int tf2 = p.config.t_future * 2;
  std::vector<double> base(static_cast<size_t>(na) * tf2);
  for (int n = 0; n < na; ++n)
    for (int t = 0; t < p.config.t_future; ++t) {
      base[static_cast<size_t>(n) * tf2 + 2 * t] = last_obs[static_cast<size_t>(n)].x;
      base[static_cast<size_t>(n) * tf2 + 2 * t + 1] = last_obs[static_cast<size_t>(n)].y;
    }
  Tensor base_t = Tensor::from({na, tf2}, std::move(base));

  // target-mean pooling row, zero weight on non-targets and padding
  std::vector<double> pool_w(static_cast<size_t>(na), 0.0);
  for (int n = 0; n < batch.n_agents; ++n)
    if (agent_is_target[static_cast<size_t>(n)])
      pool_w[static_cast<size_t>(n)] = 1.0 / n_targets;
  Tensor pool_row = Tensor::from({1, na}, std::move(pool_w));

  Generation gen;
  std::vector<Tensor> logit_parts;
  for (int k = 0; k < k_modes; ++k) {
    Tensor mode_rows = gather_rows(p.mode_emb, std::vector<int>(static_cast<size_t>(na), k));
    Tensor feat = concat_cols({agent_feats, mode_rows});
    Tensor hidden = gelu(linear(feat, p.gen1_w, p.gen1_b));
    Tensor offsets = linear(hidden, p.gen2_w, p.gen2_b);
    gen.worlds.push_back(add(offsets, base_t));
    Tensor pooled = matmul(pool_row, hidden);  // mean over target agents
    logit_parts.push_back(
        linear(gelu(linear(pooled, p.score1_w, p.score1_b)), p.score2_w, p.score2_b));
  }
  gen.logits = concat_cols(logit_parts);
  return gen;
}

}  // namespace mwf

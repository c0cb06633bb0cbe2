#include "vcdi/model.hpp"

#include <cmath>
#include <string>

#include "vcdi/errors.hpp"
#include "vcdi/rng.hpp"

namespace vcdi {
namespace {

// Fixed input scalings keeping first-layer activations O(1); raw tensors stay
// in meters so the cost/planning side can reuse them.
constexpr double kPosScale = 1.0 / 50.0;
constexpr double kVelScale = 1.0 / 10.0;
constexpr double kHeadingScale = 1.0 / 3.141592653589793;
constexpr double kLenScale = 1.0 / 5.0;
constexpr double kWidScale = 1.0 / 2.0;
constexpr double kLimitScale = 1.0 / 15.0;

Mat column_scale_tile(std::size_t rows, const std::vector<double>& scales) {
  Mat m(rows, scales.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < scales.size(); ++c) m(r, c) = scales[c];
  }
  return m;
}

Mat tile_column(const Mat& col, std::size_t cols) {
  Mat m(col.rows, cols);
  for (std::size_t r = 0; r < col.rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = col(r, 0);
  }
  return m;
}

void register_xavier(ParamStore& ps, Rng& rng, const std::string& name,
                     std::size_t rows, std::size_t cols) {
  ps.register_param(name, rows, cols);
  Mat& w = ps.value(name);
  const double lim = std::sqrt(6.0 / double(rows + cols));
  for (std::size_t i = 0; i < w.size(); ++i) {
    w.d[i] = (2.0 * rng.uniform() - 1.0) * lim;
  }
}

void register_zeros(ParamStore& ps, const std::string& name, std::size_t rows,
                    std::size_t cols) {
  ps.register_param(name, rows, cols);
}

void register_ones(ParamStore& ps, const std::string& name, std::size_t rows,
                   std::size_t cols) {
  ps.register_param(name, rows, cols);
  ps.value(name).fill(1.0);
}

void register_attention(ParamStore& ps, Rng& rng, const std::string& prefix,
                        std::size_t d) {
  register_ones(ps, prefix + "/ln_q_g", 1, d);
  register_zeros(ps, prefix + "/ln_q_b", 1, d);
  register_ones(ps, prefix + "/ln_kv_g", 1, d);
  register_zeros(ps, prefix + "/ln_kv_b", 1, d);
  register_xavier(ps, rng, prefix + "/wq", d, d);
  register_xavier(ps, rng, prefix + "/wk", d, d);
  register_xavier(ps, rng, prefix + "/wv", d, d);
  register_xavier(ps, rng, prefix + "/wo", d, d);
}

void register_ff(ParamStore& ps, Rng& rng, const std::string& prefix,
                 std::size_t d, std::size_t ff) {
  register_ones(ps, prefix + "/ln_g", 1, d);
  register_zeros(ps, prefix + "/ln_b", 1, d);
  register_xavier(ps, rng, prefix + "/w1", d, ff);
  register_zeros(ps, prefix + "/b1", 1, ff);
  register_xavier(ps, rng, prefix + "/w2", ff, d);
  register_zeros(ps, prefix + "/b2", 1, d);
}

// Pre-norm multi-head attention with a residual connection on the query side.
TapeValue attention_block(Tape& t, ParamStore& ps, const std::string& prefix,
                          TapeValue q_in, TapeValue kv_in, const Mat& allow,
                          int n_heads, int d_model) {
  const TapeValue qn = t.layer_norm_rows(q_in, t.param(ps, prefix + "/ln_q_g"),
                                         t.param(ps, prefix + "/ln_q_b"));
  const TapeValue kn =
      t.layer_norm_rows(kv_in, t.param(ps, prefix + "/ln_kv_g"),
                        t.param(ps, prefix + "/ln_kv_b"));
  const TapeValue q = t.matmul(qn, t.param(ps, prefix + "/wq"));
  const TapeValue k = t.matmul(kn, t.param(ps, prefix + "/wk"));
  const TapeValue v = t.matmul(kn, t.param(ps, prefix + "/wv"));
  const std::size_t dh = std::size_t(d_model) / std::size_t(n_heads);
  std::vector<TapeValue> heads;
  heads.reserve(std::size_t(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    const std::size_t c0 = std::size_t(h) * dh;
    const TapeValue qh = t.slice_cols(q, c0, c0 + dh);
    const TapeValue kh = t.slice_cols(k, c0, c0 + dh);
    const TapeValue vh = t.slice_cols(v, c0, c0 + dh);
    const TapeValue logits =
        t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(double(dh)));
    const TapeValue probs = t.masked_softmax_rows(logits, allow);
    heads.push_back(t.matmul(probs, vh));
  }
  const TapeValue mixed =
      t.matmul(t.concat_cols(heads), t.param(ps, prefix + "/wo"));
  return t.add(q_in, mixed);
}

// Pre-norm position-wise feed-forward with residual.
TapeValue ff_block(Tape& t, ParamStore& ps, const std::string& prefix,
                   TapeValue x) {
  const TapeValue xn = t.layer_norm_rows(x, t.param(ps, prefix + "/ln_g"),
                                         t.param(ps, prefix + "/ln_b"));
  const TapeValue h = t.relu_op(t.affine(xn, t.param(ps, prefix + "/w1"),
                                         t.param(ps, prefix + "/b1")));
  const TapeValue y =
      t.affine(h, t.param(ps, prefix + "/w2"), t.param(ps, prefix + "/b2"));
  return t.add(x, y);
}

struct CellParams {
  TapeValue wx, wh, b;
};

CellParams cell_params(Tape& t, ParamStore& ps, const std::string& prefix) {
  return {t.param(ps, prefix + "/wx"), t.param(ps, prefix + "/wh"),
          t.param(ps, prefix + "/b")};
}

// One gated recurrent step (input, forget, candidate, output gates; forget
// gate carries a fixed +1 bias for stable long-horizon memory).
void cell_step(Tape& t, const CellParams& p, TapeValue x, TapeValue& h,
               TapeValue& c, std::size_t d) {
  const TapeValue z = t.add(t.matmul(x, p.wx), t.affine(h, p.wh, p.b));
  const TapeValue gi = t.sigmoid_op(t.slice_cols(z, 0, d));
  const TapeValue gf =
      t.sigmoid_op(t.add_scalar(t.slice_cols(z, d, 2 * d), 1.0));
  const TapeValue gc = t.tanh_op(t.slice_cols(z, 2 * d, 3 * d));
  const TapeValue go = t.sigmoid_op(t.slice_cols(z, 3 * d, 4 * d));
  c = t.add(t.mul(gf, c), t.mul(gi, gc));
  h = t.mul(go, t.tanh_op(c));
}

std::vector<double> history_scales() {
  return {kPosScale, kPosScale, kHeadingScale, kVelScale,
          kVelScale, kLenScale, kWidScale,     1.0};
}

std::vector<double> lane_scales() {
  return {kPosScale, kPosScale, kPosScale,   kPosScale, kPosScale, kPosScale,
          kHeadingScale, kLimitScale, 1.0, 1.0, 1.0, 1.0};
}

std::vector<double> future_scales() {
  return {kPosScale, kPosScale, kHeadingScale, kVelScale};
}

}  // namespace

InteractionMasks build_interaction_masks(const InputTensors& in,
                                         const ModelConfig& cfg) {
  const int L = cfg.l_lanes;
  const int W = cfg.w_waypoints;
  const int C = cfg.c_crosswalks;
  const int P = cfg.p_points;
  InteractionMasks m;
  m.agent_agent = Mat(kNumSlots, kNumSlots);
  for (int i = 0; i < kNumSlots; ++i) {
    for (int j = 0; j < kNumSlots; ++j) {
      m.agent_agent(i, j) =
          (in.agent_mask(i, 0) != 0.0 && in.agent_mask(j, 0) != 0.0) ? 1.0
                                                                     : 0.0;
    }
  }
  m.agent_scene = Mat(kNumSlots, std::size_t(L + C));
  for (int i = 0; i < kNumSlots; ++i) {
    if (in.agent_mask(i, 0) == 0.0) continue;
    for (int l = 0; l < L; ++l) {
      bool any = false;
      for (int w = 0; w < W; ++w) {
        const std::size_t row = (std::size_t(i) * L + l) * std::size_t(W) + w;
        if (in.scene.lane_mask(row, 0) != 0.0) any = true;
      }
      m.agent_scene(i, l) = any ? 1.0 : 0.0;
    }
    for (int c = 0; c < C; ++c) {
      bool any = false;
      for (int p = 0; p < P; ++p) {
        const std::size_t row = (std::size_t(i) * C + c) * std::size_t(P) + p;
        if (in.scene.cw_mask(row, 0) != 0.0) any = true;
      }
      m.agent_scene(i, std::size_t(L + c)) = any ? 1.0 : 0.0;
    }
  }
  m.action_action = Mat(kFutureSteps, kFutureSteps);
  for (int r = 0; r < kFutureSteps; ++r) {
    for (int c = 0; c <= r; ++c) m.action_action(r, c) = 1.0;
  }
  return m;
}

void init_model_params(ParamStore& ps, const ModelConfig& cfg,
                       std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = std::size_t(cfg.d_model);
  const std::size_t ff = std::size_t(cfg.ff_dim);

  register_xavier(ps, rng, "scene/lane_w1", kLaneFeatDim, d);
  register_zeros(ps, "scene/lane_b1", 1, d);
  register_xavier(ps, rng, "scene/lane_w2", d, d);
  register_zeros(ps, "scene/lane_b2", 1, d);
  register_xavier(ps, rng, "scene/cw_w1", kCwFeatDim, d);
  register_zeros(ps, "scene/cw_b1", 1, d);
  register_xavier(ps, rng, "scene/cw_w2", d, d);
  register_zeros(ps, "scene/cw_b2", 1, d);

  register_xavier(ps, rng, "hist/wx", kHistFeatDim, 4 * d);
  register_xavier(ps, rng, "hist/wh", d, 4 * d);
  register_zeros(ps, "hist/b", 1, 4 * d);

  register_xavier(ps, rng, "fut/wx", 4, 4 * d);
  register_xavier(ps, rng, "fut/wh", d, 4 * d);
  register_zeros(ps, "fut/b", 1, 4 * d);
  register_attention(ps, rng, "fut/attn", d);

  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string p = "ix" + std::to_string(i);
    register_attention(ps, rng, p + "/act_attn", d);
    register_ff(ps, rng, p + "/act_ff", d, ff);
    register_attention(ps, rng, p + "/ag_attn", d);
    register_attention(ps, rng, p + "/sc_attn", d);
    register_attention(ps, rng, p + "/xa_attn", d);
    register_ff(ps, rng, p + "/ag_ff", d, ff);
  }

  for (int k = 0; k < cfg.k_modes; ++k) {
    const std::string p = "dec/mode" + std::to_string(k);
    register_xavier(ps, rng, p + "/w1", d, ff);
    register_zeros(ps, p + "/b1", 1, ff);
    register_xavier(ps, rng, p + "/w2", ff, std::size_t(kFutureSteps) * 2);
    register_zeros(ps, p + "/b2", 1, std::size_t(kFutureSteps) * 2);
  }
  // Bias-free so fully-masked (zero) rows score uniformly.
  register_xavier(ps, rng, "dec/score_w", d, std::size_t(cfg.k_modes));
}

SceneEmbeds encode_scene(Tape& t, ParamStore& ps, TapeValue lane_feat,
                         TapeValue cw_feat, const SceneContext& scene) {
  const Mat& lv = t.value(lane_feat);
  const Mat& cv = t.value(cw_feat);
  const TapeValue lx =
      t.mul_mask(lane_feat, column_scale_tile(lv.rows, lane_scales()));
  const TapeValue lh = t.relu_op(t.affine(lx, t.param(ps, "scene/lane_w1"),
                                          t.param(ps, "scene/lane_b1")));
  const TapeValue ly = t.affine(lh, t.param(ps, "scene/lane_w2"),
                                t.param(ps, "scene/lane_b2"));
  const TapeValue cx = t.mul_mask(
      cw_feat, column_scale_tile(cv.rows, {kPosScale, kPosScale}));
  const TapeValue ch = t.relu_op(t.affine(cx, t.param(ps, "scene/cw_w1"),
                                          t.param(ps, "scene/cw_b1")));
  const TapeValue cy = t.affine(ch, t.param(ps, "scene/cw_w2"),
                                t.param(ps, "scene/cw_b2"));
  return {t.rowgroup_max(ly, scene.lane_mask,
                         std::size_t(scene.w_waypoints)),
          t.rowgroup_max(cy, scene.cw_mask, std::size_t(scene.p_points))};
}

TapeValue encode_histories(Tape& t, ParamStore& ps, TapeValue history,
                           const Mat& agent_mask, const ModelConfig& cfg) {
  const std::size_t d = std::size_t(cfg.d_model);
  const TapeValue scaled = t.mul_mask(
      history,
      column_scale_tile(t.value(history).rows, history_scales()));
  const CellParams p = cell_params(t, ps, "hist");
  TapeValue h = t.input(Mat(kNumSlots, d), "h0");
  TapeValue c = t.input(Mat(kNumSlots, d), "c0");
  for (int step = 0; step < kHistorySteps; ++step) {
    const TapeValue x = t.slice_rows(scaled, std::size_t(step) * kNumSlots,
                                     std::size_t(step + 1) * kNumSlots);
    cell_step(t, p, x, h, c, d);
  }
  return t.mul_mask(h, tile_column(agent_mask, d));
}

TapeValue encode_vut_future(Tape& t, ParamStore& ps, TapeValue vut_future,
                            const ModelConfig& cfg) {
  const std::size_t d = std::size_t(cfg.d_model);
  const TapeValue scaled = t.mul_mask(
      vut_future, column_scale_tile(kFutureSteps, future_scales()));
  const CellParams p = cell_params(t, ps, "fut");
  TapeValue h = t.input(Mat(1, d), "fh0");
  TapeValue c = t.input(Mat(1, d), "fc0");
  std::vector<TapeValue> steps;
  steps.reserve(kFutureSteps);
  for (int step = 0; step < kFutureSteps; ++step) {
    const TapeValue x =
        t.slice_rows(scaled, std::size_t(step), std::size_t(step) + 1);
    cell_step(t, p, x, h, c, d);
    steps.push_back(h);
  }
  const TapeValue seq = t.concat_rows(steps);
  Mat causal(kFutureSteps, kFutureSteps);
  for (int r = 0; r < kFutureSteps; ++r) {
    for (int cc = 0; cc <= r; ++cc) causal(r, cc) = 1.0;
  }
  return attention_block(t, ps, "fut/attn", seq, seq, causal, cfg.n_heads,
                         cfg.d_model);
}

FusedEncodings interaction_encode(Tape& t, ParamStore& ps, const Embeds& e,
                                  const InteractionMasks& m,
                                  const Mat& agent_mask,
                                  const ModelConfig& cfg) {
  const std::size_t d = std::size_t(cfg.d_model);
  const int L = cfg.l_lanes;
  const int C = cfg.c_crosswalks;
  const Mat mask_tile = tile_column(agent_mask, d);
  auto re_mask = [&](TapeValue x) { return t.mul_mask(x, mask_tile); };

  const TapeValue scene_kv = t.concat_rows({e.lane_emb, e.cw_emb});
  // Expand the per-slot availability mask onto the stacked lane/crosswalk
  // rows: slot i may only attend to its own elements.
  const std::size_t lane_rows = std::size_t(kNumSlots) * std::size_t(L);
  Mat scene_allow(kNumSlots, t.value(scene_kv).rows);
  for (int i = 0; i < kNumSlots; ++i) {
    for (int l = 0; l < L; ++l) {
      scene_allow(i, std::size_t(i) * L + l) = m.agent_scene(i, l);
    }
    for (int c = 0; c < C; ++c) {
      scene_allow(i, lane_rows + std::size_t(i) * C + c) =
          m.agent_scene(i, std::size_t(L + c));
    }
  }
  Mat agent_action_allow(kNumSlots, kFutureSteps);
  for (int i = 0; i < kNumSlots; ++i) {
    for (int s = 0; s < kFutureSteps; ++s) {
      agent_action_allow(i, s) = agent_mask(i, 0);
    }
  }

  TapeValue ag = e.agent_emb;
  TapeValue act = e.vut_future_emb;
  for (int layer = 0; layer < cfg.n_layers; ++layer) {
    const std::string p = "ix" + std::to_string(layer);
    if (e.has_future) {
      act = attention_block(t, ps, p + "/act_attn", act, act, m.action_action,
                            cfg.n_heads, cfg.d_model);
      act = ff_block(t, ps, p + "/act_ff", act);
    }
    ag = re_mask(attention_block(t, ps, p + "/ag_attn", ag, ag, m.agent_agent,
                                 cfg.n_heads, cfg.d_model));
    ag = re_mask(attention_block(t, ps, p + "/sc_attn", ag, scene_kv,
                                 scene_allow, cfg.n_heads, cfg.d_model));
    if (e.has_future) {
      ag = re_mask(attention_block(t, ps, p + "/xa_attn", ag, act,
                                   agent_action_allow, cfg.n_heads,
                                   cfg.d_model));
    }
    ag = re_mask(ff_block(t, ps, p + "/ag_ff", ag));
  }
  FusedEncodings out;
  out.fused = ag;
  out.actions = act;
  out.has_actions = e.has_future;
  return out;
}

DecodeOut decode(Tape& t, ParamStore& ps, TapeValue fused,
                 const Mat& t0_positions, const Mat& agent_mask,
                 const ModelConfig& cfg) {
  const TapeValue agents = t.slice_rows(fused, 1, kNumSlots);
  Mat t0_tile(kNumAgents, std::size_t(kFutureSteps) * 2);
  Mat valid_tile(kNumAgents, std::size_t(kFutureSteps) * 2);
  for (int a = 0; a < kNumAgents; ++a) {
    for (int s = 0; s < kFutureSteps; ++s) {
      t0_tile(a, 2 * s) = t0_positions(a + 1, 0);
      t0_tile(a, 2 * s + 1) = t0_positions(a + 1, 1);
    }
    const double v = agent_mask(a + 1, 0);
    for (std::size_t c = 0; c < valid_tile.cols; ++c) valid_tile(a, c) = v;
  }

  DecodeOut out;
  out.modes.reserve(std::size_t(cfg.k_modes));
  for (int k = 0; k < cfg.k_modes; ++k) {
    const std::string p = "dec/mode" + std::to_string(k);
    const TapeValue h = t.relu_op(
        t.affine(agents, t.param(ps, p + "/w1"), t.param(ps, p + "/b1")));
    const TapeValue off =
        t.affine(h, t.param(ps, p + "/w2"), t.param(ps, p + "/b2"));
    const TapeValue pos =
        t.add(t.cumsum_pairs_rows(off), t.input(t0_tile, "t0"));
    out.modes.push_back(t.mul_mask(pos, valid_tile));
  }
  out.score_logits = t.matmul(agents, t.param(ps, "dec/score_w"));
  out.scores = t.softmax_rows(out.score_logits);
  return out;
}

ForwardOut model_forward(Tape& t, ParamStore& ps, const InputTensors& in,
                         const ModelConfig& cfg, bool no_augment) {
  const TapeValue lane_feat = t.input(in.scene.lane_feat, "lane_feat");
  const TapeValue cw_feat = t.input(in.scene.cw_feat, "cw_feat");
  const TapeValue history = t.input(in.history, "history");

  Embeds e;
  const SceneEmbeds scene = encode_scene(t, ps, lane_feat, cw_feat, in.scene);
  e.lane_emb = scene.lane_emb;
  e.cw_emb = scene.cw_emb;
  e.agent_emb = encode_histories(t, ps, history, in.agent_mask, cfg);
  e.has_future = !no_augment;
  if (e.has_future) {
    const TapeValue vut_future = t.input(in.vut_future, "vut_future");
    e.vut_future_emb = encode_vut_future(t, ps, vut_future, cfg);
  }

  const InteractionMasks masks = build_interaction_masks(in, cfg);
  ForwardOut out;
  out.fused = interaction_encode(t, ps, e, masks, in.agent_mask, cfg);
  out.dec = decode(t, ps, out.fused.fused, in.t0_positions, in.agent_mask,
                   cfg);
  return out;
}

ModelOutput run_model(ParamStore& ps, const InputTensors& in,
                      const ModelConfig& cfg, bool no_augment) {
  Tape t;
  const ForwardOut f = model_forward(t, ps, in, cfg, no_augment);
  ModelOutput out;
  out.k_modes = cfg.k_modes;
  for (int a = 0; a < kNumAgents; ++a) {
    out.agent_mask[std::size_t(a)] = in.agent_mask(a + 1, 0) != 0.0;
  }
  out.modes.reserve(f.dec.modes.size());
  for (const TapeValue& m : f.dec.modes) out.modes.push_back(t.value(m));
  out.scores = t.value(f.dec.scores);
  return out;
}

Mat select_most_likely(const ModelOutput& out) {
  Mat best(kNumAgents, std::size_t(kFutureSteps) * 2);
  for (int a = 0; a < kNumAgents; ++a) {
    std::size_t k_best = 0;
    for (int k = 1; k < out.k_modes; ++k) {
      if (out.scores(a, k) > out.scores(a, k_best)) {
        k_best = std::size_t(k);
      }
    }
    for (std::size_t c = 0; c < best.cols; ++c) {
      best(a, c) = out.modes[k_best](a, c);
    }
  }
  return best;
}

}  // namespace vcdi

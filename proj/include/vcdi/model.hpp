#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "vcdi/config.hpp"
#include "vcdi/features.hpp"
#include "vcdi/param_store.hpp"
#include "vcdi/tape.hpp"

namespace vcdi {

// Boolean interaction graphs as 0/1 mats.
struct InteractionMasks {
  Mat agent_agent;    // 11 x 11: valid pairs (VUT slot included)
  Mat agent_scene;    // 11 x (L + C): per-slot own-element availability
  Mat action_action;  // 50 x 50: causal, row t allows columns <= t
};

InteractionMasks build_interaction_masks(const InputTensors& in,
                                         const ModelConfig& cfg);

// Registers all network parameters in a fixed order with deterministic
// scaled-uniform init (biases and norm offsets zero, norm gains one).
void init_model_params(ParamStore& store, const ModelConfig& cfg,
                       std::uint64_t seed);

struct SceneEmbeds {
  TapeValue lane_emb;  // (11*L) x D
  TapeValue cw_emb;    // (11*C) x D
};

// Shared two-layer MLP per waypoint/perimeter point, masked max-pool within
// each lane/crosswalk. Fully-masked elements embed to zero.
SceneEmbeds encode_scene(Tape& t, ParamStore& ps, TapeValue lane_feat,
                         TapeValue cw_feat, const SceneContext& scene);

// Shared gated recurrent cell over the 20 history steps, batched over the 11
// slots; the final hidden state is the embedding. Masked slots embed to zero.
TapeValue encode_histories(Tape& t, ParamStore& ps, TapeValue history,
                           const Mat& agent_mask, const ModelConfig& cfg);

// Recurrent pass over the 50 future steps followed by one causal
// self-attention layer; returns the [50 x D] action sequence encoding.
TapeValue encode_vut_future(Tape& t, ParamStore& ps, TapeValue vut_future,
                            const ModelConfig& cfg);

struct FusedEncodings {
  TapeValue fused;    // 11 x D, zero rows for masked slots
  TapeValue actions;  // final action sequence (50 x D); unset if !has_actions
  bool has_actions = false;
};

struct Embeds {
  TapeValue agent_emb;
  TapeValue lane_emb;
  TapeValue cw_emb;
  TapeValue vut_future_emb;  // ignored when has_future is false
  bool has_future = false;
};

// Two pre-norm interaction layers. Each layer refreshes the action sequence
// (causal self-attention + feed-forward) and updates agent rows through
// agent-agent self-attention, agent-scene cross-attention, agent-action
// cross-attention, and a feed-forward map; masked rows are re-zeroed after
// every block. When has_future is false the action path is skipped entirely.
FusedEncodings interaction_encode(Tape& t, ParamStore& ps, const Embeds& e,
                                  const InteractionMasks& m,
                                  const Mat& agent_mask,
                                  const ModelConfig& cfg);

struct DecodeOut {
  std::vector<TapeValue> modes;  // K values, each 10 x 100: interleaved x, y
  TapeValue score_logits;        // 10 x K (pre-softmax, for losses)
  TapeValue scores;              // 10 x K, rows sum to 1
};

// K mode heads emit per-step displacements accumulated from each agent's t0
// position; a bias-free score head normalizes to mode probabilities. Masked
// agents produce all-zero trajectories and uniform scores.
DecodeOut decode(Tape& t, ParamStore& ps, TapeValue fused,
                 const Mat& t0_positions, const Mat& agent_mask,
                 const ModelConfig& cfg);

struct ForwardOut {
  DecodeOut dec;
  FusedEncodings fused;
};

ForwardOut model_forward(Tape& t, ParamStore& ps, const InputTensors& in,
                         const ModelConfig& cfg, bool no_augment);

// Plain-value snapshot of one forward pass.
struct ModelOutput {
  int k_modes = 0;
  std::array<bool, kNumAgents> agent_mask{};
  std::vector<Mat> modes;  // K mats, 10 x 100 positions (x, y interleaved)
  Mat scores;              // 10 x K
};

ModelOutput run_model(ParamStore& ps, const InputTensors& in,
                      const ModelConfig& cfg, bool no_augment);

// Per agent, the highest-scoring mode's trajectory (ties to the smaller mode
// index); rows are agents, columns interleaved x, y over the 50 steps.
Mat select_most_likely(const ModelOutput& out);

}  // namespace vcdi

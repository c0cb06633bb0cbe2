#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vcdi/checkpoint.hpp"
#include "vcdi/config.hpp"
#include "vcdi/cost.hpp"
#include "vcdi/model.hpp"
#include "vcdi/scenario.hpp"

namespace vcdi {

using AgentFutures = std::array<std::array<Vec2, kFutureSteps>, kNumAgents>;

// Per agent, the mode index with the smallest mean Euclidean displacement
// against the logged future (ties to the smaller index); -1 for masked slots.
std::array<int, kNumAgents> closest_modes(const ModelOutput& out,
                                          const AgentFutures& truth);

// Smooth-L1 (quadratic inside 1 m, linear outside) between each valid agent's
// closest mode and its logged future, summed per coordinate and averaged over
// valid agents and steps. No valid agents -> 0.
double prediction_loss(const ModelOutput& out, const AgentFutures& truth);

// Cross-entropy between the score rows and the closest-mode index, averaged
// over valid agents. No valid agents -> 0.
double score_loss(const ModelOutput& out, const AgentFutures& truth);

// Mean squared positional gap between the planned and logged VUT futures
// (squared distance per step, averaged over the 50 steps).
double imitation_loss(const VutFuturePlan& planned, const VutFuturePlan& truth);

// Cost of the planned trajectory under the current mean key.
double planning_cost_term(const VutFuturePlan& planned, const CostWeights& key,
                          const SceneContext& scene);

struct LossBreakdown {
  double prediction = 0.0;
  double score = 0.0;
  double imitation = 0.0;
  double planning = 0.0;
  double total = 0.0;
};

// Planner output for one frame plus the key it was planned under; the plan
// enters the composite as data, not as a function of the network weights.
struct FramePlan {
  VutFuturePlan planned;
  CostWeights key;
};

struct CompositeGraph {
  TapeValue total;       // 1 x 1 node, ready for backward
  LossBreakdown values;  // plain values of all four terms and the blend
};

// One forward pass plus all four loss terms on the caller's tape. The blended
// total skips zero-lambda terms entirely, so their graphs never receive
// gradient; the breakdown still reports every term's value. The frame must be
// in the VUT local frame.
CompositeGraph composite_loss_graph(Tape& t, ParamStore& ps, const Frame& frame,
                                    const FramePlan& aux,
                                    const EngineConfig& cfg);

// Value-only convenience wrapper over a throwaway tape.
LossBreakdown composite_loss(ParamStore& ps, const Frame& frame,
                             const FramePlan& aux, const EngineConfig& cfg);

struct TrainLogRow {
  int step = 0;
  LossBreakdown loss;    // batch-averaged
  double wall_seconds = 0.0;
};

struct TrainResult {
  ParamStore params;
  DistributionalCostWeights cost_dist;
  std::vector<TrainLogRow> trace;
};

// Minibatch gradient descent with momentum and a global gradient-norm clip;
// the learning rate ramps linearly over the first 100 steps and decays along
// a half-cosine to zero across the configured run.
// Frames are consumed cyclically in dataset order; inference is conditioned
// on each frame's logged VUT future. Every fit_interval steps the cost
// weights are refit against the frame demonstrations and folded into the
// weight distribution as one Bayesian observation; VUT plans are re-planned
// under the new mean key. Deterministic per (dataset, config). A non-finite
// loss aborts with a NumericError naming the step and term.
TrainResult train(const std::vector<Frame>& dataset, const EngineConfig& cfg);

// CSV rendering of the loss trace: one header plus one row per step. Wall
// time is the only non-reproducible column.
std::string format_train_log(const std::vector<TrainLogRow>& trace);

// Network weights plus the cost-weight distribution in one numeric bundle.
Checkpoint make_train_checkpoint(const TrainResult& result,
                                 const EngineConfig& cfg);
void load_train_state(const Checkpoint& ck, ParamStore& ps,
                      DistributionalCostWeights& dist);

struct Metrics {
  double ade = 0.0;     // mean displacement over all valid agents and steps
  double fde_1s = 0.0;  // displacement at step 10
  double fde_3s = 0.0;  // displacement at step 30
  double fde_5s = 0.0;  // displacement at step 50
  std::size_t n_frames = 0;
  std::size_t n_agents = 0;  // valid agents summed over frames
};

// Displacement metrics of the most-likely mode against the logged futures;
// masked agents are excluded. No valid agents -> zero metrics.
Metrics evaluate_ade_fde(ParamStore& ps, const std::vector<Frame>& dataset,
                         const EngineConfig& cfg);

}  // namespace vcdi

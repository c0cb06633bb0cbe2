#pragma once

#include <vector>

#include "vcdi/config.hpp"
#include "vcdi/cost.hpp"
#include "vcdi/scenario.hpp"

namespace vcdi {

struct CandidateSet {
  std::vector<VutFuturePlan> candidates;
};

// Lattice of target speeds (0 to 110% of the matched lane's limit) crossed
// with lateral end-offsets, rolled out along the VUT's best-matching lane:
// constant-acceleration ramps longitudinally, quintic ease curves laterally.
// Candidates failing the kinematic audit (longitudinal accel in [-8, 4],
// |curvature| <= 0.2 while moving) are dropped; if everything drops, the
// maximal-braking profile holding the current lateral offset is returned.
// The frame must be local; throws PlanningError when no lane matches.
CandidateSet generate_candidates(const Frame& frame, const PlannerBlock& cfg);

// Picks the candidate with the lowest cost under the key (ties to the
// smaller index), then runs up to refine_steps of gradient descent on the
// trajectory coordinates with backtracking: a step is kept only if it stays
// kinematically feasible and strictly lowers the cost, so the result never
// costs more than the best lattice candidate. Deterministic.
VutFuturePlan plan_vut_trajectory(const Frame& frame, const CostWeights& key,
                                  const PlannerBlock& planner,
                                  const ModelConfig& model);

}  // namespace vcdi

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vcdi/features.hpp"
#include "vcdi/scenario.hpp"
#include "vcdi/tape.hpp"

namespace vcdi {

inline constexpr int kNumCostFeatures = 7;
inline constexpr double kWheelbase = 2.8;  // steering-angle proxy, meters

// Fixed feature order used everywhere (tensors, files, reports).
extern const std::array<const char*, kNumCostFeatures> kCostFeatureNames;

// Mean-squared driving deviations over the 50-step horizon:
//   speed      (speed - lane speed limit)^2            (m/s)^2
//   accel      longitudinal acceleration^2             (m/s^2)^2
//   jerk       longitudinal jerk^2                     (m/s^3)^2
//   steer      (path curvature * wheelbase)^2          rad^2
//   steer_rate steering-proxy change rate^2            (rad/s)^2
//   center     lateral offset from nearest waypoint^2  m^2
//   direction  heading deviation from lane heading^2   rad^2
struct CostFeatureVector {
  std::array<double, kNumCostFeatures> f{};
};

// One sampled/selected "key": nonnegative weight per feature.
struct CostWeights {
  std::array<double, kNumCostFeatures> w{};
};

// Independent Gaussian per weight.
struct DistributionalCostWeights {
  std::array<double, kNumCostFeatures> mu{};
  std::array<double, kNumCostFeatures> sigma2{};
};

Mat plan_positions(const VutFuturePlan& plan);  // 50 x 2

// Columnwise time derivative at 10 Hz: central differences inside,
// second-order one-sided stencils at both ends. Needs >= 3 rows.
Mat fd_rows(const Mat& x);

// Derivatives via central differences at 10 Hz with second-order one-sided
// endpoints; lateral offset and heading deviation are measured against the
// nearest unmasked VUT (slot 0) lane waypoint per step. Throws FeatureError
// when the scene holds no usable lane waypoint.
CostFeatureVector extract_cost_features(const VutFuturePlan& traj,
                                        const SceneContext& scene);

// cost = sum_i w_i * f_i.
double evaluate_cost(const VutFuturePlan& traj, const CostWeights& weights,
                     const SceneContext& scene);

// Same features built as tape ops over a 50 x 2 position node, so the cost is
// differentiable with respect to the trajectory coordinates. Matches the
// plain path to 1e-12 (identical formulas, identical guards).
std::array<TapeValue, kNumCostFeatures> extract_cost_features_tape(
    Tape& t, TapeValue xy, const SceneContext& scene);
TapeValue evaluate_cost_tape(Tape& t, TapeValue xy, const CostWeights& weights,
                             const SceneContext& scene);

struct FitDemo {
  VutFuturePlan truth;
  std::vector<VutFuturePlan> candidates;  // includes the truth trajectory
  SceneContext scene;
};

struct FitOptions {
  double margin = 0.1;
  double learning_rate = 0.05;
  int steps = 200;
  double tolerance = 1e-10;
  CostWeights init{{1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0}};
};

// Projected gradient descent on the mean hinge margin: the truth trajectory
// should undercut every distinct candidate's cost by `margin`. Candidates
// whose features equal the truth's are not competitors and are skipped; if no
// demo retains a competitor, the fit is degenerate.
CostWeights fit_weights(const std::vector<FitDemo>& demos,
                        const FitOptions& opt = {});

// Conjugate per-coordinate Gaussian update with known observation noise.
DistributionalCostWeights bayesian_update(
    const DistributionalCostWeights& prior,
    const std::vector<CostWeights>& observed,
    const std::array<double, kNumCostFeatures>& obs_noise_var);

// Per-coordinate Gaussian draw, clamped at 0; deterministic per seed.
CostWeights sample_key(const DistributionalCostWeights& dist,
                       std::uint64_t seed);
// Targeted selection: mu + offsets (.) sqrt(sigma2), clamped at 0.
CostWeights select_key(const DistributionalCostWeights& dist,
                       const std::array<double, kNumCostFeatures>& offsets);

// Versioned text formats ("vcdi_key_v1" / "vcdi_dist_v1").
void save_key(const std::string& path, const CostWeights& key);
CostWeights load_key(const std::string& path);
void save_dist(const std::string& path, const DistributionalCostWeights& d);
DistributionalCostWeights load_dist(const std::string& path);

}  // namespace vcdi

#include <cmath>
#include <vector>

#include "doctest.h"
#include "test_support.hpp"
#include "vcdi/config.hpp"
#include "vcdi/cost.hpp"
#include "vcdi/errors.hpp"
#include "vcdi/features.hpp"
#include "vcdi/geometry.hpp"
#include "vcdi/planner.hpp"

using vcdi::CandidateSet;
using vcdi::CostWeights;
using vcdi::Frame;
using vcdi::kFutureSteps;
using vcdi::Mat;
using vcdi::ModelConfig;
using vcdi::PlannerBlock;
using vcdi::VutFuturePlan;

namespace {

// Local frame: VUT at the origin moving along +x at v0, one straight lane
// at y = 0 with waypoints every 2 m from x = -10 to x = 80.
Frame straight_frame(double v0, double limit = 10.0) {
  Frame f;
  f.t0 = 19;
  f.is_local = true;
  f.vut_history.agent_id = -1;
  for (std::size_t t = 0; t < vcdi::kHistorySteps; ++t) {
    auto& s = f.vut_history.states[t];
    s.x = (double(t) - 19.0) * v0 * vcdi::kDt;
    s.vx = v0;
    s.length = 4.5;
    s.width = 1.8;
    s.valid = true;
  }
  vcdi::LanePolyline lane;
  for (int i = 0; i <= 45; ++i) {
    vcdi::LaneWaypoint wp;
    const double x = -10.0 + 2.0 * i;
    wp.center = {x, 0.0};
    wp.left = {x, 1.8};
    wp.right = {x, -1.8};
    wp.heading = 0.0;
    wp.speed_limit = limit;
    lane.waypoints.push_back(wp);
  }
  f.scene.lanes.push_back(lane);
  for (std::size_t t = 0; t < kFutureSteps; ++t) {
    f.vut_future_truth.states[t].x = v0 * vcdi::kDt * double(t + 1);
    f.vut_future_truth.states[t].speed = v0;
  }
  return f;
}

// Independent finite-difference audit mirroring the documented bounds:
// longitudinal accel in [-8, 4] everywhere, |curvature| <= 0.2 while the
// finite-difference speed exceeds 0.5 m/s. Anchored at the origin.
bool oracle_feasible(const VutFuturePlan& p) {
  const std::size_t n = kFutureSteps + 1;
  std::vector<double> x(n, 0.0), y(n, 0.0);
  for (std::size_t k = 0; k < kFutureSteps; ++k) {
    x[k + 1] = p.states[k].x;
    y[k + 1] = p.states[k].y;
  }
  const auto fd = [&](const std::vector<double>& f) {
    std::vector<double> d(n);
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) * 5.0;
    for (std::size_t k = 1; k + 1 < n; ++k) d[k] = (f[k + 1] - f[k - 1]) * 5.0;
    d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) * 5.0;
    return d;
  };
  const auto vx = fd(x), vy = fd(y);
  std::vector<double> speed(n);
  for (std::size_t k = 0; k < n; ++k) speed[k] = std::hypot(vx[k], vy[k]);
  const auto along = fd(speed), ax = fd(vx), ay = fd(vy);
  for (std::size_t k = 0; k < n; ++k) {
    if (along[k] < -8.0 - 1e-5 || along[k] > 4.0 + 1e-5) return false;
    if (speed[k] >= 0.5) {
      const double q = vx[k] * vx[k] + vy[k] * vy[k] + 1e-2;
      const double kappa =
          (vx[k] * ay[k] - vy[k] * ax[k]) / (std::sqrt(q) * q);
      if (std::abs(kappa) > 0.2 + 1e-5) return false;
    }
  }
  return true;
}

double arc_length(const VutFuturePlan& p) {
  double total = std::hypot(p.states[0].x, p.states[0].y);
  for (std::size_t k = 1; k < kFutureSteps; ++k) {
    total += std::hypot(p.states[k].x - p.states[k - 1].x,
                        p.states[k].y - p.states[k - 1].y);
  }
  return total;
}

bool same_positions(const VutFuturePlan& a, const VutFuturePlan& b) {
  for (std::size_t k = 0; k < kFutureSteps; ++k) {
    if (a.states[k].x != b.states[k].x || a.states[k].y != b.states[k].y) {
      return false;
    }
  }
  return true;
}

CostWeights key_of(std::initializer_list<double> vals) {
  CostWeights w;
  std::size_t i = 0;
  for (const double v : vals) w.w[i++] = v;
  REQUIRE(i == w.w.size());
  return w;
}

}  // namespace

TEST_CASE("a full lattice survives the audit on an open straight lane") {
  const Frame f = straight_frame(8.0);
  const PlannerBlock cfg;
  const CandidateSet set = vcdi::generate_candidates(f, cfg);
  CHECK(set.candidates.size() ==
        std::size_t(cfg.n_speeds) * std::size_t(cfg.n_lateral));
  for (const VutFuturePlan& c : set.candidates) CHECK(oracle_feasible(c));
}

TEST_CASE("a stationary VUT gets the all-stop candidate") {
  const Frame f = straight_frame(0.0);
  const CandidateSet set = vcdi::generate_candidates(f, PlannerBlock{});
  bool found_stop = false;
  for (const VutFuturePlan& c : set.candidates) {
    double max_dev = 0.0;
    for (const auto& s : c.states) {
      max_dev = std::max(max_dev, std::hypot(s.x, s.y));
    }
    if (max_dev <= 1e-9) found_stop = true;
    CHECK(oracle_feasible(c));
  }
  CHECK(found_stop);
}

TEST_CASE("candidate speeds sweep from zero to ten percent past the limit") {
  const Frame f = straight_frame(8.0, 10.0);
  const CandidateSet set = vcdi::generate_candidates(f, PlannerBlock{});
  double slowest = 1e9, fastest = 0.0;
  for (const VutFuturePlan& c : set.candidates) {
    slowest = std::min(slowest, c.states.back().speed);
    fastest = std::max(fastest, c.states.back().speed);
  }
  CHECK(slowest <= 0.01);           // full-stop target reached within 5 s
  CHECK(fastest >= 11.0 - 1e-6);    // 1.1 * limit
  CHECK(fastest <= 11.0 + 1e-6);
}

TEST_CASE("planning needs a lane near the VUT") {
  Frame f = straight_frame(8.0);
  Frame no_lanes = f;
  no_lanes.scene.lanes.clear();
  CHECK_THROWS_AS(vcdi::generate_candidates(no_lanes, PlannerBlock{}),
                  vcdi::PlanningError);

  Frame far = f;
  for (auto& wp : far.scene.lanes[0].waypoints) {
    wp.center.y += 200.0;
    wp.left.y += 200.0;
    wp.right.y += 200.0;
  }
  CHECK_THROWS_AS(vcdi::generate_candidates(far, PlannerBlock{}),
                  vcdi::PlanningError);

  Frame not_local = f;
  not_local.is_local = false;
  CHECK_THROWS_AS(vcdi::generate_candidates(not_local, PlannerBlock{}),
                  vcdi::ValidationError);
}

TEST_CASE("the planner returns the brute-force cost argmin before refining") {
  const Frame f = straight_frame(8.0);
  PlannerBlock cfg;
  cfg.refine_steps = 0;
  const ModelConfig model;
  const CostWeights key = key_of({0.7, 1.3, 0.2, 1.0, 0.4, 2.0, 0.9});

  const CandidateSet set = vcdi::generate_candidates(f, cfg);
  const vcdi::SceneContext scene = vcdi::assemble_inputs(f, model).scene;
  std::size_t best = 0;
  double best_cost = vcdi::evaluate_cost(set.candidates[0], key, scene);
  for (std::size_t i = 1; i < set.candidates.size(); ++i) {
    const double c = vcdi::evaluate_cost(set.candidates[i], key, scene);
    if (c < best_cost) {
      best_cost = c;
      best = i;
    }
  }
  const VutFuturePlan plan = vcdi::plan_vut_trajectory(f, key, cfg, model);
  CHECK(same_positions(plan, set.candidates[best]));
}

TEST_CASE("a singleton candidate set is returned as-is") {
  const Frame f = straight_frame(8.0);
  PlannerBlock cfg;
  cfg.n_speeds = 1;
  cfg.n_lateral = 1;
  cfg.refine_steps = 0;
  const CandidateSet set = vcdi::generate_candidates(f, cfg);
  REQUIRE(set.candidates.size() == 1);
  const VutFuturePlan plan = vcdi::plan_vut_trajectory(
      f, key_of({1, 1, 1, 1, 1, 1, 1}), cfg, ModelConfig{});
  CHECK(same_positions(plan, set.candidates[0]));
}

TEST_CASE("of two candidates the strictly cheaper one wins") {
  const Frame f = straight_frame(8.0, 10.0);
  PlannerBlock cfg;
  cfg.n_speeds = 2;  // targets 0 and 11 m/s
  cfg.n_lateral = 1;
  cfg.refine_steps = 0;
  const ModelConfig model;
  const CostWeights key = key_of({1, 0, 0, 0, 0, 0, 0});  // speed tracking only

  const CandidateSet set = vcdi::generate_candidates(f, cfg);
  REQUIRE(set.candidates.size() == 2);
  const vcdi::SceneContext scene = vcdi::assemble_inputs(f, model).scene;
  const double c0 = vcdi::evaluate_cost(set.candidates[0], key, scene);
  const double c1 = vcdi::evaluate_cost(set.candidates[1], key, scene);
  REQUIRE(c0 != c1);
  const VutFuturePlan plan = vcdi::plan_vut_trajectory(f, key, cfg, model);
  CHECK(same_positions(plan, set.candidates[c1 < c0 ? 1 : 0]));
}

TEST_CASE("refinement never raises the cost and stays feasible") {
  const Frame f = straight_frame(8.0);
  const ModelConfig model;
  const CostWeights key = key_of({0.7, 1.3, 0.2, 1.0, 0.4, 2.0, 0.9});
  const vcdi::SceneContext scene = vcdi::assemble_inputs(f, model).scene;

  PlannerBlock no_refine;
  no_refine.refine_steps = 0;
  const double base_cost = vcdi::evaluate_cost(
      vcdi::plan_vut_trajectory(f, key, no_refine, model), key, scene);

  const PlannerBlock cfg;  // 20 refinement steps
  const VutFuturePlan refined = vcdi::plan_vut_trajectory(f, key, cfg, model);
  const double refined_cost = vcdi::evaluate_cost(refined, key, scene);
  CHECK(refined_cost <= base_cost);
  CHECK(oracle_feasible(refined));

  const CandidateSet set = vcdi::generate_candidates(f, cfg);
  for (const VutFuturePlan& c : set.candidates) {
    CHECK(refined_cost <= vcdi::evaluate_cost(c, key, scene) + 1e-12);
  }
}

TEST_CASE("planning is deterministic") {
  const Frame f = straight_frame(8.0);
  const CostWeights key = key_of({0.7, 1.3, 0.2, 1.0, 0.4, 2.0, 0.9});
  const VutFuturePlan a =
      vcdi::plan_vut_trajectory(f, key, PlannerBlock{}, ModelConfig{});
  const VutFuturePlan b =
      vcdi::plan_vut_trajectory(f, key, PlannerBlock{}, ModelConfig{});
  CHECK(same_positions(a, b));
}

TEST_CASE("raising the efficiency emphasis never shortens the plan") {
  const Frame f = straight_frame(8.0, 10.0);
  // Pure lattice selection: the discrete argmin is exactly monotone in the
  // efficiency weight, whereas gradient refinement adds sub-millimeter
  // jitter that would spoil the exact comparison.
  PlannerBlock cfg;
  cfg.refine_steps = 0;
  const ModelConfig model;
  double first_arc = 0.0, prev_arc = -1.0;
  for (const double w_speed : {0.001, 0.05, 0.15, 0.5, 5.0}) {
    CostWeights key = key_of({0.0, 1.0, 0.5, 1.0, 0.5, 1.0, 1.0});
    key.w[0] = w_speed;
    const VutFuturePlan plan = vcdi::plan_vut_trajectory(f, key, cfg, model);
    const double arc = arc_length(plan);
    if (prev_arc < 0.0) {
      first_arc = arc;
    } else {
      CHECK(arc >= prev_arc);  // exact, no tolerance
    }
    prev_arc = arc;
  }
  CHECK(prev_arc > first_arc);  // the sweep actually changes the plan
}

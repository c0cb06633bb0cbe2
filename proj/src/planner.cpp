#include "vcdi/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vcdi/errors.hpp"
#include "vcdi/features.hpp"
#include "vcdi/geometry.hpp"
#include "vcdi/tape.hpp"

namespace vcdi {

namespace {

constexpr double kMinAccel = -8.0;        // m/s^2
constexpr double kMaxAccel = 4.0;         // m/s^2
constexpr double kMaxCurvature = 0.2;     // 1/m
constexpr double kCurvatureSpeedGate = 0.5;  // curvature audited above this
constexpr double kAuditTol = 1e-6;
constexpr double kMaxMatchDistance = 50.0;   // m, lane association cutoff
constexpr double kHorizon = double(kFutureSteps) * kDt;  // 5 s

// Arc-length parametrized centerline of one lane, with linear extrapolation
// beyond both ends so plans may run off the mapped stretch.
struct LanePath {
  std::vector<Vec2> pts;
  std::vector<double> arc;  // cumulative length, arc[0] = 0
  double speed_limit = 0.0;

  struct Sample {
    Vec2 p;
    Vec2 tan;
    Vec2 nrm;  // left normal
  };

  Vec2 segment_dir(std::size_t i) const {
    const Vec2 d{pts[i + 1].x - pts[i].x, pts[i + 1].y - pts[i].y};
    const double len = std::hypot(d.x, d.y);
    return {d.x / len, d.y / len};
  }

  Sample at(double s) const {
    std::size_t seg = 0;
    if (s >= arc.back()) {
      seg = pts.size() - 2;
    } else if (s > 0.0) {
      seg = std::size_t(std::upper_bound(arc.begin(), arc.end(), s) -
                        arc.begin()) -
            1;
    }
    const Vec2 dir = segment_dir(seg);
    const double local = s - arc[seg];
    return {{pts[seg].x + dir.x * local, pts[seg].y + dir.y * local},
            dir,
            {-dir.y, dir.x}};
  }
};

struct LaneMatch {
  LanePath path;
  double s0 = 0.0;  // arc length of the VUT's projection
  double d0 = 0.0;  // signed lateral offset at t0
};

LanePath build_path(const LanePolyline& lane) {
  LanePath path;
  for (const LaneWaypoint& wp : lane.waypoints) {
    if (!path.pts.empty()) {
      const Vec2& last = path.pts.back();
      if (std::hypot(wp.center.x - last.x, wp.center.y - last.y) < 1e-9) {
        continue;  // zero-length segments carry no direction
      }
      path.arc.push_back(path.arc.back() +
                         std::hypot(wp.center.x - last.x, wp.center.y - last.y));
    } else {
      path.arc.push_back(0.0);
    }
    path.pts.push_back(wp.center);
  }
  if (!lane.waypoints.empty()) path.speed_limit = lane.waypoints[0].speed_limit;
  return path;
}

// Projects the origin (the VUT pose in a local frame) onto the polyline.
void project_origin(LaneMatch& m) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < m.path.pts.size(); ++i) {
    const Vec2& a = m.path.pts[i];
    const Vec2& b = m.path.pts[i + 1];
    const double sx = b.x - a.x, sy = b.y - a.y;
    const double len2 = sx * sx + sy * sy;
    const double tt = std::clamp((-a.x * sx - a.y * sy) / len2, 0.0, 1.0);
    const double px = a.x + tt * sx, py = a.y + tt * sy;
    const double d2 = px * px + py * py;
    if (d2 < best) {
      best = d2;
      const double len = std::sqrt(len2);
      m.s0 = m.path.arc[i] + tt * len;
      // Signed offset of the origin against the segment's left normal.
      m.d0 = (0.0 - px) * (-sy / len) + (0.0 - py) * (sx / len);
    }
  }
}

LaneMatch match_lane(const Frame& frame) {
  double best = std::numeric_limits<double>::infinity();
  const LanePolyline* chosen = nullptr;
  for (const LanePolyline& lane : frame.scene.lanes) {
    const LanePath p = build_path(lane);
    if (p.pts.size() < 2) continue;
    for (const Vec2& wp : p.pts) {
      const double d2 = wp.x * wp.x + wp.y * wp.y;
      if (d2 < best) {
        best = d2;
        chosen = &lane;
      }
    }
  }
  if (chosen == nullptr || best > kMaxMatchDistance * kMaxMatchDistance) {
    throw PlanningError("no lane within range of the VUT");
  }
  LaneMatch m;
  m.path = build_path(*chosen);
  project_origin(m);
  return m;
}

double quintic_ease(double tau) {
  return ((6.0 * tau - 15.0) * tau + 10.0) * tau * tau * tau;
}

// Constant-acceleration ramp from v0 toward the target (held once reached),
// with trapezoid-integrated arc length; lateral quintic ease from d0 to
// d_end. Returns the 50 future positions.
Mat rollout(const LaneMatch& m, double v0, double a, double v_target,
            double d_end) {
  const auto speed_at = [&](double t) {
    const double v = v0 + a * t;
    const double capped = a >= 0.0 ? std::min(v, std::max(v_target, v0))
                                   : std::max(v, v_target);
    return std::max(capped, 0.0);
  };
  Mat xy(kFutureSteps, 2);
  double s = m.s0;
  double v_prev = speed_at(0.0);
  for (std::size_t k = 0; k < kFutureSteps; ++k) {
    const double t = double(k + 1) * kDt;
    const double v_now = speed_at(t);
    s += 0.5 * (v_prev + v_now) * kDt;
    v_prev = v_now;
    const double d = m.d0 + (d_end - m.d0) * quintic_ease(t / kHorizon);
    const LanePath::Sample smp = m.path.at(s);
    xy(k, 0) = smp.p.x + d * smp.nrm.x;
    xy(k, 1) = smp.p.y + d * smp.nrm.y;
  }
  return xy;
}

Mat with_anchor(const Mat& xy) {
  Mat anchored(xy.rows + 1, 2);
  for (std::size_t k = 0; k < xy.rows; ++k) {
    anchored(k + 1, 0) = xy(k, 0);
    anchored(k + 1, 1) = xy(k, 1);
  }
  return anchored;  // row 0 is the VUT pose: the local-frame origin
}

// Finite-difference audit over the anchored trajectory: longitudinal accel
// within [-8, 4] everywhere, curvature within 0.2 while moving faster than
// the gate (curvature is numerically meaningless near standstill).
bool kinematically_feasible(const Mat& xy) {
  const Mat anchored = with_anchor(xy);
  const Mat v = fd_rows(anchored);
  Mat speed(anchored.rows, 1);
  for (std::size_t k = 0; k < anchored.rows; ++k) {
    speed(k, 0) = std::hypot(v(k, 0), v(k, 1));
  }
  const Mat a_long = fd_rows(speed);
  const Mat acc = fd_rows(v);
  for (std::size_t k = 0; k < anchored.rows; ++k) {
    if (a_long(k, 0) < kMinAccel - kAuditTol ||
        a_long(k, 0) > kMaxAccel + kAuditTol) {
      return false;
    }
    if (speed(k, 0) >= kCurvatureSpeedGate) {
      const double q = v(k, 0) * v(k, 0) + v(k, 1) * v(k, 1) + 1e-2;
      const double cross = v(k, 0) * acc(k, 1) - v(k, 1) * acc(k, 0);
      if (std::abs(cross / (std::sqrt(q) * q)) > kMaxCurvature + kAuditTol) {
        return false;
      }
    }
  }
  return true;
}

// Fills heading and speed from anchored finite differences; heading holds
// its last value (initially the VUT's, i.e. 0) below the motion threshold.
VutFuturePlan finalize_plan(const Mat& xy) {
  const Mat v = fd_rows(with_anchor(xy));
  VutFuturePlan plan;
  double heading = 0.0;
  for (std::size_t k = 0; k < kFutureSteps; ++k) {
    const double vx = v(k + 1, 0), vy = v(k + 1, 1);
    const double speed = std::hypot(vx, vy);
    if (speed >= 0.05) heading = std::atan2(vy, vx);
    plan.states[k].x = xy(k, 0);
    plan.states[k].y = xy(k, 1);
    plan.states[k].heading = heading;
    plan.states[k].speed = speed;
  }
  return plan;
}

double vut_speed_at_t0(const Frame& frame) {
  const AgentState& s = frame.vut_history.states.back();
  return std::hypot(s.vx, s.vy);
}

}  // namespace

CandidateSet generate_candidates(const Frame& frame, const PlannerBlock& cfg) {
  if (!frame.is_local) {
    throw ValidationError("generate_candidates: frame must be local");
  }
  const LaneMatch m = match_lane(frame);
  const double v0 = vut_speed_at_t0(frame);

  CandidateSet out;
  for (int k = 0; k < cfg.n_speeds; ++k) {
    const double v_target =
        cfg.n_speeds == 1 ? 0.0
                          : double(k) * 1.1 * m.path.speed_limit /
                                double(cfg.n_speeds - 1);
    for (int j = 0; j < cfg.n_lateral; ++j) {
      const double d_end =
          cfg.n_lateral == 1
              ? 0.0
              : -cfg.max_lateral_offset + double(j) * 2.0 *
                                              cfg.max_lateral_offset /
                                              double(cfg.n_lateral - 1);
      const double a =
          std::clamp((v_target - v0) / kHorizon, kMinAccel, kMaxAccel);
      const Mat xy = rollout(m, v0, a, v_target, d_end);
      if (kinematically_feasible(xy)) {
        out.candidates.push_back(finalize_plan(xy));
      }
    }
  }
  if (out.candidates.empty()) {
    // Maximal braking holding the current offset is always returned.
    out.candidates.push_back(
        finalize_plan(rollout(m, v0, kMinAccel, 0.0, m.d0)));
  }
  return out;
}

VutFuturePlan plan_vut_trajectory(const Frame& frame, const CostWeights& key,
                                  const PlannerBlock& planner,
                                  const ModelConfig& model) {
  const CandidateSet set = generate_candidates(frame, planner);
  const SceneContext scene = assemble_inputs(frame, model).scene;

  std::size_t best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < set.candidates.size(); ++i) {
    const double c = evaluate_cost(set.candidates[i], key, scene);
    if (c < best_cost) {
      best_cost = c;
      best = i;
    }
  }

  Mat cur = plan_positions(set.candidates[best]);
  double lr = planner.refine_lr;
  for (int step = 0; step < planner.refine_steps; ++step) {
    Tape t;
    const TapeValue xy = t.input(cur, "plan");
    t.backward(evaluate_cost_tape(t, xy, key, scene));
    const Mat& g = t.grad_of(xy);
    Mat proposal = cur;
    for (std::size_t i = 0; i < proposal.size(); ++i) {
      proposal.d[i] -= lr * g.d[i];
    }
    bool accepted = false;
    if (kinematically_feasible(proposal)) {
      const double c =
          evaluate_cost(finalize_plan(proposal), key, scene);
      if (c < best_cost) {
        cur = proposal;
        best_cost = c;
        accepted = true;
      }
    }
    if (!accepted) lr *= 0.5;
  }
  return finalize_plan(cur);
}

}  // namespace vcdi

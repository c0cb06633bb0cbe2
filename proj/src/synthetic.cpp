#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "vcdi/errors.hpp"
#include "vcdi/rng.hpp"
#include "vcdi/scenario.hpp"

namespace vcdi {

namespace {

constexpr double kLaneHalfWidth = 1.75;
constexpr double kWaypointSpacing = 2.0;
constexpr double kPi = std::numbers::pi;

void check_params(const SynthParams& p) {
  if (p.duration_steps == 0 || p.duration_steps > 3000) {
    throw ConfigError("synth: duration_steps must be in [1, 3000]");
  }
  if (p.n_ambient > 8) throw ConfigError("synth: n_ambient must be <= 8");
  if (!(p.vut_speed >= 0.0 && p.vut_speed <= 30.0)) {
    throw ConfigError("synth: vut_speed must be in [0, 30]");
  }
  if (!(p.speed_limit > 0.0 && p.speed_limit <= 30.0)) {
    throw ConfigError("synth: speed_limit must be in (0, 30]");
  }
  if (!(p.initial_gap > 0.0)) throw ConfigError("synth: initial_gap must be > 0");
}

LanePolyline straight_lane(Vec2 start, double heading, double length,
                           double speed_limit, Signal sig) {
  LanePolyline lane;
  const Vec2 dir{std::cos(heading), std::sin(heading)};
  const Vec2 left{-std::sin(heading) * kLaneHalfWidth,
                  std::cos(heading) * kLaneHalfWidth};
  const int n =
      std::max(2, static_cast<int>(std::ceil(length / kWaypointSpacing)) + 1);
  for (int i = 0; i < n; ++i) {
    const Vec2 c = start + dir * (kWaypointSpacing * i);
    lane.waypoints.push_back(
        {c, c + left, c - left, wrap_angle(heading), speed_limit, sig});
  }
  return lane;
}

AgentState moving_state(double x, double y, double heading, double speed,
                        double length, double width) {
  AgentState s;
  s.x = x;
  s.y = y;
  s.heading = wrap_angle(heading);
  s.vx = speed * std::cos(heading);
  s.vy = speed * std::sin(heading);
  s.length = length;
  s.width = width;
  s.valid = true;
  return s;
}

// One car driving along +x with a constant-desired-gap law behind a leader.
double follow_accel(double gap, double v_self, double v_lead) {
  const double desired = 5.0 + 1.0 * v_self;
  return std::clamp(0.4 * (gap - desired) + 0.9 * (v_lead - v_self), -8.0, 4.0);
}

Scenario make_car_following(std::uint64_t seed, const SynthParams& p) {
  Rng rng(seed);
  Scenario s;
  s.scenario_id = "car_following_" + std::to_string(seed);
  s.duration_steps = p.duration_steps;

  const double horizon_m = p.vut_speed * p.duration_steps * kDt;
  const double road_start = -60.0 - p.initial_gap - 30.0;
  const double road_len = horizon_m + 120.0 - road_start;
  s.lanes.push_back(straight_lane({road_start, 0.0}, 0.0, road_len,
                                  p.speed_limit, Signal::kNone));
  s.lanes.push_back(straight_lane({road_start, 3.5}, 0.0, road_len,
                                  p.speed_limit, Signal::kNone));

  // VUT leads at constant speed on lane y = 0.
  for (std::size_t t = 0; t < p.duration_steps; ++t) {
    s.vut_track.push_back(moving_state(p.vut_speed * (t * kDt), 0.0, 0.0,
                                       p.vut_speed, 4.8, 1.9));
  }

  // Follower behind the VUT on the same lane.
  {
    std::vector<AgentState> track;
    const double length = 4.2 + 0.8 * rng.uniform();
    const double width = 1.7 + 0.3 * rng.uniform();
    double x = -p.initial_gap;
    double v = p.vut_speed;
    for (std::size_t t = 0; t < p.duration_steps; ++t) {
      track.push_back(moving_state(x, 0.0, 0.0, v, length, width));
      const double lead_x = s.vut_track[t].x;
      const double a = follow_accel(lead_x - x - 4.8, v, p.vut_speed);
      v = std::clamp(v + a * kDt, 0.0, 30.0);
      x += v * kDt;
    }
    s.agent_tracks.push_back(std::move(track));
  }

  // Ambient platoon on the adjacent lane y = 3.5: the head car relaxes to its
  // target speed, the rest follow the car ahead.
  std::vector<double> xs, vs, tgt, lens, wids;
  for (std::size_t i = 0; i < p.n_ambient; ++i) {
    xs.push_back(10.0 - 22.0 * static_cast<double>(i) - 6.0 * rng.uniform());
    tgt.push_back(p.speed_limit * (0.6 + 0.3 * rng.uniform()));
    vs.push_back(tgt.back() * (0.9 + 0.1 * rng.uniform()));
    lens.push_back(4.2 + 0.8 * rng.uniform());
    wids.push_back(1.7 + 0.3 * rng.uniform());
  }
  std::vector<std::vector<AgentState>> ambient(p.n_ambient);
  for (std::size_t t = 0; t < p.duration_steps; ++t) {
    for (std::size_t i = 0; i < p.n_ambient; ++i) {
      ambient[i].push_back(
          moving_state(xs[i], 3.5, 0.0, vs[i], lens[i], wids[i]));
    }
    for (std::size_t i = 0; i < p.n_ambient; ++i) {
      double a;
      if (i == 0) {
        a = std::clamp(1.0 * (tgt[i] - vs[i]), -8.0, 4.0);
      } else {
        a = follow_accel(xs[i - 1] - xs[i] - lens[i - 1], vs[i], vs[i - 1]);
      }
      vs[i] = std::clamp(vs[i] + a * kDt, 0.0, 30.0);
      xs[i] += vs[i] * kDt;
    }
  }
  for (auto& track : ambient) s.agent_tracks.push_back(std::move(track));

  validate_scenario(s);
  return s;
}

Scenario make_intersection(std::uint64_t seed, const SynthParams& p) {
  Rng rng(seed);
  Scenario s;
  s.scenario_id = "intersection_" + std::to_string(seed);
  s.duration_steps = p.duration_steps;
  s.conflict_point = Vec2{0.0, 0.0};

  const double T = p.duration_steps * kDt;
  const double east_len = std::max(30.0, p.vut_speed * T) + 140.0;
  const double north_len = std::max(30.0, p.speed_limit * T) + 140.0;
  s.lanes.push_back(straight_lane({-80.0, 0.0}, 0.0, east_len, p.speed_limit,
                                  Signal::kGreen));
  s.lanes.push_back(
      straight_lane({210.0, 3.5}, kPi, 290.0, p.speed_limit, Signal::kGreen));
  s.lanes.push_back(straight_lane({0.0, -80.0}, kPi / 2.0, north_len,
                                  p.speed_limit, Signal::kRed));
  // Crosswalks across each approach.
  s.crosswalks.push_back(
      {{{-7.0, -3.5}, {-5.0, -3.5}, {-5.0, 7.0}, {-7.0, 7.0}}});
  s.crosswalks.push_back(
      {{{-3.5, -7.0}, {3.5, -7.0}, {3.5, -5.0}, {-3.5, -5.0}}});

  // VUT eastbound through the conflict point at constant speed.
  const double vut_x0 = -40.0 - 6.0 * rng.uniform();
  for (std::size_t t = 0; t < p.duration_steps; ++t) {
    s.vut_track.push_back(moving_state(vut_x0 + p.vut_speed * (t * kDt), 0.0,
                                       0.0, p.vut_speed, 4.8, 1.9));
  }

  // Crossing agent: northbound, accepts or rejects the gap created by the
  // VUT's arrival time — its motion depends on the VUT trajectory.
  {
    std::vector<AgentState> track;
    const double length = 4.2 + 0.8 * rng.uniform();
    const double width = 1.7 + 0.3 * rng.uniform();
    double y = -(28.0 + 14.0 * rng.uniform());
    double v = 6.0 + 2.0 * rng.uniform();
    const double v_tgt = 0.8 * p.speed_limit;
    enum class Phase { kApproach, kRush, kYield, kWait, kGo };
    Phase phase = Phase::kApproach;
    for (std::size_t t = 0; t < p.duration_steps; ++t) {
      track.push_back(moving_state(0.0, y, kPi / 2.0, v, length, width));
      const double x_vut = s.vut_track[t].x;
      if (phase == Phase::kApproach && y >= -14.0) {
        const double t_vut =
            x_vut >= 0.0 ? 0.0 : -x_vut / std::max(p.vut_speed, 0.1);
        const double t_clear = (6.0 - y) / std::max(v, 0.1);
        phase = (x_vut < 0.0 && t_clear + 1.2 < t_vut) || x_vut > 3.0
                    ? Phase::kRush
                    : Phase::kYield;
      }
      if (phase == Phase::kYield) {
        if (v < 0.05 && y > -8.5) {
          phase = Phase::kWait;
          v = 0.0;
        }
      }
      if (phase == Phase::kWait && x_vut > 3.0) phase = Phase::kGo;

      double a = 0.0;
      switch (phase) {
        case Phase::kApproach:
          a = std::clamp(1.0 * (v_tgt - v), -3.0, 2.0);
          break;
        case Phase::kRush:
        case Phase::kGo:
          a = std::clamp(1.8 * (v_tgt - v), -3.0, 2.0);
          break;
        case Phase::kYield: {
          const double dist = std::max(-6.0 - y, 0.3);
          a = std::clamp(-v * v / (2.0 * dist), -6.0, 0.0);
          break;
        }
        case Phase::kWait:
          a = 0.0;
          break;
      }
      v = std::clamp(v + a * kDt, 0.0, 30.0);
      y += v * kDt;
    }
    s.agent_tracks.push_back(std::move(track));
  }

  // Right-turning agent: north up the crossing road, quarter arc of radius
  // 8 m, then east along the VUT road (merging well behind the VUT).
  if (p.turning_agent) {
    std::vector<AgentState> track;
    const double length = 4.2 + 0.8 * rng.uniform();
    const double width = 1.7 + 0.3 * rng.uniform();
    const double y0 = -(56.0 + 8.0 * rng.uniform());
    const double v = 4.0;
    const double s1 = -8.0 - y0;            // straight segment length
    const double s2 = s1 + 8.0 * kPi / 2.0; // plus quarter arc
    double arc = 0.0;
    for (std::size_t t = 0; t < p.duration_steps; ++t) {
      double x, yy, heading;
      if (arc < s1) {
        x = 0.0;
        yy = y0 + arc;
        heading = kPi / 2.0;
      } else if (arc < s2) {
        const double phi = kPi - (arc - s1) / 8.0;
        x = 8.0 + 8.0 * std::cos(phi);
        yy = -8.0 + 8.0 * std::sin(phi);
        heading = std::atan2(-std::cos(phi), std::sin(phi));
      } else {
        x = 8.0 + (arc - s2);
        yy = 0.0;
        heading = 0.0;
      }
      track.push_back(moving_state(x, yy, heading, v, length, width));
      arc += v * kDt;
    }
    s.agent_tracks.push_back(std::move(track));
  }

  // Ambient traffic on the westbound lane, staggered beyond the junction.
  std::vector<double> xs, vs, tgt, lens, wids;
  for (std::size_t i = 0; i < p.n_ambient; ++i) {
    xs.push_back(60.0 + 20.0 * static_cast<double>(i) + 6.0 * rng.uniform());
    tgt.push_back(p.speed_limit * (0.6 + 0.25 * rng.uniform()));
    vs.push_back(tgt.back());
    lens.push_back(4.2 + 0.8 * rng.uniform());
    wids.push_back(1.7 + 0.3 * rng.uniform());
  }
  std::vector<std::vector<AgentState>> ambient(p.n_ambient);
  for (std::size_t t = 0; t < p.duration_steps; ++t) {
    for (std::size_t i = 0; i < p.n_ambient; ++i) {
      ambient[i].push_back(
          moving_state(xs[i], 3.5, kPi, vs[i], lens[i], wids[i]));
    }
    for (std::size_t i = 0; i < p.n_ambient; ++i) {
      const double a = std::clamp(1.0 * (tgt[i] - vs[i]), -8.0, 4.0);
      vs[i] = std::clamp(vs[i] + a * kDt, 0.0, 30.0);
      xs[i] -= vs[i] * kDt;
    }
  }
  for (auto& track : ambient) s.agent_tracks.push_back(std::move(track));

  validate_scenario(s);
  return s;
}

}  // namespace

Scenario generate_synthetic_scenario(SynthKind kind, std::uint64_t seed,
                                     const SynthParams& params) {
  check_params(params);
  switch (kind) {
    case SynthKind::kCarFollowing:
      return make_car_following(seed, params);
    case SynthKind::kIntersection:
      return make_intersection(seed, params);
  }
  throw ConfigError("synth: unknown scenario kind");
}

}  // namespace vcdi

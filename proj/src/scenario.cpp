#include "vcdi/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "vcdi/errors.hpp"

namespace vcdi {

namespace {

using nlohmann::json;

void require_finite(double v, const std::string& where) {
  if (!std::isfinite(v)) throw ValidationError(where + ": non-finite value");
}

void validate_state(const AgentState& s, const std::string& where) {
  for (double v : {s.x, s.y, s.heading, s.vx, s.vy, s.length, s.width}) {
    require_finite(v, where);
  }
  if (s.heading <= -std::numbers::pi || s.heading > std::numbers::pi) {
    throw ValidationError(where + ": heading outside (-pi, pi]");
  }
  if (s.valid && (s.length <= 0.0 || s.width <= 0.0)) {
    throw ValidationError(where + ": valid state needs positive extents");
  }
}

// Proper or improper intersection of closed segments, excluding shared
// endpoints of adjacent polygon edges (handled by the caller's indexing).
int orient(const Vec2& a, const Vec2& b, const Vec2& c) {
  const double v = (b - a).cross(c - a);
  if (v > 1e-12) return 1;
  if (v < -1e-12) return -1;
  return 0;
}

bool on_segment(const Vec2& a, const Vec2& b, const Vec2& p) {
  return std::min(a.x, b.x) - 1e-12 <= p.x && p.x <= std::max(a.x, b.x) + 1e-12 &&
         std::min(a.y, b.y) - 1e-12 <= p.y && p.y <= std::max(a.y, b.y) + 1e-12;
}

bool segments_intersect(const Vec2& p1, const Vec2& p2, const Vec2& q1,
                        const Vec2& q2) {
  const int o1 = orient(p1, p2, q1);
  const int o2 = orient(p1, p2, q2);
  const int o3 = orient(q1, q2, p1);
  const int o4 = orient(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(p1, p2, q1)) return true;
  if (o2 == 0 && on_segment(p1, p2, q2)) return true;
  if (o3 == 0 && on_segment(q1, q2, p1)) return true;
  if (o4 == 0 && on_segment(q1, q2, p2)) return true;
  return false;
}

void validate_crosswalk(const CrosswalkPolygon& cw, std::size_t index) {
  const auto& p = cw.perimeter;
  const std::string where = "crosswalks[" + std::to_string(index) + "]";
  if (p.size() < 3) throw ValidationError(where + ": needs >= 3 vertices");
  for (const Vec2& v : p) {
    require_finite(v.x, where);
    require_finite(v.y, where);
  }
  const std::size_t n = p.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      // Skip adjacent edges (they share a vertex by construction).
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_intersect(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n])) {
        throw ValidationError(where + ": self-intersecting perimeter");
      }
    }
  }
}

json state_to_json(const AgentState& s) {
  return json::array({s.x, s.y, s.heading, s.vx, s.vy, s.length, s.width,
                      s.valid ? 1.0 : 0.0});
}

AgentState state_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 8) {
    throw ParseError(where + ": expected 8-element state array");
  }
  for (const auto& v : j) {
    if (!v.is_number()) throw ParseError(where + ": non-numeric state entry");
  }
  AgentState s;
  s.x = j[0].get<double>();
  s.y = j[1].get<double>();
  s.heading = j[2].get<double>();
  s.vx = j[3].get<double>();
  s.vy = j[4].get<double>();
  s.length = j[5].get<double>();
  s.width = j[6].get<double>();
  const double valid = j[7].get<double>();
  if (valid != 0.0 && valid != 1.0) {
    throw ParseError(where + ": valid flag must be 0 or 1");
  }
  s.valid = valid == 1.0;
  return s;
}

const json& require_key(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) {
    throw ParseError(std::string("missing key '") + key + "'");
  }
  return *it;
}

}  // namespace

void validate_scenario(const Scenario& scenario) {
  if (scenario.duration_steps == 0) {
    throw ValidationError("duration_steps must be positive");
  }
  if (scenario.vut_track.size() != scenario.duration_steps) {
    throw ValidationError("vut_track length != duration_steps");
  }
  for (std::size_t t = 0; t < scenario.vut_track.size(); ++t) {
    const std::string where = "vut_track[" + std::to_string(t) + "]";
    validate_state(scenario.vut_track[t], where);
    if (!scenario.vut_track[t].valid) {
      throw ValidationError(where + ": VUT must be valid at every step");
    }
  }
  for (std::size_t a = 0; a < scenario.agent_tracks.size(); ++a) {
    if (scenario.agent_tracks[a].size() != scenario.duration_steps) {
      throw ValidationError("agent_tracks[" + std::to_string(a) +
                            "] length != duration_steps");
    }
    for (std::size_t t = 0; t < scenario.agent_tracks[a].size(); ++t) {
      validate_state(scenario.agent_tracks[a][t],
                     "agent_tracks[" + std::to_string(a) + "][" +
                         std::to_string(t) + "]");
    }
  }
  for (std::size_t l = 0; l < scenario.lanes.size(); ++l) {
    const auto& wps = scenario.lanes[l].waypoints;
    const std::string where = "lanes[" + std::to_string(l) + "]";
    if (wps.size() < 2) throw ValidationError(where + ": needs >= 2 waypoints");
    for (std::size_t w = 0; w < wps.size(); ++w) {
      const LaneWaypoint& wp = wps[w];
      for (double v : {wp.center.x, wp.center.y, wp.left.x, wp.left.y,
                       wp.right.x, wp.right.y, wp.heading}) {
        require_finite(v, where);
      }
      if (wp.speed_limit <= 0.0 || !std::isfinite(wp.speed_limit)) {
        throw ValidationError(where + ": speed_limit must be positive");
      }
      if (w > 0 && (wp.center - wps[w - 1].center).squared_norm() == 0.0) {
        throw ValidationError(where + ": repeated consecutive center point");
      }
    }
  }
  for (std::size_t c = 0; c < scenario.crosswalks.size(); ++c) {
    validate_crosswalk(scenario.crosswalks[c], c);
  }
  if (scenario.conflict_point) {
    require_finite(scenario.conflict_point->x, "conflict_point");
    require_finite(scenario.conflict_point->y, "conflict_point");
  }
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("scenario " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ParseError("scenario root must be an object");

  Scenario s;
  const json& id = require_key(j, "scenario_id");
  if (!id.is_string()) throw ParseError("scenario_id: expected string");
  s.scenario_id = id.get<std::string>();

  const json& hz = require_key(j, "hz");
  if (!hz.is_number() || hz.get<double>() != kHz) {
    throw ParseError("hz: must equal 10");
  }

  const json& vut = require_key(j, "vut_track");
  if (!vut.is_array() || vut.empty()) {
    throw ParseError("vut_track: expected non-empty array");
  }
  s.duration_steps = vut.size();
  for (std::size_t t = 0; t < vut.size(); ++t) {
    s.vut_track.push_back(
        state_from_json(vut[t], "vut_track[" + std::to_string(t) + "]"));
  }

  const json& tracks = require_key(j, "agent_tracks");
  if (!tracks.is_array()) throw ParseError("agent_tracks: expected array");
  for (std::size_t a = 0; a < tracks.size(); ++a) {
    if (!tracks[a].is_array()) {
      throw ParseError("agent_tracks[" + std::to_string(a) +
                       "]: expected array");
    }
    std::vector<AgentState> track;
    for (std::size_t t = 0; t < tracks[a].size(); ++t) {
      track.push_back(state_from_json(
          tracks[a][t],
          "agent_tracks[" + std::to_string(a) + "][" + std::to_string(t) + "]"));
    }
    s.agent_tracks.push_back(std::move(track));
  }

  const json& lanes = require_key(j, "lanes");
  if (!lanes.is_array()) throw ParseError("lanes: expected array");
  for (std::size_t l = 0; l < lanes.size(); ++l) {
    if (!lanes[l].is_array()) {
      throw ParseError("lanes[" + std::to_string(l) + "]: expected array");
    }
    LanePolyline lane;
    for (std::size_t w = 0; w < lanes[l].size(); ++w) {
      const json& wp = lanes[l][w];
      const std::string where =
          "lanes[" + std::to_string(l) + "][" + std::to_string(w) + "]";
      if (!wp.is_array() || wp.size() != 9) {
        throw ParseError(where + ": expected 9-element waypoint array");
      }
      for (const auto& v : wp) {
        if (!v.is_number()) throw ParseError(where + ": non-numeric entry");
      }
      LaneWaypoint out;
      out.center = {wp[0].get<double>(), wp[1].get<double>()};
      out.left = {wp[2].get<double>(), wp[3].get<double>()};
      out.right = {wp[4].get<double>(), wp[5].get<double>()};
      out.heading = wp[6].get<double>();
      out.speed_limit = wp[7].get<double>();
      const double code = wp[8].get<double>();
      if (code != 0.0 && code != 1.0 && code != 2.0 && code != 3.0) {
        throw ParseError(where + ": signal_code must be 0..3");
      }
      out.signal = static_cast<Signal>(static_cast<int>(code));
      lane.waypoints.push_back(out);
    }
    s.lanes.push_back(std::move(lane));
  }

  const json& cws = require_key(j, "crosswalks");
  if (!cws.is_array()) throw ParseError("crosswalks: expected array");
  for (std::size_t c = 0; c < cws.size(); ++c) {
    if (!cws[c].is_array()) {
      throw ParseError("crosswalks[" + std::to_string(c) + "]: expected array");
    }
    CrosswalkPolygon cw;
    for (std::size_t p = 0; p < cws[c].size(); ++p) {
      const json& pt = cws[c][p];
      const std::string where =
          "crosswalks[" + std::to_string(c) + "][" + std::to_string(p) + "]";
      if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() ||
          !pt[1].is_number()) {
        throw ParseError(where + ": expected [x, y]");
      }
      cw.perimeter.push_back({pt[0].get<double>(), pt[1].get<double>()});
    }
    s.crosswalks.push_back(std::move(cw));
  }

  if (j.contains("conflict_point")) {
    const json& cp = j["conflict_point"];
    if (!cp.is_array() || cp.size() != 2 || !cp[0].is_number() ||
        !cp[1].is_number()) {
      throw ParseError("conflict_point: expected [x, y]");
    }
    s.conflict_point = Vec2{cp[0].get<double>(), cp[1].get<double>()};
  }

  validate_scenario(s);
  return s;
}

void save_scenario(const std::string& path, const Scenario& scenario) {
  validate_scenario(scenario);
  json j;
  j["scenario_id"] = scenario.scenario_id;
  j["hz"] = kHz;
  json vut = json::array();
  for (const AgentState& s : scenario.vut_track) vut.push_back(state_to_json(s));
  j["vut_track"] = std::move(vut);
  json tracks = json::array();
  for (const auto& track : scenario.agent_tracks) {
    json t = json::array();
    for (const AgentState& s : track) t.push_back(state_to_json(s));
    tracks.push_back(std::move(t));
  }
  j["agent_tracks"] = std::move(tracks);
  json lanes = json::array();
  for (const LanePolyline& lane : scenario.lanes) {
    json l = json::array();
    for (const LaneWaypoint& wp : lane.waypoints) {
      l.push_back(json::array({wp.center.x, wp.center.y, wp.left.x, wp.left.y,
                               wp.right.x, wp.right.y, wp.heading,
                               wp.speed_limit,
                               static_cast<double>(static_cast<int>(wp.signal))}));
    }
    lanes.push_back(std::move(l));
  }
  j["lanes"] = std::move(lanes);
  json cws = json::array();
  for (const CrosswalkPolygon& cw : scenario.crosswalks) {
    json c = json::array();
    for (const Vec2& p : cw.perimeter) c.push_back(json::array({p.x, p.y}));
    cws.push_back(std::move(c));
  }
  j["crosswalks"] = std::move(cws);
  if (scenario.conflict_point) {
    j["conflict_point"] =
        json::array({scenario.conflict_point->x, scenario.conflict_point->y});
  }

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(1) << "\n";
  if (!out) throw IoError("short write to " + path);
}

std::pair<std::array<AgentHistory, kNumAgents>, std::array<bool, kNumAgents>>
select_nearest_agents(const Scenario& scenario, std::size_t t0) {
  if (t0 + 1 < kHistorySteps ||
      t0 + kFutureSteps + 1 > scenario.duration_steps) {
    throw ValidationError("select_nearest_agents: t0 out of range");
  }
  const Vec2 vut{scenario.vut_track[t0].x, scenario.vut_track[t0].y};

  struct Ranked {
    double dist2;
    std::size_t id;
  };
  std::vector<Ranked> ranked;
  for (std::size_t a = 0; a < scenario.agent_tracks.size(); ++a) {
    const AgentState& s = scenario.agent_tracks[a][t0];
    if (!s.valid) continue;
    const Vec2 p{s.x, s.y};
    ranked.push_back({(p - vut).squared_norm(), a});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& l, const Ranked& r) {
    if (l.dist2 != r.dist2) return l.dist2 < r.dist2;
    return l.id < r.id;
  });

  std::array<AgentHistory, kNumAgents> slots{};
  std::array<bool, kNumAgents> mask{};
  const std::size_t n = std::min<std::size_t>(kNumAgents, ranked.size());
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t id = ranked[i].id;
    AgentHistory h;
    h.agent_id = static_cast<std::int64_t>(id);
    for (std::size_t k = 0; k < kHistorySteps; ++k) {
      h.states[k] = scenario.agent_tracks[id][t0 + 1 - kHistorySteps + k];
    }
    slots[i] = h;
    mask[i] = true;
  }
  return {slots, mask};
}

std::vector<Frame> slice_frames(const Scenario& scenario, std::size_t stride) {
  if (stride == 0) throw ValidationError("slice_frames: stride must be >= 1");
  std::vector<Frame> frames;
  if (scenario.duration_steps < kHistorySteps + kFutureSteps) return frames;

  for (std::size_t t0 = kHistorySteps - 1;
       t0 + kFutureSteps <= scenario.duration_steps - 1; t0 += stride) {
    Frame f;
    f.t0 = t0;
    f.vut_history.agent_id = -1;
    for (std::size_t k = 0; k < kHistorySteps; ++k) {
      f.vut_history.states[k] =
          scenario.vut_track[t0 + 1 - kHistorySteps + k];
    }
    auto [slots, mask] = select_nearest_agents(scenario, t0);
    f.agent_histories = slots;
    f.agent_mask = mask;
    f.scene.lanes = scenario.lanes;
    f.scene.crosswalks = scenario.crosswalks;
    for (std::size_t k = 0; k < kFutureSteps; ++k) {
      const AgentState& s = scenario.vut_track[t0 + 1 + k];
      f.vut_future_truth.states[k] = {s.x, s.y, s.heading,
                                      std::hypot(s.vx, s.vy)};
    }
    for (std::size_t slot = 0; slot < kNumAgents; ++slot) {
      if (!f.agent_mask[slot]) continue;
      const auto id = static_cast<std::size_t>(f.agent_histories[slot].agent_id);
      for (std::size_t k = 0; k < kFutureSteps; ++k) {
        const AgentState& s = scenario.agent_tracks[id][t0 + 1 + k];
        f.agent_futures_truth[slot][k] = {s.x, s.y};
      }
    }
    f.conflict_point = scenario.conflict_point;
    frames.push_back(std::move(f));
  }
  return frames;
}

namespace {

AgentState transform_state(const Pose2& local_from_global, const AgentState& s) {
  if (!s.valid) return s;  // padded/absent entries stay exactly zero
  AgentState out = s;
  const Vec2 p = local_from_global.apply({s.x, s.y});
  const Vec2 v = local_from_global.apply_vector({s.vx, s.vy});
  out.x = p.x;
  out.y = p.y;
  out.vx = v.x;
  out.vy = v.y;
  out.heading = local_from_global.apply_angle(s.heading);
  return out;
}

}  // namespace

Frame to_local_frame(const Frame& frame) {
  const AgentState& anchor = frame.vut_history.states[kHistorySteps - 1];
  if (!anchor.valid) {
    throw ValidationError("to_local_frame: VUT state at t0 must be valid");
  }
  const Pose2 vut_pose{{anchor.x, anchor.y}, anchor.heading};
  const Pose2 local_from_global = vut_pose.inverse();

  Frame out = frame;
  for (auto& s : out.vut_history.states) {
    s = transform_state(local_from_global, s);
  }
  for (std::size_t slot = 0; slot < kNumAgents; ++slot) {
    if (!out.agent_mask[slot]) continue;
    for (auto& s : out.agent_histories[slot].states) {
      s = transform_state(local_from_global, s);
    }
    for (auto& p : out.agent_futures_truth[slot]) {
      p = local_from_global.apply(p);
    }
  }
  for (auto& st : out.vut_future_truth.states) {
    const Vec2 p = local_from_global.apply({st.x, st.y});
    st.x = p.x;
    st.y = p.y;
    st.heading = local_from_global.apply_angle(st.heading);
  }
  for (auto& lane : out.scene.lanes) {
    for (auto& wp : lane.waypoints) {
      wp.center = local_from_global.apply(wp.center);
      wp.left = local_from_global.apply(wp.left);
      wp.right = local_from_global.apply(wp.right);
      wp.heading = local_from_global.apply_angle(wp.heading);
    }
  }
  for (auto& cw : out.scene.crosswalks) {
    for (auto& p : cw.perimeter) p = local_from_global.apply(p);
  }
  if (out.conflict_point) {
    out.conflict_point = local_from_global.apply(*out.conflict_point);
  }
  // Composing with any earlier transform keeps global recovery exact.
  out.global_from_local = frame.global_from_local.compose(vut_pose);
  out.is_local = true;
  return out;
}

}  // namespace vcdi

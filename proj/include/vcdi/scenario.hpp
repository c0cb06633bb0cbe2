#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vcdi/geometry.hpp"

namespace vcdi {

inline constexpr std::size_t kNumAgents = 10;   // background agent slots
inline constexpr std::size_t kNumSlots = 11;    // VUT slot 0 + agents
inline constexpr std::size_t kHistorySteps = 20;
inline constexpr std::size_t kFutureSteps = 50;

struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // wrapped to (-pi, pi]
  double vx = 0.0;
  double vy = 0.0;
  double length = 0.0;
  double width = 0.0;
  bool valid = false;
};

// 20 states at 10 Hz ending at the frame's t0. Leading entries may be invalid
// for late-appearing agents; the final entry is valid for any selected agent.
struct AgentHistory {
  std::int64_t agent_id = -1;
  std::array<AgentState, kHistorySteps> states{};
};

struct VutFutureState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
};

// 50 future VUT states at 10 Hz.
struct VutFuturePlan {
  std::array<VutFutureState, kFutureSteps> states{};
};

enum class Signal : int { kNone = 0, kGreen = 1, kYellow = 2, kRed = 3 };

struct LaneWaypoint {
  Vec2 center;
  Vec2 left;
  Vec2 right;
  double heading = 0.0;
  double speed_limit = 0.0;
  Signal signal = Signal::kNone;
};

struct LanePolyline {
  std::vector<LaneWaypoint> waypoints;
};

struct CrosswalkPolygon {
  std::vector<Vec2> perimeter;  // simple closed polygon, >= 3 vertices
};

struct Scenario {
  std::string scenario_id;
  std::size_t duration_steps = 0;
  std::vector<AgentState> vut_track;
  std::vector<std::vector<AgentState>> agent_tracks;  // agent_id = index
  std::vector<LanePolyline> lanes;
  std::vector<CrosswalkPolygon> crosswalks;
  std::optional<Vec2> conflict_point;  // marked conflict location, if any
};

// Map geometry carried inside a Frame, in the frame's coordinate system.
struct LocalMap {
  std::vector<LanePolyline> lanes;
  std::vector<CrosswalkPolygon> crosswalks;
};

struct Frame {
  std::size_t t0 = 0;
  AgentHistory vut_history;
  std::array<AgentHistory, kNumAgents> agent_histories{};
  std::array<bool, kNumAgents> agent_mask{};
  LocalMap scene;
  VutFuturePlan vut_future_truth;
  // Logged agent positions over [t0+1, t0+50]; slots follow agent_mask.
  std::array<std::array<Vec2, kFutureSteps>, kNumAgents> agent_futures_truth{};
  std::optional<Vec2> conflict_point;
  // Maps frame coordinates back to global ones; identity until to_local_frame.
  Pose2 global_from_local;
  bool is_local = false;
};

void validate_scenario(const Scenario& scenario);
Scenario load_scenario(const std::string& path);
void save_scenario(const std::string& path, const Scenario& scenario);

// Frames at t0 = 19, 29, ... while a full 50-step future fits in the log;
// count = floor((duration_steps - 70) / stride) + 1, empty below 70 steps.
std::vector<Frame> slice_frames(const Scenario& scenario,
                                std::size_t stride = 10);

// Re-expresses the frame relative to the VUT pose at t0 (VUT at origin,
// heading 0). Pure: the input frame is left unmodified.
Frame to_local_frame(const Frame& frame);

// Agents valid at t0 ranked by distance to the VUT, ties to smaller id;
// remaining slots zero-padded with mask false.
std::pair<std::array<AgentHistory, kNumAgents>, std::array<bool, kNumAgents>>
select_nearest_agents(const Scenario& scenario, std::size_t t0);

enum class SynthKind { kCarFollowing, kIntersection };

struct SynthParams {
  std::size_t duration_steps = 200;
  std::size_t n_ambient = 4;     // extra background agents, 0..8
  double vut_speed = 8.0;        // m/s, [0, 30]
  double speed_limit = 10.0;     // m/s, (0, 30]
  double initial_gap = 15.0;     // m, > 0 (car_following leader-follower)
  bool turning_agent = true;     // intersection only
};

Scenario generate_synthetic_scenario(SynthKind kind, std::uint64_t seed,
                                     const SynthParams& params);

}  // namespace vcdi

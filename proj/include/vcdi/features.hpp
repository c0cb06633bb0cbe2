#pragma once

#include "vcdi/config.hpp"
#include "vcdi/mat.hpp"
#include "vcdi/scenario.hpp"

namespace vcdi {

inline constexpr int kHistFeatDim = 8;  // x, y, heading, vx, vy, len, wid, valid
inline constexpr int kLaneFeatDim = 12;  // cx, cy, lx, ly, rx, ry, heading,
                                         // speed_limit, signal one-hot(4)
inline constexpr int kCwFeatDim = 2;     // x, y

// Fixed-shape per-slot local map. Rows are laid out slot-major:
// lane_feat row = (slot * L + lane) * W + waypoint,
// cw_feat row   = (slot * C + crosswalk) * P + point.
// Slot 0 is the VUT. Padded rows are all-zero with mask 0.
struct SceneContext {
  Mat lane_feat;  // (11*L*W) x 12
  Mat lane_mask;  // (11*L*W) x 1
  Mat cw_feat;    // (11*C*P) x 2
  Mat cw_mask;    // (11*C*P) x 1
  int l_lanes = 0;
  int w_waypoints = 0;
  int c_crosswalks = 0;
  int p_points = 0;
};

// Numeric model inputs assembled from one local-frame Frame.
struct InputTensors {
  // Step-major history: row = t * 11 + slot, so each timestep is one
  // contiguous 11-row block. Padded slots and invalid steps are all-zero.
  Mat history;       // (20*11) x 8
  Mat agent_mask;    // 11 x 1, slot 0 (VUT) always 1
  Mat vut_future;    // 50 x 4: x, y, heading, speed
  Mat t0_positions;  // 11 x 2: per-slot position at t0 (zeros when masked)
  SceneContext scene;
};

// Builds the fixed tensors. The frame must already be in the VUT local frame
// (is_local set and the VUT t0 pose at the origin); anything else is a
// contract violation. Per slot, the L lanes whose nearest waypoint is closest
// to the slot's t0 position are kept (a contiguous W-waypoint window around
// that waypoint), along with the C nearest crosswalks (first P perimeter
// points each).
InputTensors assemble_inputs(const Frame& frame, const ModelConfig& cfg);

}  // namespace vcdi

#include "vcdi/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "vcdi/errors.hpp"

namespace vcdi {
namespace {

double squared_distance_to_lane(const LanePolyline& lane, const Vec2& p,
                                std::size_t* nearest_idx) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_idx = 0;
  for (std::size_t i = 0; i < lane.waypoints.size(); ++i) {
    const double d2 = (lane.waypoints[i].center - p).squared_norm();
    if (d2 < best) {
      best = d2;
      best_idx = i;
    }
  }
  if (nearest_idx != nullptr) *nearest_idx = best_idx;
  return best;
}

double squared_distance_to_crosswalk(const CrosswalkPolygon& cw,
                                     const Vec2& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const Vec2& v : cw.perimeter) {
    best = std::min(best, (v - p).squared_norm());
  }
  return best;
}

void fill_waypoint_row(Mat& feat, std::size_t row, const LaneWaypoint& wp) {
  feat(row, 0) = wp.center.x;
  feat(row, 1) = wp.center.y;
  feat(row, 2) = wp.left.x;
  feat(row, 3) = wp.left.y;
  feat(row, 4) = wp.right.x;
  feat(row, 5) = wp.right.y;
  feat(row, 6) = wp.heading;
  feat(row, 7) = wp.speed_limit;
  feat(row, 8 + static_cast<int>(wp.signal)) = 1.0;
}

}  // namespace

InputTensors assemble_inputs(const Frame& frame, const ModelConfig& cfg) {
  if (!frame.is_local) {
    throw ValidationError("assemble_inputs: frame is not in the local frame");
  }
  const AgentState& anchor = frame.vut_history.states[kHistorySteps - 1];
  if (std::abs(anchor.x) > 1e-9 || std::abs(anchor.y) > 1e-9 ||
      std::abs(anchor.heading) > 1e-9) {
    throw ValidationError(
        "assemble_inputs: VUT t0 pose is not at the local-frame origin");
  }

  const int L = cfg.l_lanes;
  const int W = cfg.w_waypoints;
  const int C = cfg.c_crosswalks;
  const int P = cfg.p_points;

  InputTensors in;
  in.history = Mat(kHistorySteps * kNumSlots, kHistFeatDim);
  in.agent_mask = Mat(kNumSlots, 1);
  in.vut_future = Mat(kFutureSteps, 4);
  in.t0_positions = Mat(kNumSlots, 2);
  in.scene.lane_feat = Mat(std::size_t(kNumSlots) * L * W, kLaneFeatDim);
  in.scene.lane_mask = Mat(std::size_t(kNumSlots) * L * W, 1);
  in.scene.cw_feat = Mat(std::size_t(kNumSlots) * C * P, kCwFeatDim);
  in.scene.cw_mask = Mat(std::size_t(kNumSlots) * C * P, 1);
  in.scene.l_lanes = L;
  in.scene.w_waypoints = W;
  in.scene.c_crosswalks = C;
  in.scene.p_points = P;

  // History rows; slot 0 is the VUT, slots 1..10 the selected agents.
  for (int slot = 0; slot < kNumSlots; ++slot) {
    const bool valid_slot =
        slot == 0 || frame.agent_mask[static_cast<std::size_t>(slot - 1)];
    in.agent_mask(slot, 0) = valid_slot ? 1.0 : 0.0;
    if (!valid_slot) continue;
    const AgentHistory& hist =
        slot == 0 ? frame.vut_history
                  : frame.agent_histories[static_cast<std::size_t>(slot - 1)];
    for (int t = 0; t < kHistorySteps; ++t) {
      const AgentState& s = hist.states[static_cast<std::size_t>(t)];
      if (!s.valid) continue;  // absent steps stay all-zero
      const std::size_t row = std::size_t(t) * kNumSlots + std::size_t(slot);
      in.history(row, 0) = s.x;
      in.history(row, 1) = s.y;
      in.history(row, 2) = s.heading;
      in.history(row, 3) = s.vx;
      in.history(row, 4) = s.vy;
      in.history(row, 5) = s.length;
      in.history(row, 6) = s.width;
      in.history(row, 7) = 1.0;
    }
    const AgentState& t0 = hist.states[kHistorySteps - 1];
    in.t0_positions(slot, 0) = t0.x;
    in.t0_positions(slot, 1) = t0.y;
  }

  for (int t = 0; t < kFutureSteps; ++t) {
    const VutFutureState& s =
        frame.vut_future_truth.states[static_cast<std::size_t>(t)];
    in.vut_future(t, 0) = s.x;
    in.vut_future(t, 1) = s.y;
    in.vut_future(t, 2) = s.heading;
    in.vut_future(t, 3) = s.speed;
  }

  // Per-slot scene selection, ranked by nearest-element distance with index
  // tie-break so the layout is deterministic.
  for (int slot = 0; slot < kNumSlots; ++slot) {
    if (in.agent_mask(slot, 0) == 0.0) continue;
    const Vec2 p{in.t0_positions(slot, 0), in.t0_positions(slot, 1)};

    std::vector<std::pair<double, std::size_t>> lane_rank;
    std::vector<std::size_t> nearest_wp(frame.scene.lanes.size(), 0);
    for (std::size_t li = 0; li < frame.scene.lanes.size(); ++li) {
      lane_rank.emplace_back(
          squared_distance_to_lane(frame.scene.lanes[li], p, &nearest_wp[li]),
          li);
    }
    std::sort(lane_rank.begin(), lane_rank.end());
    const std::size_t n_lanes = std::min<std::size_t>(L, lane_rank.size());
    for (std::size_t k = 0; k < n_lanes; ++k) {
      const LanePolyline& lane = frame.scene.lanes[lane_rank[k].second];
      const std::size_t n_wp = lane.waypoints.size();
      // Contiguous window of W waypoints containing the nearest one, biased
      // forward: a quarter of the window covers the approach, the rest the
      // road ahead (the prediction/planning horizon outweighs the history).
      std::size_t start = 0;
      if (n_wp > std::size_t(W)) {
        const std::size_t near = nearest_wp[lane_rank[k].second];
        const std::size_t back = std::size_t(W) / 4;
        start = near > back ? near - back : 0;
        start = std::min(start, n_wp - std::size_t(W));
      }
      const std::size_t count = std::min<std::size_t>(W, n_wp);
      for (std::size_t w = 0; w < count; ++w) {
        const std::size_t row =
            (std::size_t(slot) * L + k) * std::size_t(W) + w;
        fill_waypoint_row(in.scene.lane_feat, row, lane.waypoints[start + w]);
        in.scene.lane_mask(row, 0) = 1.0;
      }
    }

    std::vector<std::pair<double, std::size_t>> cw_rank;
    for (std::size_t ci = 0; ci < frame.scene.crosswalks.size(); ++ci) {
      cw_rank.emplace_back(
          squared_distance_to_crosswalk(frame.scene.crosswalks[ci], p), ci);
    }
    std::sort(cw_rank.begin(), cw_rank.end());
    const std::size_t n_cw = std::min<std::size_t>(C, cw_rank.size());
    for (std::size_t k = 0; k < n_cw; ++k) {
      const CrosswalkPolygon& cw = frame.scene.crosswalks[cw_rank[k].second];
      const std::size_t count =
          std::min<std::size_t>(P, cw.perimeter.size());
      for (std::size_t q = 0; q < count; ++q) {
        const std::size_t row =
            (std::size_t(slot) * C + k) * std::size_t(P) + q;
        in.scene.cw_feat(row, 0) = cw.perimeter[q].x;
        in.scene.cw_feat(row, 1) = cw.perimeter[q].y;
        in.scene.cw_mask(row, 0) = 1.0;
      }
    }
  }

  return in;
}

}  // namespace vcdi

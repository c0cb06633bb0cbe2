#include "vcdi/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vcdi/errors.hpp"
#include "vcdi/features.hpp"
#include "vcdi/planner.hpp"
#include "vcdi/rng.hpp"

namespace vcdi {

namespace {

// Below this speed a one-step displacement carries no usable direction, so
// the previous heading is kept.
constexpr double kHeadingSpeedFloor = 0.05;  // m/s

struct WorldAgent {
  AgentState cur;
  std::array<AgentState, kHistorySteps> ring{};  // oldest first, cur last
  bool model_driven = false;  // has an inferred window for this interval
  bool diverged = false;      // ever advanced by the model; never replays
  std::array<Vec2, kFutureSteps> traj{};  // global inferred window
};

void push_ring(std::array<AgentState, kHistorySteps>& ring,
               const AgentState& s) {
  for (std::size_t k = 0; k + 1 < kHistorySteps; ++k) ring[k] = ring[k + 1];
  ring[kHistorySteps - 1] = s;
}

void check_finite(const AgentState& s, int step, const char* who) {
  if (std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.heading) &&
      std::isfinite(s.vx) && std::isfinite(s.vy)) {
    return;
  }
  throw NumericError("rollout: non-finite " + std::string(who) +
                     " state at step " + std::to_string(step));
}

// Next state after a one-step move to target, with the displacement clamped
// to v_max * dt so inferred motion can never teleport.
AgentState advance_to(const AgentState& prev, Vec2 target, double v_max) {
  Vec2 d{target.x - prev.x, target.y - prev.y};
  const double dist = d.norm();
  const double cap = v_max * kDt;
  if (dist > cap) {
    const double scale = cap / dist;
    d.x *= scale;
    d.y *= scale;
  }
  AgentState out = prev;
  out.x = prev.x + d.x;
  out.y = prev.y + d.y;
  out.vx = d.x / kDt;
  out.vy = d.y / kDt;
  const double speed = std::hypot(out.vx, out.vy);
  if (speed >= kHeadingSpeedFloor) out.heading = std::atan2(d.y, d.x);
  out.valid = true;
  return out;
}

AgentState hold_position(const AgentState& prev) {
  AgentState out = prev;
  out.vx = 0.0;
  out.vy = 0.0;
  out.valid = true;
  return out;
}

// Mirrors the frame slicer's ranking: agents valid now, nearest to the VUT
// first, ties to the smaller id.
std::vector<std::size_t> rank_agents(const std::vector<WorldAgent>& agents,
                                     const AgentState& vut) {
  struct Ranked {
    double dist2;
    std::size_t id;
  };
  std::vector<Ranked> ranked;
  for (std::size_t a = 0; a < agents.size(); ++a) {
    if (!agents[a].cur.valid) continue;
    const double dx = agents[a].cur.x - vut.x;
    const double dy = agents[a].cur.y - vut.y;
    ranked.push_back({dx * dx + dy * dy, a});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& l, const Ranked& r) {
    if (l.dist2 != r.dist2) return l.dist2 < r.dist2;
    return l.id < r.id;
  });
  std::vector<std::size_t> ids;
  ids.reserve(std::min<std::size_t>(kNumAgents, ranked.size()));
  for (std::size_t i = 0; i < ranked.size() && i < kNumAgents; ++i) {
    ids.push_back(ranked[i].id);
  }
  return ids;
}

// The logged VUT future from log step t0 + 1 on, holding the last logged
// state once the log runs out; matches the frame slicer's encoding so a
// single-shot pass over an untouched world reproduces its frames exactly.
VutFuturePlan logged_vut_future(const Scenario& scenario, std::size_t t0) {
  VutFuturePlan plan;
  for (std::size_t k = 0; k < kFutureSteps; ++k) {
    const std::size_t idx =
        std::min(t0 + 1 + k, scenario.duration_steps - 1);
    const AgentState& s = scenario.vut_track[idx];
    plan.states[k] = {s.x, s.y, s.heading, std::hypot(s.vx, s.vy)};
  }
  return plan;
}

VutFuturePlan to_global_plan(const VutFuturePlan& local, const Pose2& pose) {
  VutFuturePlan out;
  for (std::size_t k = 0; k < kFutureSteps; ++k) {
    const VutFutureState& s = local.states[k];
    const Vec2 p = pose.apply({s.x, s.y});
    out.states[k] = {p.x, p.y, pose.apply_angle(s.heading), s.speed};
  }
  return out;
}

int sample_mode(const ModelOutput& out, std::size_t slot, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int k = 0; k < out.k_modes; ++k) {
    acc += out.scores(slot, static_cast<std::size_t>(k));
    if (u < acc) return k;
  }
  return out.k_modes - 1;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9f", v);
  return buf;
}

}  // namespace

SimulationTrace rollout(const Scenario& scenario, ParamStore& ps,
                        const CostWeights& key, const EngineConfig& cfg,
                        const SimOptions& opts) {
  validate_config(cfg);
  validate_scenario(scenario);
  if (scenario.duration_steps < kHistorySteps) {
    throw ValidationError(
        "rollout: scenario must provide at least 20 steps of history");
  }
  const std::size_t t0_log = kHistorySteps - 1;
  const int duration = cfg.sim.duration_steps;
  const int interval = cfg.sim.replan_interval;
  const bool no_augment = cfg.training.ablation == Ablation::kNoAugment;

  // World state at log step 19.
  AgentState vut = scenario.vut_track[t0_log];
  std::array<AgentState, kHistorySteps> vut_ring{};
  for (std::size_t k = 0; k < kHistorySteps; ++k) {
    vut_ring[k] = scenario.vut_track[k];
  }
  std::vector<WorldAgent> agents(scenario.agent_tracks.size());
  for (std::size_t a = 0; a < agents.size(); ++a) {
    for (std::size_t k = 0; k < kHistorySteps; ++k) {
      agents[a].ring[k] = scenario.agent_tracks[a][k];
    }
    agents[a].cur = agents[a].ring[kHistorySteps - 1];
  }

  SimulationTrace trace;
  trace.scenario_id = scenario.scenario_id;
  trace.seed = opts.seed;
  trace.checkpoint_id = opts.checkpoint_id;
  trace.closed_loop = !opts.single_shot;

  auto record_step = [&](int step) {
    SimStep snap;
    snap.t = static_cast<double>(step) * kDt;
    snap.vut = vut;
    check_finite(vut, step, "vut");
    snap.agents.reserve(agents.size());
    for (std::size_t a = 0; a < agents.size(); ++a) {
      if (agents[a].cur.valid) check_finite(agents[a].cur, step, "agent");
      snap.agents.push_back(agents[a].cur);
    }
    trace.steps.push_back(std::move(snap));
  };
  record_step(0);

  VutFuturePlan vut_plan_global{};  // window the VUT is tracking
  int last_replan_step = 0;
  std::size_t replan_count = 0;

  for (int step = 0; step < duration; ++step) {
    const bool replan_now =
        opts.single_shot ? (step == 0) : (step % interval == 0);
    if (replan_now) {
      // Frame from the current world, mirroring the log slicer's layout so
      // an untouched world yields bit-identical inference.
      Frame frame;
      frame.t0 = t0_log + static_cast<std::size_t>(step);
      frame.vut_history.states = vut_ring;
      const std::vector<std::size_t> ids = rank_agents(agents, vut);
      std::array<std::int64_t, kNumAgents> slot_ids;
      slot_ids.fill(-1);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        frame.agent_histories[i].agent_id =
            static_cast<std::int64_t>(ids[i]);
        frame.agent_histories[i].states = agents[ids[i]].ring;
        frame.agent_mask[i] = true;
        slot_ids[i] = static_cast<std::int64_t>(ids[i]);
      }
      frame.scene.lanes = scenario.lanes;
      frame.scene.crosswalks = scenario.crosswalks;
      frame.conflict_point = scenario.conflict_point;
      if (opts.vut_follows_log) {
        frame.vut_future_truth =
            logged_vut_future(scenario, frame.t0);
      }
      Frame local = to_local_frame(frame);
      if (!opts.vut_follows_log) {
        try {
          local.vut_future_truth =
              plan_vut_trajectory(local, key, cfg.planner, cfg.model);
        } catch (const PlanningError& e) {
          throw PlanningError("rollout step " + std::to_string(step) + ": " +
                              e.what());
        }
      }
      const InputTensors in = assemble_inputs(local, cfg.model);
      const ModelOutput out = run_model(ps, in, cfg.model, no_augment);

      // Chosen trajectories back to global coordinates.
      Mat chosen = select_most_likely(out);
      if (opts.sample_modes) {
        Rng rng(opts.seed ^
                (0x9e3779b97f4a7c15ULL * (replan_count + 1)));
        for (std::size_t slot = 0; slot < kNumAgents; ++slot) {
          if (!out.agent_mask[slot]) continue;
          const int k = sample_mode(out, slot, rng);
          for (std::size_t c = 0; c < 2 * kFutureSteps; ++c) {
            chosen(slot, c) = out.modes[static_cast<std::size_t>(k)](slot, c);
          }
        }
      }
      for (auto& a : agents) a.model_driven = false;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        WorldAgent& a = agents[ids[i]];
        a.model_driven = true;
        for (std::size_t k = 0; k < kFutureSteps; ++k) {
          a.traj[k] = local.global_from_local.apply(
              {chosen(i, 2 * k), chosen(i, 2 * k + 1)});
        }
      }
      vut_plan_global =
          to_global_plan(local.vut_future_truth, local.global_from_local);
      last_replan_step = step;
      ++replan_count;

      ReplanRecord rec;
      rec.step = step;
      rec.key = key;
      rec.planned = vut_plan_global;
      rec.inference = out;
      rec.slot_agent_ids = slot_ids;
      trace.replans.push_back(std::move(rec));
    }

    // Advance one step: the VUT along its plan (or the log), background
    // agents along their inferred windows, everything else along the log.
    const std::size_t offset =
        static_cast<std::size_t>(step - last_replan_step);  // 0-based
    const std::size_t log_idx = t0_log + static_cast<std::size_t>(step) + 1;

    if (opts.vut_follows_log && log_idx < scenario.duration_steps) {
      vut = scenario.vut_track[log_idx];
    } else if (offset < kFutureSteps) {
      const VutFutureState& s = vut_plan_global.states[offset];
      AgentState next = advance_to(vut, {s.x, s.y}, cfg.sim.v_max);
      next.heading = s.heading;
      vut = next;
    } else {
      vut = hold_position(vut);
    }
    push_ring(vut_ring, vut);

    for (std::size_t a = 0; a < agents.size(); ++a) {
      WorldAgent& w = agents[a];
      if (w.model_driven) {
        w.cur = offset < kFutureSteps
                    ? advance_to(w.cur, w.traj[offset], cfg.sim.v_max)
                    : hold_position(w.cur);
        w.diverged = true;
      } else if (!w.diverged && log_idx < scenario.duration_steps) {
        w.cur = scenario.agent_tracks[a][log_idx];
      } else if (w.cur.valid) {
        w.cur = hold_position(w.cur);
      }
      push_ring(w.ring, w.cur);
    }
    record_step(step + 1);
  }
  return trace;
}

DivergenceReport diversity_sweep(const Scenario& scenario, ParamStore& ps,
                                 const std::vector<CostWeights>& keys,
                                 const EngineConfig& cfg,
                                 const SimOptions& opts) {
  if (keys.size() < 2) {
    throw ValidationError("diversity_sweep: need at least two keys");
  }
  std::vector<SimulationTrace> traces;
  traces.reserve(keys.size());
  for (const CostWeights& key : keys) {
    traces.push_back(rollout(scenario, ps, key, cfg, opts));
  }

  DivergenceReport rep;
  rep.scenario_id = scenario.scenario_id;
  rep.duration_steps = static_cast<std::size_t>(cfg.sim.duration_steps);
  rep.keys = keys;
  for (const SimulationTrace& tr : traces) {
    double arc = 0.0;
    for (std::size_t s = 1; s < tr.steps.size(); ++s) {
      arc += std::hypot(tr.steps[s].vut.x - tr.steps[s - 1].vut.x,
                        tr.steps[s].vut.y - tr.steps[s - 1].vut.y);
    }
    rep.vut_progress.push_back(arc);
  }

  const std::size_t n_agents = scenario.agent_tracks.size();
  for (std::size_t i = 0; i < keys.size(); ++i) {
    for (std::size_t j = i + 1; j < keys.size(); ++j) {
      KeyPairDivergence pair;
      pair.key_a = i;
      pair.key_b = j;
      double overall = 0.0;
      for (std::size_t a = 0; a < n_agents; ++a) {
        AgentDivergence d;
        d.agent_id = a;
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t s = 0; s < traces[i].steps.size(); ++s) {
          const AgentState& sa = traces[i].steps[s].agents[a];
          const AgentState& sb = traces[j].steps[s].agents[a];
          if (!sa.valid || !sb.valid) continue;
          const double disp = std::hypot(sa.x - sb.x, sa.y - sb.y);
          sum += disp;
          d.max_displacement = std::max(d.max_displacement, disp);
          ++count;
        }
        d.mean_displacement =
            count > 0 ? sum / static_cast<double>(count) : 0.0;
        overall += d.mean_displacement;
        pair.agents.push_back(d);
      }
      pair.mean_over_agents =
          n_agents > 0 ? overall / static_cast<double>(n_agents) : 0.0;
      rep.pairs.push_back(std::move(pair));
    }
  }

  if (scenario.conflict_point.has_value()) {
    const Vec2 cp = *scenario.conflict_point;
    for (const SimulationTrace& tr : traces) {
      // First-passage step of the VUT, then of each agent.
      std::size_t vut_pass = tr.steps.size();
      for (std::size_t s = 0; s < tr.steps.size(); ++s) {
        const AgentState& v = tr.steps[s].vut;
        if (std::hypot(v.x - cp.x, v.y - cp.y) <= kConflictRadius) {
          vut_pass = s;
          break;
        }
      }
      std::vector<ConflictOrder> orders(n_agents, ConflictOrder::kNever);
      for (std::size_t a = 0; a < n_agents; ++a) {
        for (std::size_t s = 0; s < tr.steps.size(); ++s) {
          const AgentState& st = tr.steps[s].agents[a];
          if (!st.valid) continue;
          if (std::hypot(st.x - cp.x, st.y - cp.y) <= kConflictRadius) {
            orders[a] = s < vut_pass ? ConflictOrder::kBefore
                                     : ConflictOrder::kAfter;
            break;
          }
        }
      }
      rep.conflict.push_back(std::move(orders));
    }
  }
  return rep;
}

std::string format_divergence_report(const DivergenceReport& rep) {
  std::ostringstream os;
  os << "diversity sweep: scenario " << rep.scenario_id << ", "
     << rep.keys.size() << " keys, " << rep.duration_steps << " steps\n";
  os << "keys:\n";
  for (std::size_t i = 0; i < rep.keys.size(); ++i) {
    os << "  key " << i << ":";
    for (int f = 0; f < kNumCostFeatures; ++f) {
      os << ' ' << kCostFeatureNames[static_cast<std::size_t>(f)] << '='
         << format_double(rep.keys[i].w[static_cast<std::size_t>(f)]);
    }
    os << '\n';
  }
  os << "vut progress (m):\n";
  for (std::size_t i = 0; i < rep.vut_progress.size(); ++i) {
    os << "  key " << i << ": " << format_double(rep.vut_progress[i]) << '\n';
  }
  os << "pairwise mean displacement (m), averaged over agents:\n";
  os << "      ";
  for (std::size_t i = 0; i < rep.keys.size(); ++i) os << " key" << i;
  os << '\n';
  for (std::size_t i = 0; i < rep.keys.size(); ++i) {
    os << "  key" << i;
    for (std::size_t j = 0; j < rep.keys.size(); ++j) {
      double v = 0.0;
      for (const KeyPairDivergence& p : rep.pairs) {
        if ((p.key_a == i && p.key_b == j) ||
            (p.key_a == j && p.key_b == i)) {
          v = p.mean_over_agents;
        }
      }
      os << ' ' << format_double(v);
    }
    os << '\n';
  }
  os << "per-agent displacement:\n";
  for (const KeyPairDivergence& p : rep.pairs) {
    for (const AgentDivergence& d : p.agents) {
      os << "  pair (" << p.key_a << ',' << p.key_b << ") agent "
         << d.agent_id << " mean=" << format_double(d.mean_displacement)
         << " max=" << format_double(d.max_displacement) << '\n';
    }
  }
  if (!rep.conflict.empty()) {
    os << "conflict-point order (agent vs VUT):\n";
    for (std::size_t k = 0; k < rep.conflict.size(); ++k) {
      os << "  key " << k << ":";
      for (std::size_t a = 0; a < rep.conflict[k].size(); ++a) {
        const char* tag = rep.conflict[k][a] == ConflictOrder::kBefore
                              ? "before"
                          : rep.conflict[k][a] == ConflictOrder::kAfter
                              ? "after"
                              : "never";
        os << " agent" << a << '=' << tag;
      }
      os << '\n';
    }
  } else {
    os << "conflict-point order: no conflict point in scenario\n";
  }
  return os.str();
}

namespace {

void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << body;
  if (!out) throw IoError("short write to " + path);
}

std::string trace_csv(const SimulationTrace& trace) {
  std::ostringstream os;
  os << "t,agent_id,x,y,heading,speed\n";
  char buf[256];
  for (const SimStep& s : trace.steps) {
    const auto row = [&](std::size_t id, const AgentState& a) {
      std::snprintf(buf, sizeof(buf), "%.3f,%zu,%.9f,%.9f,%.9f,%.9f\n", s.t,
                    id, a.x, a.y, a.heading, std::hypot(a.vx, a.vy));
      os << buf;
    };
    row(0, s.vut);
    for (std::size_t a = 0; a < s.agents.size(); ++a) {
      if (s.agents[a].valid) row(a + 1, s.agents[a]);
    }
  }
  return os.str();
}

void append_polyline(std::ostringstream& os, const std::vector<Vec2>& pts,
                     const char* style) {
  if (pts.size() < 2) return;
  os << "<polyline fill=\"none\" " << style << " points=\"";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i > 0) os << ' ';
    // y flipped so north is up in the image.
    os << format_double(pts[i].x) << ',' << format_double(-pts[i].y);
  }
  os << "\"/>\n";
}

std::string trace_svg(const SimulationTrace& trace, const Scenario& scenario) {
  double lo_x = std::numeric_limits<double>::infinity();
  double lo_y = lo_x, hi_x = -lo_x, hi_y = -lo_x;
  const auto grow = [&](const Vec2& p) {
    lo_x = std::min(lo_x, p.x);
    hi_x = std::max(hi_x, p.x);
    lo_y = std::min(lo_y, -p.y);
    hi_y = std::max(hi_y, -p.y);
  };
  for (const LanePolyline& lane : scenario.lanes) {
    for (const LaneWaypoint& w : lane.waypoints) grow(w.center);
  }
  for (const CrosswalkPolygon& cw : scenario.crosswalks) {
    for (const Vec2& p : cw.perimeter) grow(p);
  }
  for (const SimStep& s : trace.steps) {
    grow({s.vut.x, s.vut.y});
    for (const AgentState& a : s.agents) {
      if (a.valid) grow({a.x, a.y});
    }
  }
  if (!std::isfinite(lo_x)) {
    lo_x = lo_y = -1.0;
    hi_x = hi_y = 1.0;
  }
  const double margin = 5.0;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\""
     << format_double(lo_x - margin) << ' ' << format_double(lo_y - margin)
     << ' ' << format_double(hi_x - lo_x + 2 * margin) << ' '
     << format_double(hi_y - lo_y + 2 * margin) << "\">\n";
  for (const LanePolyline& lane : scenario.lanes) {
    std::vector<Vec2> left, center, right;
    for (const LaneWaypoint& w : lane.waypoints) {
      left.push_back(w.left);
      center.push_back(w.center);
      right.push_back(w.right);
    }
    append_polyline(os, left, "stroke=\"#c8c8c8\" stroke-width=\"0.15\"");
    append_polyline(os, right, "stroke=\"#c8c8c8\" stroke-width=\"0.15\"");
    append_polyline(
        os, center,
        "stroke=\"#969696\" stroke-width=\"0.1\" stroke-dasharray=\"1,1\"");
  }
  for (const CrosswalkPolygon& cw : scenario.crosswalks) {
    std::vector<Vec2> ring = cw.perimeter;
    if (!ring.empty()) ring.push_back(ring.front());
    append_polyline(os, ring, "stroke=\"#d2a43c\" stroke-width=\"0.15\"");
  }
  if (scenario.conflict_point.has_value()) {
    os << "<circle cx=\"" << format_double(scenario.conflict_point->x)
       << "\" cy=\"" << format_double(-scenario.conflict_point->y)
       << "\" r=\"1.0\" fill=\"none\" stroke=\"#cc3333\" "
          "stroke-width=\"0.2\"/>\n";
  }
  static const char* kAgentColors[] = {"#3366cc", "#33aa55", "#9955cc",
                                       "#cc8833", "#338899"};
  const std::size_t n_agents =
      trace.steps.empty() ? 0 : trace.steps.front().agents.size();
  for (std::size_t a = 0; a < n_agents; ++a) {
    std::vector<Vec2> path;
    for (const SimStep& s : trace.steps) {
      if (s.agents[a].valid) path.push_back({s.agents[a].x, s.agents[a].y});
    }
    const std::string style = std::string("stroke=\"") +
                              kAgentColors[a % 5] +
                              "\" stroke-width=\"0.25\"";
    append_polyline(os, path, style.c_str());
  }
  std::vector<Vec2> vut_path;
  for (const SimStep& s : trace.steps) vut_path.push_back({s.vut.x, s.vut.y});
  append_polyline(os, vut_path, "stroke=\"#111111\" stroke-width=\"0.4\"");
  os << "</svg>\n";
  return os.str();
}

}  // namespace

void export_trace(const SimulationTrace& trace, const Scenario& scenario,
                  const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

  write_file(out_dir + "/trace.csv", trace_csv(trace));
  write_file(out_dir + "/trace.svg", trace_svg(trace, scenario));

  nlohmann::json manifest;
  manifest["mode"] = trace.closed_loop ? "closed_loop" : "single_shot";
  manifest["scenario_id"] = trace.scenario_id;
  manifest["seed"] = trace.seed;
  manifest["checkpoint_id"] = trace.checkpoint_id;
  manifest["duration_steps"] =
      trace.steps.empty() ? 0 : trace.steps.size() - 1;
  manifest["replan_count"] = trace.replans.size();
  nlohmann::json key = nlohmann::json::object();
  if (!trace.replans.empty()) {
    for (int f = 0; f < kNumCostFeatures; ++f) {
      key[kCostFeatureNames[static_cast<std::size_t>(f)]] =
          trace.replans.front().key.w[static_cast<std::size_t>(f)];
    }
  }
  manifest["key"] = key;
  manifest["files"] = {{"trace", "trace.csv"}, {"plot", "trace.svg"}};
  write_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");
}

SimulationTrace import_trace_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "t,agent_id,x,y,heading,speed") {
    throw ParseError("trace csv: bad header in " + path);
  }
  struct Row {
    double t;
    std::size_t id;
    AgentState s;
  };
  std::vector<Row> rows;
  std::size_t max_id = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Row r;
    double speed = 0.0;
    const int got =
        std::sscanf(line.c_str(), "%lf,%zu,%lf,%lf,%lf,%lf", &r.t, &r.id,
                    &r.s.x, &r.s.y, &r.s.heading, &speed);
    if (got != 6) {
      throw ParseError("trace csv: bad row at line " +
                       std::to_string(line_no) + " in " + path);
    }
    r.s.vx = speed * std::cos(r.s.heading);
    r.s.vy = speed * std::sin(r.s.heading);
    r.s.valid = true;
    max_id = std::max(max_id, r.id);
    rows.push_back(r);
  }

  SimulationTrace trace;
  const std::size_t n_agents = max_id;  // ids 1..max_id, 0 is the VUT
  for (const Row& r : rows) {
    if (trace.steps.empty() || trace.steps.back().t != r.t) {
      SimStep s;
      s.t = r.t;
      s.agents.resize(n_agents);
      trace.steps.push_back(std::move(s));
    }
    if (r.id == 0) {
      trace.steps.back().vut = r.s;
    } else {
      trace.steps.back().agents[r.id - 1] = r.s;
    }
  }
  return trace;
}

}  // namespace vcdi

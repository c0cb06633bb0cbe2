#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vcdi/config.hpp"
#include "vcdi/cost.hpp"
#include "vcdi/model.hpp"
#include "vcdi/param_store.hpp"
#include "vcdi/scenario.hpp"

namespace vcdi {

// Closed-loop traffic simulation around the inference model: every
// replan_interval steps the VUT is re-planned under its cost key, the model
// infers background futures conditioned on that plan, and the world advances
// along the most-likely modes while the VUT tracks its plan. Between replans
// agents that run out of inferred trajectory hold their last position.
// Agents outside the model's nearest-10 set replay the scenario log; an
// agent that was ever model-driven never snaps back to the log (that would
// teleport) and instead holds position while out of the set.

// One 10 Hz world snapshot in global coordinates. Background entries are
// indexed by scenario agent id; valid mirrors log validity for replayed
// agents and is always true once an agent is model-driven.
struct SimStep {
  double t = 0.0;  // seconds since rollout start
  AgentState vut;
  std::vector<AgentState> agents;
};

// Inference and plan snapshot taken at one replan boundary.
struct ReplanRecord {
  int step = 0;  // rollout step the replan ran at
  CostWeights key;
  VutFuturePlan planned;  // global coordinates
  ModelOutput inference;  // VUT-local frame, exactly as produced
  std::array<std::int64_t, kNumAgents> slot_agent_ids{};  // -1 when masked
};

struct SimulationTrace {
  std::string scenario_id;
  std::uint64_t seed = 0;
  std::uint64_t checkpoint_id = 0;
  bool closed_loop = true;  // false: single planning/inference pass at t = 0
  std::vector<SimStep> steps;  // duration + 1 entries; steps[0] is initial
  std::vector<ReplanRecord> replans;
};

struct SimOptions {
  bool single_shot = false;     // plan and infer once, never replan
  bool vut_follows_log = false;  // VUT replays the scenario track instead of
                                 // planning; the logged future conditions the
                                 // model
  bool sample_modes = false;  // sample per-agent modes by score instead of
                              // taking the most likely one
  std::uint64_t seed = 0;
  std::uint64_t checkpoint_id = 0;  // stamped into the trace and manifest
};

// Rolls the world forward cfg.sim.duration_steps steps from the scenario
// state at the end of the history window (log step 19). Deterministic:
// identical inputs give a bit-identical trace. Throws ValidationError when
// the scenario lacks a full 20-step history, PlanningError tagged with the
// rollout step when the planner fails, and NumericError on non-finite
// states. duration 0 yields only the initial state and no replan.
SimulationTrace rollout(const Scenario& scenario, ParamStore& ps,
                        const CostWeights& key, const EngineConfig& cfg,
                        const SimOptions& opts);

// Whether a background agent crosses the scenario conflict point before the
// VUT does. Passage = first step within kConflictRadius meters; ties and
// never-passing VUTs count per the comparison of first-passage steps, and
// agents that never reach the point are kNever.
enum class ConflictOrder { kBefore, kAfter, kNever };

inline constexpr double kConflictRadius = 2.0;  // meters

struct AgentDivergence {
  std::size_t agent_id = 0;
  double mean_displacement = 0.0;  // meters, over matched timestamps
  double max_displacement = 0.0;
};

struct KeyPairDivergence {
  std::size_t key_a = 0;
  std::size_t key_b = 0;
  std::vector<AgentDivergence> agents;  // one entry per scenario agent
  double mean_over_agents = 0.0;
};

struct DivergenceReport {
  std::string scenario_id;
  std::size_t duration_steps = 0;
  std::vector<CostWeights> keys;
  // Arc length of the VUT's driven path per key: how far each strategy
  // actually got, so reports can read off efficiency-driven changes.
  std::vector<double> vut_progress;
  std::vector<KeyPairDivergence> pairs;  // unordered pairs, key_a < key_b
  // conflict[k][a]: rollout under key k, agent a versus the VUT. Empty when
  // the scenario declares no conflict point.
  std::vector<std::vector<ConflictOrder>> conflict;
};

// One rollout per key under a shared seed, then pairwise per-agent
// displacement at matched timestamps. Throws ValidationError for fewer than
// two keys. Identical keys produce exactly zero divergence.
DivergenceReport diversity_sweep(const Scenario& scenario, ParamStore& ps,
                                 const std::vector<CostWeights>& keys,
                                 const EngineConfig& cfg,
                                 const SimOptions& opts);

// Pairwise divergence matrix plus per-agent detail and conflict-order flags
// as plain text.
std::string format_divergence_report(const DivergenceReport& report);

// Writes trace.csv (t,agent_id,x,y,heading,speed; the VUT is agent_id 0 and
// scenario agent a is a + 1), trace.svg (overhead plot with the map), and
// manifest.json (seed, key, checkpoint id, mode) under out_dir, creating it
// if needed. Throws IoError naming the path on failure. An empty trace
// yields a header-only csv.
void export_trace(const SimulationTrace& trace, const Scenario& scenario,
                  const std::string& out_dir);

// Reads a trace.csv written by export_trace back into per-step states
// (positions, headings, speeds; replan records are not part of the file).
SimulationTrace import_trace_csv(const std::string& path);

}  // namespace vcdi

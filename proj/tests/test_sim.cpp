#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "test_support.hpp"
#include "vcdi/errors.hpp"
#include "vcdi/features.hpp"
#include "vcdi/model.hpp"
#include "vcdi/param_store.hpp"
#include "vcdi/sim.hpp"

using vcdi::AgentState;
using vcdi::ConflictOrder;
using vcdi::CostWeights;
using vcdi::DivergenceReport;
using vcdi::EngineConfig;
using vcdi::Frame;
using vcdi::ModelOutput;
using vcdi::ParamStore;
using vcdi::Scenario;
using vcdi::SimOptions;
using vcdi::SimulationTrace;
using vcdi::Vec2;
using vcdi::kDt;
using vcdi::kFutureSteps;
using vcdi::kHistorySteps;
using vcdi::kNumAgents;
using vcdi::kNumCostFeatures;

namespace {

EngineConfig tiny_engine() {
  EngineConfig cfg;
  cfg.model.d_model = 16;
  cfg.model.k_modes = 2;
  cfg.model.l_lanes = 2;
  cfg.model.w_waypoints = 8;
  cfg.model.c_crosswalks = 1;
  cfg.model.p_points = 4;
  cfg.model.n_heads = 2;
  cfg.model.ff_dim = 32;
  cfg.model.n_layers = 1;
  cfg.planner.n_speeds = 4;
  cfg.planner.n_lateral = 3;
  cfg.planner.refine_steps = 2;
  cfg.sim.duration_steps = 30;
  cfg.sim.replan_interval = 10;
  return cfg;
}

Scenario intersection_scenario(std::uint64_t seed = 3,
                               std::size_t duration = 80) {
  vcdi::SynthParams p;
  p.duration_steps = duration;
  return vcdi::generate_synthetic_scenario(vcdi::SynthKind::kIntersection,
                                           seed, p);
}

ParamStore untrained_params(const EngineConfig& cfg, std::uint64_t seed = 1) {
  ParamStore ps;
  vcdi::init_model_params(ps, cfg.model, seed);
  return ps;
}

CostWeights ones_key() {
  CostWeights k;
  k.w.fill(1.0);
  return k;
}

// Constant-velocity track over the whole log; x0/y0 are the positions at
// sim start (log step 19), so positions rewind for earlier history steps.
std::vector<AgentState> straight_track(std::size_t duration, double x0,
                                       double y0, double vx, double vy,
                                       double heading) {
  std::vector<AgentState> track(duration);
  for (std::size_t t = 0; t < duration; ++t) {
    AgentState& s = track[t];
    const double rel = (static_cast<double>(t) - 19.0) * kDt;
    s.x = x0 + vx * rel;
    s.y = y0 + vy * rel;
    s.heading = heading;
    s.vx = vx;
    s.vy = vy;
    s.length = 4.5;
    s.width = 1.8;
    s.valid = true;
  }
  return track;
}

vcdi::LanePolyline straight_lane(double y, double x_lo, double x_hi,
                                 std::size_t n) {
  vcdi::LanePolyline lane;
  for (std::size_t i = 0; i < n; ++i) {
    const double x =
        x_lo + (x_hi - x_lo) * static_cast<double>(i) /
                   static_cast<double>(n - 1);
    vcdi::LaneWaypoint w;
    w.center = {x, y};
    w.left = {x, y + 1.75};
    w.right = {x, y - 1.75};
    w.heading = 0.0;
    w.speed_limit = 10.0;
    lane.waypoints.push_back(w);
  }
  return lane;
}

// Hand scenario: a parked or moving VUT, ten parked agents near it that fill
// the model's slots, and extra far agents whose motion the log dictates.
Scenario crafted_scenario(std::size_t duration, double vut_speed,
                          const std::vector<std::vector<AgentState>>& extra,
                          Vec2 conflict) {
  Scenario s;
  s.scenario_id = "crafted";
  s.duration_steps = duration;
  s.vut_track = straight_track(duration, 0.0, 0.0, vut_speed, 0.0, 0.0);
  // Ten parked dummies ring the VUT position at sim start so they fill all
  // model slots; anything farther stays on log replay.
  for (int i = 0; i < 10; ++i) {
    const double ang = static_cast<double>(i) * 0.628;
    s.agent_tracks.push_back(straight_track(duration, 2.0 * std::cos(ang),
                                            2.0 * std::sin(ang), 0.0, 0.0,
                                            0.0));
  }
  for (const auto& track : extra) s.agent_tracks.push_back(track);
  s.lanes.push_back(straight_lane(0.0, -40.0, 60.0, 21));
  s.conflict_point = conflict;
  vcdi::validate_scenario(s);
  return s;
}

void check_states_equal(const AgentState& a, const AgentState& b) {
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
  CHECK(a.heading == b.heading);
  CHECK(a.vx == b.vx);
  CHECK(a.vy == b.vy);
  CHECK(a.valid == b.valid);
}

void check_traces_equal(const SimulationTrace& a, const SimulationTrace& b) {
  REQUIRE(a.steps.size() == b.steps.size());
  for (std::size_t s = 0; s < a.steps.size(); ++s) {
    CHECK(a.steps[s].t == b.steps[s].t);
    check_states_equal(a.steps[s].vut, b.steps[s].vut);
    REQUIRE(a.steps[s].agents.size() == b.steps[s].agents.size());
    for (std::size_t i = 0; i < a.steps[s].agents.size(); ++i) {
      check_states_equal(a.steps[s].agents[i], b.steps[s].agents[i]);
    }
  }
  REQUIRE(a.replans.size() == b.replans.size());
  for (std::size_t r = 0; r < a.replans.size(); ++r) {
    CHECK(a.replans[r].step == b.replans[r].step);
    for (std::size_t k = 0; k < kFutureSteps; ++k) {
      CHECK(a.replans[r].planned.states[k].x ==
            b.replans[r].planned.states[k].x);
      CHECK(a.replans[r].planned.states[k].y ==
            b.replans[r].planned.states[k].y);
    }
    const ModelOutput& ma = a.replans[r].inference;
    const ModelOutput& mb = b.replans[r].inference;
    REQUIRE(ma.modes.size() == mb.modes.size());
    for (std::size_t m = 0; m < ma.modes.size(); ++m) {
      for (std::size_t i = 0; i < ma.modes[m].size(); ++i) {
        CHECK(ma.modes[m].d[i] == mb.modes[m].d[i]);
      }
    }
    for (std::size_t i = 0; i < ma.scores.size(); ++i) {
      CHECK(ma.scores.d[i] == mb.scores.d[i]);
    }
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string temp_dir(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

// Minimal XML well-formedness scan: tags must nest properly and a single
// svg element must span the document.
bool svg_well_formed(const std::string& body) {
  std::vector<std::string> stack;
  std::size_t roots = 0;
  std::size_t pos = 0;
  while ((pos = body.find('<', pos)) != std::string::npos) {
    const std::size_t end = body.find('>', pos);
    if (end == std::string::npos) return false;
    std::string tag = body.substr(pos + 1, end - pos - 1);
    pos = end + 1;
    if (tag.empty()) return false;
    if (tag.front() == '?' || tag.front() == '!') continue;
    const bool closing = tag.front() == '/';
    const bool self_closing = tag.back() == '/';
    if (closing) tag = tag.substr(1);
    const std::size_t name_end = tag.find_first_of(" \t\n/");
    const std::string name = tag.substr(0, name_end);
    if (name.empty()) return false;
    if (closing) {
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
      if (stack.empty()) ++roots;
    } else if (!self_closing) {
      stack.push_back(name);
    } else if (stack.empty()) {
      ++roots;
    }
  }
  return stack.empty() && roots == 1;
}

}  // namespace

TEST_CASE("rollout yields a contiguous finite trace and is deterministic") {
  const EngineConfig cfg = tiny_engine();
  const Scenario scenario = intersection_scenario();
  ParamStore ps = untrained_params(cfg);
  SimOptions opts;
  opts.seed = 42;
  opts.checkpoint_id = 77;

  const SimulationTrace tr =
      vcdi::rollout(scenario, ps, ones_key(), cfg, opts);
  CHECK(tr.scenario_id == scenario.scenario_id);
  CHECK(tr.seed == 42);
  CHECK(tr.checkpoint_id == 77);
  CHECK(tr.closed_loop);
  REQUIRE(tr.steps.size() == 31);
  for (std::size_t k = 0; k < tr.steps.size(); ++k) {
    CHECK(std::abs(tr.steps[k].t - static_cast<double>(k) * kDt) <= 1e-12);
    CHECK(std::isfinite(tr.steps[k].vut.x));
    CHECK(std::isfinite(tr.steps[k].vut.y));
    REQUIRE(tr.steps[k].agents.size() == scenario.agent_tracks.size());
    for (const AgentState& a : tr.steps[k].agents) {
      if (!a.valid) continue;
      CHECK(std::isfinite(a.x));
      CHECK(std::isfinite(a.y));
      CHECK(std::isfinite(a.heading));
    }
  }
  REQUIRE(tr.replans.size() == 3);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(tr.replans[r].step == static_cast<int>(10 * r));
    const ModelOutput& out = tr.replans[r].inference;
    CHECK(out.k_modes == cfg.model.k_modes);
    REQUIRE(out.modes.size() == static_cast<std::size_t>(cfg.model.k_modes));
    for (const vcdi::Mat& m : out.modes) {
      CHECK(m.rows == kNumAgents);
      CHECK(m.cols == 2 * kFutureSteps);
    }
    CHECK(out.scores.rows == kNumAgents);
    CHECK(out.scores.cols == static_cast<std::size_t>(cfg.model.k_modes));
    for (std::size_t slot = 0; slot < kNumAgents; ++slot) {
      CHECK((tr.replans[r].slot_agent_ids[slot] >= 0) ==
            out.agent_mask[slot]);
    }
  }

  ParamStore ps2 = untrained_params(cfg);
  const SimulationTrace tr2 =
      vcdi::rollout(scenario, ps2, ones_key(), cfg, opts);
  check_traces_equal(tr, tr2);
}

TEST_CASE("rollout handles duration zero and rejects short scenarios") {
  EngineConfig cfg = tiny_engine();
  cfg.sim.duration_steps = 0;
  const Scenario scenario = intersection_scenario();
  ParamStore ps = untrained_params(cfg);
  const SimulationTrace tr =
      vcdi::rollout(scenario, ps, ones_key(), cfg, SimOptions{});
  REQUIRE(tr.steps.size() == 1);
  CHECK(tr.replans.empty());
  CHECK(tr.steps[0].vut.x == scenario.vut_track[kHistorySteps - 1].x);
  CHECK(tr.steps[0].vut.y == scenario.vut_track[kHistorySteps - 1].y);
  for (std::size_t a = 0; a < scenario.agent_tracks.size(); ++a) {
    check_states_equal(tr.steps[0].agents[a],
                       scenario.agent_tracks[a][kHistorySteps - 1]);
  }

  Scenario short_scenario = scenario;
  short_scenario.duration_steps = 10;
  short_scenario.vut_track.resize(10);
  for (auto& track : short_scenario.agent_tracks) track.resize(10);
  CHECK_THROWS_AS(
      vcdi::rollout(short_scenario, ps, ones_key(), cfg, SimOptions{}),
      vcdi::ValidationError);
}

TEST_CASE("rollout never teleports any agent between steps") {
  EngineConfig cfg = tiny_engine();
  cfg.sim.duration_steps = 40;
  const Scenario scenario = intersection_scenario(5);
  ParamStore ps = untrained_params(cfg, 2);
  const SimulationTrace tr =
      vcdi::rollout(scenario, ps, ones_key(), cfg, SimOptions{});
  const double cap = cfg.sim.v_max * kDt + 1e-9;
  for (std::size_t k = 1; k < tr.steps.size(); ++k) {
    const auto& prev = tr.steps[k - 1];
    const auto& cur = tr.steps[k];
    CHECK(std::hypot(cur.vut.x - prev.vut.x, cur.vut.y - prev.vut.y) <= cap);
    for (std::size_t a = 0; a < cur.agents.size(); ++a) {
      if (!prev.agents[a].valid || !cur.agents[a].valid) continue;
      CHECK(std::hypot(cur.agents[a].x - prev.agents[a].x,
                       cur.agents[a].y - prev.agents[a].y) <= cap);
    }
  }
}

TEST_CASE("single-shot pass over the untouched world matches offline "
          "inference exactly") {
  EngineConfig cfg = tiny_engine();
  cfg.sim.duration_steps = 10;
  const Scenario scenario = intersection_scenario();
  ParamStore ps = untrained_params(cfg);
  SimOptions opts;
  opts.single_shot = true;
  opts.vut_follows_log = true;
  const SimulationTrace tr =
      vcdi::rollout(scenario, ps, ones_key(), cfg, opts);
  CHECK_FALSE(tr.closed_loop);
  REQUIRE(tr.replans.size() == 1);

  const std::vector<Frame> frames = vcdi::slice_frames(scenario, 10);
  REQUIRE(!frames.empty());
  REQUIRE(frames[0].t0 == kHistorySteps - 1);
  const Frame local = vcdi::to_local_frame(frames[0]);
  const vcdi::InputTensors in = vcdi::assemble_inputs(local, cfg.model);
  const ModelOutput ref = vcdi::run_model(ps, in, cfg.model, false);

  const ModelOutput& got = tr.replans[0].inference;
  CHECK(got.k_modes == ref.k_modes);
  for (std::size_t slot = 0; slot < kNumAgents; ++slot) {
    CHECK(got.agent_mask[slot] == ref.agent_mask[slot]);
  }
  REQUIRE(got.modes.size() == ref.modes.size());
  for (std::size_t m = 0; m < got.modes.size(); ++m) {
    REQUIRE(got.modes[m].size() == ref.modes[m].size());
    for (std::size_t i = 0; i < got.modes[m].size(); ++i) {
      CHECK(got.modes[m].d[i] == ref.modes[m].d[i]);
    }
  }
  for (std::size_t i = 0; i < got.scores.size(); ++i) {
    CHECK(got.scores.d[i] == ref.scores.d[i]);
  }
}

TEST_CASE("exhausted windows hold the last position in single-shot mode") {
  EngineConfig cfg = tiny_engine();
  cfg.sim.duration_steps = 60;
  const Scenario scenario = intersection_scenario();
  ParamStore ps = untrained_params(cfg);
  SimOptions opts;
  opts.single_shot = true;
  const SimulationTrace tr =
      vcdi::rollout(scenario, ps, ones_key(), cfg, opts);
  REQUIRE(tr.steps.size() == 61);
  REQUIRE(tr.replans.size() == 1);
  // The plan and the inferred windows cover 50 steps; afterwards everything
  // the model drives freezes in place with zero velocity.
  for (std::size_t k = 51; k <= 60; ++k) {
    CHECK(tr.steps[k].vut.x == tr.steps[50].vut.x);
    CHECK(tr.steps[k].vut.y == tr.steps[50].vut.y);
    CHECK(std::hypot(tr.steps[k].vut.vx, tr.steps[k].vut.vy) == 0.0);
    for (std::size_t slot = 0; slot < kNumAgents; ++slot) {
      const std::int64_t id = tr.replans[0].slot_agent_ids[slot];
      if (id < 0) continue;
      const auto a = static_cast<std::size_t>(id);
      CHECK(tr.steps[k].agents[a].x == tr.steps[50].agents[a].x);
      CHECK(tr.steps[k].agents[a].y == tr.steps[50].agents[a].y);
    }
  }
}

TEST_CASE("agents outside the model set replay the log and hold at its end") {
  EngineConfig cfg = tiny_engine();
  cfg.sim.duration_steps = 65;
  Scenario scenario = intersection_scenario();
  // Pad past the slot count with parked mid-distance agents, then add one
  // moving agent far beyond all of them: it can never enter the model set
  // and must replay its log.
  while (scenario.agent_tracks.size() < kNumAgents + 1) {
    const double off = 200.0 + 5.0 * static_cast<double>(
                                          scenario.agent_tracks.size());
    scenario.agent_tracks.push_back(straight_track(
        scenario.duration_steps, off, -off, 0.0, 0.0, 0.0));
  }
  scenario.agent_tracks.push_back(straight_track(
      scenario.duration_steps, 500.0, 500.0, 5.0, 0.0, 0.0));
  vcdi::validate_scenario(scenario);
  const std::size_t far_id = scenario.agent_tracks.size() - 1;

  ParamStore ps = untrained_params(cfg);
  const SimulationTrace tr =
      vcdi::rollout(scenario, ps, ones_key(), cfg, SimOptions{});
  for (const auto& rec : tr.replans) {
    for (std::int64_t id : rec.slot_agent_ids) {
      CHECK(id != static_cast<std::int64_t>(far_id));
    }
  }
  const auto& track = scenario.agent_tracks[far_id];
  for (std::size_t k = 0; k < tr.steps.size(); ++k) {
    const std::size_t log_idx = kHistorySteps - 1 + k;
    const AgentState& got = tr.steps[k].agents[far_id];
    if (log_idx < scenario.duration_steps) {
      CHECK(got.x == track[log_idx].x);
      CHECK(got.y == track[log_idx].y);
    } else {
      CHECK(got.x == track.back().x);
      CHECK(got.y == track.back().y);
    }
  }
}

TEST_CASE("planner failures surface as planning errors tagged with the "
          "step") {
  EngineConfig cfg = tiny_engine();
  Scenario scenario = intersection_scenario();
  scenario.lanes.clear();
  scenario.crosswalks.clear();
  ParamStore ps = untrained_params(cfg);
  try {
    vcdi::rollout(scenario, ps, ones_key(), cfg, SimOptions{});
    FAIL("expected a planning error");
  } catch (const vcdi::PlanningError& e) {
    CHECK(std::string(e.what()).find("rollout step 0") != std::string::npos);
  }
}

TEST_CASE("sampled-mode rollouts are reproducible per seed") {
  EngineConfig cfg = tiny_engine();
  cfg.sim.duration_steps = 20;
  const Scenario scenario = intersection_scenario();
  ParamStore ps = untrained_params(cfg);
  SimOptions opts;
  opts.sample_modes = true;
  opts.seed = 5;
  const SimulationTrace a = vcdi::rollout(scenario, ps, ones_key(), cfg, opts);
  const SimulationTrace b = vcdi::rollout(scenario, ps, ones_key(), cfg, opts);
  check_traces_equal(a, b);
}

TEST_CASE("conflict ordering distinguishes before, after, and never") {
  EngineConfig cfg = tiny_engine();
  cfg.sim.duration_steps = 10;
  SimOptions opts;
  opts.vut_follows_log = true;

  SUBCASE("parked VUT: a crossing agent counts as before, a parked far one "
          "as never") {
    // Agent 10 drives from x=12 toward the conflict point at (16, 0) and
    // enters its radius at sim step 2; the VUT never gets near it.
    std::vector<std::vector<AgentState>> extra;
    extra.push_back(straight_track(30, 12.0, 0.0, 10.0, 0.0, 0.0));
    extra.push_back(straight_track(30, -12.0, 0.0, 0.0, 0.0, 0.0));
    const Scenario s = crafted_scenario(30, 0.0, extra, {16.0, 0.0});
    ParamStore ps = untrained_params(cfg);
    const std::vector<CostWeights> keys{ones_key(), ones_key()};
    const DivergenceReport rep =
        vcdi::diversity_sweep(s, ps, keys, cfg, opts);
    REQUIRE(rep.conflict.size() == 2);
    REQUIRE(rep.conflict[0].size() == s.agent_tracks.size());
    CHECK(rep.conflict[0][10] == ConflictOrder::kBefore);
    CHECK(rep.conflict[0][11] == ConflictOrder::kNever);
    // Identical keys run identical rollouts: zero divergence everywhere.
    REQUIRE(rep.pairs.size() == 1);
    CHECK(rep.pairs[0].key_a == 0);
    CHECK(rep.pairs[0].key_b == 1);
    CHECK(rep.pairs[0].mean_over_agents == 0.0);
    for (const auto& d : rep.pairs[0].agents) {
      CHECK(d.mean_displacement == 0.0);
      CHECK(d.max_displacement == 0.0);
    }
    REQUIRE(rep.vut_progress.size() == 2);
    CHECK(rep.vut_progress[0] == rep.vut_progress[1]);
  }

  SUBCASE("moving VUT reaches the conflict point first") {
    // The VUT starts at the origin at 10 m/s and crosses x=3 (within radius
    // of (5, 0)) at sim step 3; the oncoming agent from x=11 at -5 m/s only
    // enters at step 8.
    std::vector<std::vector<AgentState>> extra;
    extra.push_back(straight_track(
        30, 11.0, 0.0, -5.0, 0.0, std::acos(-1.0)));
    const Scenario s = crafted_scenario(30, 10.0, extra, {5.0, 0.0});
    ParamStore ps = untrained_params(cfg);
    const std::vector<CostWeights> keys{ones_key(), ones_key()};
    const DivergenceReport rep =
        vcdi::diversity_sweep(s, ps, keys, cfg, opts);
    REQUIRE(rep.conflict.size() == 2);
    CHECK(rep.conflict[0][10] == ConflictOrder::kAfter);
  }
}

TEST_CASE("diversity sweep covers every key pair and formats a report") {
  EngineConfig cfg = tiny_engine();
  cfg.sim.duration_steps = 10;
  const Scenario scenario = intersection_scenario();
  ParamStore ps = untrained_params(cfg);
  CostWeights strict = ones_key();
  strict.w[0] = 4.0;
  CostWeights lax = ones_key();
  lax.w[0] = 0.25;
  const std::vector<CostWeights> keys{ones_key(), strict, lax};
  const DivergenceReport rep =
      vcdi::diversity_sweep(scenario, ps, keys, cfg, SimOptions{});
  REQUIRE(rep.pairs.size() == 3);
  CHECK(rep.pairs[0].key_a == 0);
  CHECK(rep.pairs[0].key_b == 1);
  CHECK(rep.pairs[1].key_a == 0);
  CHECK(rep.pairs[1].key_b == 2);
  CHECK(rep.pairs[2].key_a == 1);
  CHECK(rep.pairs[2].key_b == 2);
  for (const auto& pair : rep.pairs) {
    CHECK(pair.agents.size() == scenario.agent_tracks.size());
  }
  REQUIRE(rep.conflict.size() == 3);  // the intersection declares a conflict
  REQUIRE(rep.vut_progress.size() == 3);
  for (double p : rep.vut_progress) CHECK(p >= 0.0);

  const std::string text = vcdi::format_divergence_report(rep);
  CHECK(text.find("diversity sweep") != std::string::npos);
  CHECK(text.find("vut progress") != std::string::npos);
  CHECK(text.find("pairwise mean displacement") != std::string::npos);
  CHECK(text.find("conflict-point order") != std::string::npos);
  CHECK(text == vcdi::format_divergence_report(rep));

  CHECK_THROWS_AS(
      vcdi::diversity_sweep(scenario, ps, {ones_key()}, cfg, SimOptions{}),
      vcdi::ValidationError);
}

TEST_CASE("trace export round-trips and the manifest is faithful") {
  EngineConfig cfg = tiny_engine();
  cfg.sim.duration_steps = 20;
  const Scenario scenario = intersection_scenario();
  ParamStore ps = untrained_params(cfg);
  SimOptions opts;
  opts.seed = 99;
  opts.checkpoint_id = 123456789;
  const SimulationTrace tr =
      vcdi::rollout(scenario, ps, ones_key(), cfg, opts);

  const std::string dir = temp_dir("vcdi_sim_export");
  std::filesystem::remove_all(dir);
  vcdi::export_trace(tr, scenario, dir);

  const SimulationTrace back = vcdi::import_trace_csv(dir + "/trace.csv");
  REQUIRE(back.steps.size() == tr.steps.size());
  for (std::size_t k = 0; k < tr.steps.size(); ++k) {
    CHECK(std::abs(back.steps[k].t - tr.steps[k].t) <= 5e-4);
    CHECK(std::abs(back.steps[k].vut.x - tr.steps[k].vut.x) <= 1e-6);
    CHECK(std::abs(back.steps[k].vut.y - tr.steps[k].vut.y) <= 1e-6);
    REQUIRE(back.steps[k].agents.size() == tr.steps[k].agents.size());
    for (std::size_t a = 0; a < tr.steps[k].agents.size(); ++a) {
      const AgentState& want = tr.steps[k].agents[a];
      const AgentState& got = back.steps[k].agents[a];
      CHECK(got.valid == want.valid);
      if (!want.valid) continue;
      CHECK(std::abs(got.x - want.x) <= 1e-6);
      CHECK(std::abs(got.y - want.y) <= 1e-6);
      CHECK(std::abs(got.heading - want.heading) <= 1e-6);
      CHECK(std::abs(std::hypot(got.vx, got.vy) -
                     std::hypot(want.vx, want.vy)) <= 1e-6);
    }
  }

  const nlohmann::json manifest =
      nlohmann::json::parse(read_file(dir + "/manifest.json"));
  CHECK(manifest.at("mode") == "closed_loop");
  CHECK(manifest.at("seed") == 99);
  CHECK(manifest.at("checkpoint_id") == 123456789);
  CHECK(manifest.at("duration_steps") == 20);
  CHECK(manifest.at("replan_count") == tr.replans.size());
  for (int f = 0; f < kNumCostFeatures; ++f) {
    const char* name = vcdi::kCostFeatureNames[static_cast<std::size_t>(f)];
    CHECK(manifest.at("key").at(name) == 1.0);
  }

  const std::string svg = read_file(dir + "/trace.svg");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("viewBox") != std::string::npos);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg_well_formed(svg));
}

TEST_CASE("empty traces export a header-only table and a valid plot") {
  const Scenario scenario = intersection_scenario();
  SimulationTrace empty;
  empty.scenario_id = scenario.scenario_id;
  const std::string dir = temp_dir("vcdi_sim_export_empty");
  std::filesystem::remove_all(dir);
  vcdi::export_trace(empty, scenario, dir);
  CHECK(read_file(dir + "/trace.csv") == "t,agent_id,x,y,heading,speed\n");
  const SimulationTrace back = vcdi::import_trace_csv(dir + "/trace.csv");
  CHECK(back.steps.empty());
  CHECK(svg_well_formed(read_file(dir + "/trace.svg")));
  const nlohmann::json manifest =
      nlohmann::json::parse(read_file(dir + "/manifest.json"));
  CHECK(manifest.at("duration_steps") == 0);

  const std::string blocker = temp_dir("vcdi_sim_blocker");
  std::filesystem::remove_all(blocker);
  std::ofstream(blocker) << "x";
  CHECK_THROWS_AS(vcdi::export_trace(empty, scenario, blocker + "/sub"),
                  vcdi::IoError);
}

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "test_support.hpp"
#include "vcdi/errors.hpp"
#include "vcdi/features.hpp"
#include "vcdi/grad_check.hpp"
#include "vcdi/planner.hpp"
#include "vcdi/scenario.hpp"
#include "vcdi/training.hpp"

using vcdi::AgentFutures;
using vcdi::CostWeights;
using vcdi::EngineConfig;
using vcdi::Frame;
using vcdi::FramePlan;
using vcdi::LossBreakdown;
using vcdi::Mat;
using vcdi::Metrics;
using vcdi::ModelOutput;
using vcdi::ParamStore;
using vcdi::TrainResult;
using vcdi::kFutureSteps;
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
  return cfg;
}

Frame raw_intersection_frame(std::uint64_t seed = 3) {
  vcdi::SynthParams p;
  p.duration_steps = 80;
  const vcdi::Scenario s = vcdi::generate_synthetic_scenario(
      vcdi::SynthKind::kIntersection, seed, p);
  const std::vector<Frame> frames = vcdi::slice_frames(s, 10);
  REQUIRE(!frames.empty());
  return frames[0];
}

const Frame& local_intersection_frame() {
  static const Frame f = vcdi::to_local_frame(raw_intersection_frame());
  return f;
}

std::vector<Frame> car_following_frames(std::size_t count,
                                        std::uint64_t seed = 11) {
  vcdi::SynthParams p;
  p.duration_steps = 70 + 10 * static_cast<int>(count);
  const vcdi::Scenario s = vcdi::generate_synthetic_scenario(
      vcdi::SynthKind::kCarFollowing, seed, p);
  std::vector<Frame> frames = vcdi::slice_frames(s, 10);
  REQUIRE(frames.size() >= count);
  frames.resize(count);
  return frames;
}

// A plan for the composite's auxiliary inputs, planned under an all-ones key.
FramePlan unit_key_plan(const Frame& frame, const EngineConfig& cfg) {
  FramePlan aux;
  aux.key.w.fill(1.0);
  aux.planned =
      vcdi::plan_vut_trajectory(frame, aux.key, cfg.planner, cfg.model);
  return aux;
}

// Fabricated output with every mode at a constant offset from an all-zero
// truth, so each loss term has a closed-form value.
struct FakeSetup {
  ModelOutput out;
  AgentFutures truth{};
};

FakeSetup fake_output(int k_modes, const std::vector<int>& valid_agents) {
  FakeSetup s;
  s.out.k_modes = k_modes;
  for (int i : valid_agents) {
    s.out.agent_mask[static_cast<std::size_t>(i)] = true;
  }
  for (int k = 0; k < k_modes; ++k) {
    s.out.modes.emplace_back(kNumAgents, 2 * kFutureSteps);
  }
  s.out.scores = Mat(kNumAgents, static_cast<std::size_t>(k_modes));
  const double uniform = 1.0 / static_cast<double>(k_modes);
  for (std::size_t i = 0; i < kNumAgents; ++i) {
    for (int k = 0; k < k_modes; ++k) {
      s.out.scores(i, static_cast<std::size_t>(k)) = uniform;
    }
  }
  return s;
}

void offset_mode(ModelOutput& out, int k, std::size_t agent, double dx,
                 double dy) {
  Mat& m = out.modes[static_cast<std::size_t>(k)];
  for (std::size_t s = 0; s < kFutureSteps; ++s) {
    m(agent, 2 * s) = dx;
    m(agent, 2 * s + 1) = dy;
  }
}

vcdi::VutFuturePlan constant_offset_plan(const vcdi::VutFuturePlan& base,
                                         double dx, double dy) {
  vcdi::VutFuturePlan p = base;
  for (auto& st : p.states) {
    st.x += dx;
    st.y += dy;
  }
  return p;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("closest mode minimizes mean displacement and breaks ties low") {
  FakeSetup s = fake_output(3, {0, 2});
  offset_mode(s.out, 0, 0, 2.0, 0.0);
  offset_mode(s.out, 1, 0, 0.5, 0.0);
  offset_mode(s.out, 2, 0, 1.0, 0.0);
  // Agent 2: all three modes identical (zero offset) -> tie -> mode 0.
  const auto closest = vcdi::closest_modes(s.out, s.truth);
  CHECK(closest[0] == 1);
  CHECK(closest[1] == -1);  // masked
  CHECK(closest[2] == 0);
  for (std::size_t i = 3; i < kNumAgents; ++i) CHECK(closest[i] == -1);
}

TEST_CASE("prediction loss matches the smooth-L1 oracle at constant offsets") {
  // Offset exactly 1 m in x: quadratic branch boundary, 0.5 per step.
  FakeSetup one = fake_output(2, {0});
  offset_mode(one.out, 0, 0, 1.0, 0.0);
  offset_mode(one.out, 1, 0, 9.0, 0.0);
  CHECK(vcdi::prediction_loss(one.out, one.truth) ==
        doctest::Approx(0.5).epsilon(1e-15));

  // Offset 2 m: linear branch, |d| - 0.5 = 1.5 per step.
  FakeSetup two = fake_output(2, {0});
  offset_mode(two.out, 0, 0, 2.0, 0.0);
  offset_mode(two.out, 1, 0, 9.0, 0.0);
  CHECK(vcdi::prediction_loss(two.out, two.truth) ==
        doctest::Approx(1.5).epsilon(1e-15));

  // Offset 0.6 m in y: 0.5 * 0.36.
  FakeSetup sub = fake_output(2, {0});
  offset_mode(sub.out, 0, 0, 0.0, 0.6);
  offset_mode(sub.out, 1, 0, 9.0, 0.0);
  CHECK(vcdi::prediction_loss(sub.out, sub.truth) ==
        doctest::Approx(0.18).epsilon(1e-15));

  SUBCASE("only the closest mode contributes") {
    const double base = vcdi::prediction_loss(two.out, two.truth);
    offset_mode(two.out, 1, 0, 123.0, -55.0);
    CHECK(vcdi::prediction_loss(two.out, two.truth) == base);
  }

  SUBCASE("valid agents average") {
    FakeSetup mix = fake_output(2, {0, 4});
    offset_mode(mix.out, 0, 0, 1.0, 0.0);  // 0.5 per step
    offset_mode(mix.out, 0, 4, 2.0, 0.0);  // 1.5 per step
    offset_mode(mix.out, 1, 0, 9.0, 0.0);
    offset_mode(mix.out, 1, 4, 9.0, 0.0);
    CHECK(vcdi::prediction_loss(mix.out, mix.truth) ==
          doctest::Approx(1.0).epsilon(1e-15));
  }

  SUBCASE("no valid agents gives zero") {
    FakeSetup empty = fake_output(2, {});
    CHECK(vcdi::prediction_loss(empty.out, empty.truth) == 0.0);
  }
}

TEST_CASE("score loss is the mean log-loss of the closest mode") {
  // Uniform scores over three modes: -log(1/3) = log 3.
  FakeSetup s = fake_output(3, {0});
  offset_mode(s.out, 1, 0, 0.5, 0.0);
  offset_mode(s.out, 2, 0, 0.5, 0.0);
  CHECK(vcdi::score_loss(s.out, s.truth) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));

  SUBCASE("hand-computed two-agent average") {
    FakeSetup h = fake_output(2, {0, 3});
    // Agent 0: mode 1 closest, probability 0.7.
    offset_mode(h.out, 0, 0, 5.0, 0.0);
    h.out.scores(0, 0) = 0.3;
    h.out.scores(0, 1) = 0.7;
    // Agent 3: tie -> mode 0, probability 0.2.
    h.out.scores(3, 0) = 0.2;
    h.out.scores(3, 1) = 0.8;
    const double want = 0.5 * -std::log(0.7) + 0.5 * -std::log(0.2);
    CHECK(vcdi::score_loss(h.out, h.truth) ==
          doctest::Approx(want).epsilon(1e-12));
  }

  SUBCASE("no valid agents gives zero") {
    FakeSetup empty = fake_output(3, {});
    CHECK(vcdi::score_loss(empty.out, empty.truth) == 0.0);
  }
}

TEST_CASE("imitation loss is the mean squared positional gap") {
  const Frame& frame = local_intersection_frame();
  const vcdi::VutFuturePlan truth = frame.vut_future_truth;
  CHECK(vcdi::imitation_loss(truth, truth) == 0.0);
  // Constant (0.3, 0.4) offset: 0.09 + 0.16 = 0.25 m^2 every step.
  const vcdi::VutFuturePlan off = constant_offset_plan(truth, 0.3, 0.4);
  CHECK(vcdi::imitation_loss(off, truth) ==
        doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("planning term is the trajectory cost under the key") {
  const Frame& frame = local_intersection_frame();
  const EngineConfig cfg = tiny_engine();
  const vcdi::SceneContext scene =
      vcdi::assemble_inputs(frame, cfg.model).scene;
  CostWeights key;
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    key.w[i] = 0.1 + 0.2 * static_cast<double>(i);
  }
  const vcdi::VutFuturePlan& plan = frame.vut_future_truth;
  CHECK(vcdi::planning_cost_term(plan, key, scene) ==
        vcdi::evaluate_cost(plan, key, scene));
}

TEST_CASE("composite blends the four terms linearly in the lambdas") {
  const Frame& frame = local_intersection_frame();
  EngineConfig cfg = tiny_engine();
  ParamStore ps;
  vcdi::init_model_params(ps, cfg.model, 21);
  const FramePlan aux = unit_key_plan(frame, cfg);

  const LossBreakdown base = vcdi::composite_loss(ps, frame, aux, cfg);

  SUBCASE("term values match the plain oracles") {
    const vcdi::InputTensors in = vcdi::assemble_inputs(frame, cfg.model);
    const ModelOutput out = vcdi::run_model(ps, in, cfg.model, false);
    CHECK(base.prediction ==
          doctest::Approx(vcdi::prediction_loss(out, frame.agent_futures_truth))
              .epsilon(1e-12));
    CHECK(base.score ==
          doctest::Approx(vcdi::score_loss(out, frame.agent_futures_truth))
              .epsilon(1e-12));
    CHECK(base.imitation ==
          doctest::Approx(
              vcdi::imitation_loss(aux.planned, frame.vut_future_truth))
              .epsilon(1e-12));
    const vcdi::SceneContext& scene = in.scene;
    CHECK(base.planning ==
          doctest::Approx(vcdi::planning_cost_term(aux.planned, aux.key, scene))
              .epsilon(1e-12));
    // Every term of a healthy frame is nonzero under an untrained model.
    CHECK(base.prediction > 0.0);
    CHECK(base.score > 0.0);
    CHECK(base.imitation > 0.0);
    CHECK(base.planning > 0.0);
  }

  SUBCASE("doubling every lambda doubles the total") {
    EngineConfig twice = cfg;
    twice.training.lambda_prediction *= 2.0;
    twice.training.lambda_score *= 2.0;
    twice.training.lambda_imitation *= 2.0;
    twice.training.lambda_planning *= 2.0;
    const LossBreakdown b = vcdi::composite_loss(ps, frame, aux, twice);
    CHECK(b.total == doctest::Approx(2.0 * base.total).epsilon(1e-12));
  }

  SUBCASE("unit lambdas sum the four terms") {
    EngineConfig unit = cfg;
    unit.training.lambda_prediction = 1.0;
    unit.training.lambda_score = 1.0;
    unit.training.lambda_imitation = 1.0;
    unit.training.lambda_planning = 1.0;
    const LossBreakdown b = vcdi::composite_loss(ps, frame, aux, unit);
    CHECK(b.total == doctest::Approx(b.prediction + b.score + b.imitation +
                                     b.planning)
                         .epsilon(1e-12));
  }

  SUBCASE("prediction-only lambdas reduce to the prediction term") {
    EngineConfig solo = cfg;
    solo.training.lambda_prediction = 1.0;
    solo.training.lambda_score = 0.0;
    solo.training.lambda_imitation = 0.0;
    solo.training.lambda_planning = 0.0;
    const LossBreakdown b = vcdi::composite_loss(ps, frame, aux, solo);
    CHECK(b.total == b.prediction);
  }

  SUBCASE("all-zero lambdas give a zero total") {
    EngineConfig zero = cfg;
    zero.training.lambda_prediction = 0.0;
    zero.training.lambda_score = 0.0;
    zero.training.lambda_imitation = 0.0;
    zero.training.lambda_planning = 0.0;
    const LossBreakdown b = vcdi::composite_loss(ps, frame, aux, zero);
    CHECK(b.total == 0.0);
    CHECK(b.prediction == base.prediction);  // terms still reported
  }

  SUBCASE("global frames are rejected") {
    const Frame raw = raw_intersection_frame();
    CHECK_THROWS_AS(vcdi::composite_loss(ps, raw, aux, cfg),
                    vcdi::ValidationError);
  }
}

TEST_CASE("disconnecting the future input makes prediction blind to it") {
  const Frame& frame = local_intersection_frame();
  EngineConfig cfg = tiny_engine();
  ParamStore ps;
  vcdi::init_model_params(ps, cfg.model, 29);
  const FramePlan aux = unit_key_plan(frame, cfg);

  Frame shifted = frame;
  for (auto& st : shifted.vut_future_truth.states) {
    st.x += 4.0;
    st.y -= 2.0;
  }

  EngineConfig blind = cfg;
  blind.training.ablation = vcdi::Ablation::kNoAugment;
  const LossBreakdown b1 = vcdi::composite_loss(ps, frame, aux, blind);
  const LossBreakdown b2 = vcdi::composite_loss(ps, shifted, aux, blind);
  CHECK(b1.prediction == b2.prediction);
  CHECK(b1.score == b2.score);

  // The full model conditions on the future, so the same shift moves it.
  const LossBreakdown f1 = vcdi::composite_loss(ps, frame, aux, cfg);
  const LossBreakdown f2 = vcdi::composite_loss(ps, shifted, aux, cfg);
  CHECK(f1.prediction != f2.prediction);
}

TEST_CASE("composite gradient matches central differences on a tiny model") {
  const Frame& frame = local_intersection_frame();
  EngineConfig cfg = tiny_engine();
  ParamStore ps;
  vcdi::init_model_params(ps, cfg.model, 37);
  const FramePlan aux = unit_key_plan(frame, cfg);

  const auto fn = [&](vcdi::Tape& t, ParamStore& store) {
    return vcdi::composite_loss_graph(t, store, frame, aux, cfg).total;
  };
  const vcdi::GradReport report = vcdi::grad_check(ps, fn);
  INFO(report.summary());
  CHECK(report.pass);
  CHECK(report.coords_checked >= 200);
}

TEST_CASE("single-frame overfit drives the prediction term down smoothly") {
  std::vector<Frame> dataset = car_following_frames(1);
  EngineConfig cfg = tiny_engine();
  cfg.training.lambda_prediction = 1.0;
  cfg.training.lambda_score = 0.0;
  cfg.training.lambda_imitation = 0.0;
  cfg.training.lambda_planning = 0.0;
  cfg.training.steps = 2000;
  cfg.training.batch_size = 1;
  cfg.training.fit_interval = 100000;  // out of range of this short run
  cfg.seed = 5;

  const TrainResult r = vcdi::train(dataset, cfg);
  REQUIRE(r.trace.size() == 2000);
  const double initial = r.trace.front().loss.prediction;
  const double final_loss = r.trace.back().loss.prediction;
  CHECK(initial > 0.0);
  CHECK(final_loss < 1e-2 * initial);

  // Early steps may wobble, but never by more than 10%.
  for (std::size_t i = 1; i < 100; ++i) {
    CHECK(r.trace[i].loss.total <=
          1.10 * r.trace[i - 1].loss.total + 1e-12);
  }
}

TEST_CASE("training is bitwise deterministic per seed") {
  std::vector<Frame> dataset = car_following_frames(2);
  EngineConfig cfg = tiny_engine();
  cfg.training.steps = 24;
  cfg.training.batch_size = 2;
  cfg.training.fit_interval = 12;
  cfg.seed = 9;

  const TrainResult a = vcdi::train(dataset, cfg);
  const TrainResult b = vcdi::train(dataset, cfg);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    CHECK(a.trace[i].loss.total == b.trace[i].loss.total);
    CHECK(a.trace[i].loss.prediction == b.trace[i].loss.prediction);
  }
  for (const std::string& name : a.params.names()) {
    const Mat& ma = a.params.value(name);
    const Mat& mb = b.params.value(name);
    REQUIRE(ma.size() == mb.size());
    bool equal = true;
    for (std::size_t i = 0; i < ma.size(); ++i) {
      equal = equal && ma.d[i] == mb.d[i];
    }
    CHECK(equal);
  }
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    CHECK(a.cost_dist.mu[i] == b.cost_dist.mu[i]);
    CHECK(a.cost_dist.sigma2[i] == b.cost_dist.sigma2[i]);
  }

  SUBCASE("a different seed lands elsewhere") {
    EngineConfig other = cfg;
    other.seed = 10;
    const TrainResult c = vcdi::train(dataset, other);
    bool any_diff = false;
    for (const std::string& name : a.params.names()) {
      const Mat& ma = a.params.value(name);
      const Mat& mc = c.params.value(name);
      for (std::size_t i = 0; i < ma.size(); ++i) {
        any_diff = any_diff || ma.d[i] != mc.d[i];
      }
    }
    CHECK(any_diff);
  }
}

TEST_CASE("weight refits move and sharpen the cost distribution") {
  std::vector<Frame> dataset = car_following_frames(2);
  EngineConfig cfg = tiny_engine();
  cfg.training.steps = 13;
  cfg.training.batch_size = 1;
  cfg.training.fit_interval = 6;  // refits at steps 6 and 12
  cfg.seed = 9;

  const TrainResult r = vcdi::train(dataset, cfg);
  bool mu_moved = false;
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    mu_moved = mu_moved || r.cost_dist.mu[i] != 1.0;
    CHECK(r.cost_dist.sigma2[i] < 1.0);  // two observations sharpen the prior
    CHECK(r.cost_dist.sigma2[i] > 0.0);
  }
  CHECK(mu_moved);

  SUBCASE("the single-valued ablation pins the variance") {
    EngineConfig sv = cfg;
    sv.training.ablation = vcdi::Ablation::kSingleValued;
    const TrainResult p = vcdi::train(dataset, sv);
    for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
      CHECK(p.cost_dist.sigma2[i] == 1e-12);
    }
  }
}

TEST_CASE("train rejects empty datasets and aborts on non-finite inputs") {
  EngineConfig cfg = tiny_engine();
  CHECK_THROWS_AS(vcdi::train(std::vector<Frame>{}, cfg),
                  vcdi::ValidationError);

  std::vector<Frame> dataset = car_following_frames(1);
  std::size_t poisoned = kNumAgents;
  for (std::size_t i = 0; i < kNumAgents; ++i) {
    if (dataset[0].agent_mask[i]) {
      poisoned = i;
      break;
    }
  }
  REQUIRE(poisoned < kNumAgents);
  dataset[0].agent_histories[poisoned].states[5].x =
      std::numeric_limits<double>::quiet_NaN();
  cfg.training.steps = 3;
  cfg.training.batch_size = 1;
  try {
    vcdi::train(dataset, cfg);
    FAIL("expected a NumericError");
  } catch (const vcdi::NumericError& e) {
    CHECK(std::string(e.what()).find("training aborted at step 0") !=
          std::string::npos);
  }
}

TEST_CASE("checkpoint bundle round-trips the trained state") {
  std::vector<Frame> dataset = car_following_frames(1);
  EngineConfig cfg = tiny_engine();
  cfg.training.steps = 6;
  cfg.training.batch_size = 1;
  cfg.seed = 14;
  const TrainResult r = vcdi::train(dataset, cfg);

  const vcdi::Checkpoint ck = vcdi::make_train_checkpoint(r, cfg);
  CHECK(ck.seed == cfg.seed);
  CHECK(ck.config_hash == vcdi::config_hash(cfg));
  const std::string path = temp_path("vcdi_train_bundle.bin");
  vcdi::save_checkpoint(path, ck);
  const vcdi::Checkpoint back = vcdi::load_checkpoint(path);
  std::remove(path.c_str());

  ParamStore ps;
  vcdi::init_model_params(ps, cfg.model, 999);  // overwritten by the load
  vcdi::DistributionalCostWeights dist;
  vcdi::load_train_state(back, ps, dist);

  // Arrays are serialized as float32, so the round trip is exact only to
  // single precision.
  for (const std::string& name : r.params.names()) {
    const Mat& want = r.params.value(name);
    const Mat& got = ps.value(name);
    REQUIRE(want.size() == got.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < want.size(); ++i) {
      worst = std::max(worst, vcdi_test::rel_err(want.d[i], got.d[i]));
    }
    CHECK(worst <= 1.2e-7);
  }
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    CHECK(vcdi_test::rel_err(dist.mu[i], r.cost_dist.mu[i]) <= 1.2e-7);
    CHECK(vcdi_test::rel_err(dist.sigma2[i], r.cost_dist.sigma2[i]) <= 1.2e-7);
  }

  SUBCASE("a bundle without the cost arrays is rejected") {
    vcdi::Checkpoint broken = back;
    broken.arrays.erase("cost/mu");
    ParamStore ps2;
    vcdi::init_model_params(ps2, cfg.model, 1);
    vcdi::DistributionalCostWeights d2;
    CHECK_THROWS_AS(vcdi::load_train_state(broken, ps2, d2), vcdi::ParseError);
  }
}

TEST_CASE("train log renders one row per step") {
  std::vector<vcdi::TrainLogRow> trace(2);
  trace[0].step = 0;
  trace[0].loss = {1.5, 0.25, 0.125, 0.0625, 2.0};
  trace[0].wall_seconds = 0.125;
  trace[1].step = 1;
  trace[1].loss = {1.0, 0.5, 0.25, 0.125, 1.5};
  trace[1].wall_seconds = 0.25;
  const std::string log = vcdi::format_train_log(trace);
  CHECK(log ==
        "step,total,prediction,score,imitation,planning,wall_seconds\n"
        "0,2,1.5,0.25,0.125,0.0625,0.125\n"
        "1,1.5,1,0.5,0.25,0.125,0.250\n");
}

TEST_CASE("displacement metrics match a brute-force oracle") {
  const Frame& frame = local_intersection_frame();
  EngineConfig cfg = tiny_engine();
  ParamStore ps;
  vcdi::init_model_params(ps, cfg.model, 55);
  std::vector<Frame> dataset = {frame, frame};

  const Metrics m = vcdi::evaluate_ade_fde(ps, dataset, cfg);
  CHECK(m.n_frames == 2);

  // Oracle: per-agent step means combined over agents, computed separately.
  double ade = 0.0, f1 = 0.0, f3 = 0.0, f5 = 0.0;
  std::size_t n_agents = 0;
  for (const Frame& f : dataset) {
    const vcdi::InputTensors in = vcdi::assemble_inputs(f, cfg.model);
    const ModelOutput out = vcdi::run_model(ps, in, cfg.model, false);
    const Mat best = vcdi::select_most_likely(out);
    for (std::size_t i = 0; i < kNumAgents; ++i) {
      if (!f.agent_mask[i]) continue;
      double agent_mean = 0.0;
      for (std::size_t s = 0; s < kFutureSteps; ++s) {
        const double dx = best(i, 2 * s) - f.agent_futures_truth[i][s].x;
        const double dy = best(i, 2 * s + 1) - f.agent_futures_truth[i][s].y;
        const double d = std::sqrt(dx * dx + dy * dy);
        agent_mean += d / static_cast<double>(kFutureSteps);
        if (s == 9) f1 += d;
        if (s == 29) f3 += d;
        if (s == 49) f5 += d;
      }
      ade += agent_mean;
      ++n_agents;
    }
  }
  REQUIRE(n_agents > 0);
  CHECK(m.n_agents == n_agents);
  CHECK(m.ade ==
        doctest::Approx(ade / static_cast<double>(n_agents)).epsilon(1e-12));
  CHECK(m.fde_1s ==
        doctest::Approx(f1 / static_cast<double>(n_agents)).epsilon(1e-12));
  CHECK(m.fde_3s ==
        doctest::Approx(f3 / static_cast<double>(n_agents)).epsilon(1e-12));
  CHECK(m.fde_5s ==
        doctest::Approx(f5 / static_cast<double>(n_agents)).epsilon(1e-12));

  SUBCASE("an empty dataset reports zeros") {
    const Metrics none = vcdi::evaluate_ade_fde(ps, {}, cfg);
    CHECK(none.n_frames == 0);
    CHECK(none.n_agents == 0);
    CHECK(none.ade == 0.0);
    CHECK(none.fde_5s == 0.0);
  }
}

TEST_CASE("a constant 1 m error yields unit ADE and FDE") {
  Frame frame = local_intersection_frame();
  EngineConfig cfg = tiny_engine();
  ParamStore ps;
  vcdi::init_model_params(ps, cfg.model, 71);

  // Keep exactly one agent, then write its truth 1 m away from whatever the
  // model predicts; re-running the deterministic model reproduces the
  // prediction bit for bit.
  std::size_t keep = kNumAgents;
  for (std::size_t i = 0; i < kNumAgents; ++i) {
    if (frame.agent_mask[i] && keep == kNumAgents) {
      keep = i;
    } else {
      frame.agent_mask[i] = false;
    }
  }
  REQUIRE(keep < kNumAgents);
  const vcdi::InputTensors in = vcdi::assemble_inputs(frame, cfg.model);
  const Mat best =
      vcdi::select_most_likely(vcdi::run_model(ps, in, cfg.model, false));
  for (std::size_t s = 0; s < kFutureSteps; ++s) {
    frame.agent_futures_truth[keep][s].x = best(keep, 2 * s) + 1.0;
    frame.agent_futures_truth[keep][s].y = best(keep, 2 * s + 1);
  }

  const Metrics m = vcdi::evaluate_ade_fde(ps, {frame}, cfg);
  CHECK(m.n_agents == 1);
  CHECK(m.ade == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.fde_1s == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.fde_3s == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.fde_5s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("metrics ignore agent order and fully-masked slots") {
  const Frame& base = local_intersection_frame();
  EngineConfig cfg = tiny_engine();
  ParamStore ps;
  vcdi::init_model_params(ps, cfg.model, 55);
  const Metrics m0 = vcdi::evaluate_ade_fde(ps, {base}, cfg);

  SUBCASE("swapping two valid agent slots") {
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < kNumAgents; ++i) {
      if (base.agent_mask[i]) valid.push_back(i);
    }
    REQUIRE(valid.size() >= 2);
    Frame swapped = base;
    const std::size_t a = valid[0];
    const std::size_t b = valid[1];
    std::swap(swapped.agent_histories[a], swapped.agent_histories[b]);
    std::swap(swapped.agent_futures_truth[a], swapped.agent_futures_truth[b]);
    const Metrics m1 = vcdi::evaluate_ade_fde(ps, {swapped}, cfg);
    CHECK(m1.n_agents == m0.n_agents);
    CHECK(m1.ade == doctest::Approx(m0.ade).epsilon(1e-9));
    CHECK(m1.fde_1s == doctest::Approx(m0.fde_1s).epsilon(1e-9));
    CHECK(m1.fde_3s == doctest::Approx(m0.fde_3s).epsilon(1e-9));
    CHECK(m1.fde_5s == doctest::Approx(m0.fde_5s).epsilon(1e-9));
  }

  SUBCASE("garbage in a masked slot changes nothing") {
    std::size_t masked = kNumAgents;
    for (std::size_t i = 0; i < kNumAgents; ++i) {
      if (!base.agent_mask[i]) {
        masked = i;
        break;
      }
    }
    REQUIRE(masked < kNumAgents);
    Frame noisy = base;
    for (auto& st : noisy.agent_histories[masked].states) {
      st.x = 1e3;
      st.y = -4e2;
      st.vx = 77.0;
      st.valid = false;
    }
    for (auto& v : noisy.agent_futures_truth[masked]) {
      v.x = 9e3;
      v.y = 9e3;
    }
    const Metrics m1 = vcdi::evaluate_ade_fde(ps, {noisy}, cfg);
    CHECK(m1.ade == m0.ade);
    CHECK(m1.fde_1s == m0.fde_1s);
    CHECK(m1.fde_3s == m0.fde_3s);
    CHECK(m1.fde_5s == m0.fde_5s);
    CHECK(m1.n_agents == m0.n_agents);
  }
}

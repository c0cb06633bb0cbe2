#include "vcdi/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vcdi/errors.hpp"
#include "vcdi/features.hpp"
#include "vcdi/planner.hpp"

namespace vcdi {

namespace {

// Mirrors the tape's smooth-L1 kernel exactly.
double huber_unit(double d) {
  const double ax = std::abs(d);
  return ax <= 1.0 ? 0.5 * d * d : ax - 0.5;
}

CostWeights mean_key(const DistributionalCostWeights& dist) {
  CostWeights key;
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    key.w[i] = std::max(0.0, dist.mu[i]);
  }
  return key;
}

// Each refit folds the fitted weights into the posterior as one observation
// with this per-coordinate noise variance.
constexpr double kFitObsNoiseVar = 1.0;
// Linear learning-rate ramp; damps the momentum transient while the clipped
// gradient direction is still settling.
constexpr int kWarmupSteps = 100;
// Velocity kept when it turns uphill against the fresh gradient (soft
// momentum restart); 1 disables, 0 is a hard reset.
constexpr double kUphillCarry = 0.25;
// The single-valued ablation pins the posterior variance here.
constexpr double kPinnedVariance = 1e-12;

constexpr std::size_t kFdeSteps[3] = {9, 29, 49};

}  // namespace

std::array<int, kNumAgents> closest_modes(const ModelOutput& out,
                                          const AgentFutures& truth) {
  std::array<int, kNumAgents> best{};
  best.fill(-1);
  for (std::size_t i = 0; i < kNumAgents; ++i) {
    if (!out.agent_mask[i]) continue;
    double best_sum = std::numeric_limits<double>::infinity();
    int best_k = -1;
    for (int k = 0; k < out.k_modes; ++k) {
      const Mat& mk = out.modes[static_cast<std::size_t>(k)];
      double sum = 0.0;
      for (std::size_t s = 0; s < kFutureSteps; ++s) {
        const double dx = mk(i, 2 * s) - truth[i][s].x;
        const double dy = mk(i, 2 * s + 1) - truth[i][s].y;
        sum += std::sqrt(dx * dx + dy * dy);
      }
      if (sum < best_sum) {
        best_sum = sum;
        best_k = k;
      }
    }
    best[i] = best_k;
  }
  return best;
}

double prediction_loss(const ModelOutput& out, const AgentFutures& truth) {
  const auto closest = closest_modes(out, truth);
  double acc = 0.0;
  std::size_t n_valid = 0;
  for (std::size_t i = 0; i < kNumAgents; ++i) {
    if (closest[i] < 0) continue;
    ++n_valid;
    const Mat& mk = out.modes[static_cast<std::size_t>(closest[i])];
    double sum = 0.0;
    for (std::size_t s = 0; s < kFutureSteps; ++s) {
      sum += huber_unit(mk(i, 2 * s) - truth[i][s].x);
      sum += huber_unit(mk(i, 2 * s + 1) - truth[i][s].y);
    }
    acc += sum;
  }
  if (n_valid == 0) return 0.0;
  return acc * (1.0 / (static_cast<double>(n_valid) *
                       static_cast<double>(kFutureSteps)));
}

double score_loss(const ModelOutput& out, const AgentFutures& truth) {
  const auto closest = closest_modes(out, truth);
  std::size_t n_valid = 0;
  for (int k : closest) {
    if (k >= 0) ++n_valid;
  }
  if (n_valid == 0) return 0.0;
  const double w = 1.0 / static_cast<double>(n_valid);
  double acc = 0.0;
  for (std::size_t i = 0; i < kNumAgents; ++i) {
    if (closest[i] < 0) continue;
    const double p = out.scores(i, static_cast<std::size_t>(closest[i]));
    acc += w * -std::log(p);
  }
  return acc;
}

double imitation_loss(const VutFuturePlan& planned,
                      const VutFuturePlan& truth) {
  double acc = 0.0;
  for (std::size_t s = 0; s < kFutureSteps; ++s) {
    const double dx = planned.states[s].x - truth.states[s].x;
    const double dy = planned.states[s].y - truth.states[s].y;
    acc += dx * dx;
    acc += dy * dy;
  }
  return acc * (1.0 / static_cast<double>(kFutureSteps));
}

double planning_cost_term(const VutFuturePlan& planned, const CostWeights& key,
                          const SceneContext& scene) {
  return evaluate_cost(planned, key, scene);
}

CompositeGraph composite_loss_graph(Tape& t, ParamStore& ps, const Frame& frame,
                                    const FramePlan& aux,
                                    const EngineConfig& cfg) {
  if (!frame.is_local) {
    throw ValidationError("composite_loss: frame must be in the VUT local frame");
  }
  const InputTensors in = assemble_inputs(frame, cfg.model);
  const bool no_augment = cfg.training.ablation == Ablation::kNoAugment;
  const ForwardOut fwd = model_forward(t, ps, in, cfg.model, no_augment);

  // Mode choice is data-dependent: made on plain values, then frozen.
  ModelOutput snap;
  snap.k_modes = cfg.model.k_modes;
  snap.agent_mask = frame.agent_mask;
  snap.modes.reserve(fwd.dec.modes.size());
  for (const TapeValue& m : fwd.dec.modes) snap.modes.push_back(t.value(m));
  snap.scores = t.value(fwd.dec.scores);
  const auto closest = closest_modes(snap, frame.agent_futures_truth);
  std::size_t n_valid = 0;
  for (int k : closest) {
    if (k >= 0) ++n_valid;
  }

  auto zero_scalar = [&t]() { return t.input(Mat(1, 1), "zero"); };

  TapeValue pred;
  if (n_valid == 0) {
    pred = zero_scalar();
  } else {
    TapeValue acc;
    bool first = true;
    for (std::size_t i = 0; i < kNumAgents; ++i) {
      if (closest[i] < 0) continue;
      Mat tr(1, 2 * kFutureSteps);
      for (std::size_t s = 0; s < kFutureSteps; ++s) {
        tr(0, 2 * s) = frame.agent_futures_truth[i][s].x;
        tr(0, 2 * s + 1) = frame.agent_futures_truth[i][s].y;
      }
      const TapeValue row = t.slice_rows(
          fwd.dec.modes[static_cast<std::size_t>(closest[i])], i, i + 1);
      const TapeValue diff = t.sub(row, t.input(std::move(tr), "pred_truth"));
      const TapeValue sum = t.sum_all(t.huber_op(diff));
      acc = first ? sum : t.add(acc, sum);
      first = false;
    }
    pred = t.scale(acc, 1.0 / (static_cast<double>(n_valid) *
                               static_cast<double>(kFutureSteps)));
  }

  TapeValue score;
  if (n_valid == 0) {
    score = zero_scalar();
  } else {
    std::vector<int> targets(kNumAgents, -1);
    std::vector<double> weights(kNumAgents, 0.0);
    for (std::size_t i = 0; i < kNumAgents; ++i) {
      if (closest[i] < 0) continue;
      targets[i] = closest[i];
      weights[i] = 1.0 / static_cast<double>(n_valid);
    }
    score = t.cross_entropy_rows(fwd.dec.score_logits, std::move(targets),
                                 std::move(weights));
  }

  // Both plan-derived terms are data with respect to the network weights: the
  // planner ran outside this graph, so they steer the cost-weight refits and
  // the logs, not the network gradient.
  const Mat planned_xy = plan_positions(aux.planned);
  TapeValue imitation;
  {
    const TapeValue p = t.input(planned_xy, "planned");
    const TapeValue q =
        t.input(plan_positions(frame.vut_future_truth), "imit_truth");
    imitation = t.scale(t.sum_all(t.square_op(t.sub(p, q))),
                        1.0 / static_cast<double>(kFutureSteps));
  }
  const TapeValue planning = evaluate_cost_tape(
      t, t.input(planned_xy, "plan_xy"), aux.key, in.scene);

  // Zero-lambda terms stay out of the blend so backward never visits them.
  const TrainingBlock& tb = cfg.training;
  TapeValue total = zero_scalar();
  if (tb.lambda_prediction != 0.0) {
    total = t.add(total, t.scale(pred, tb.lambda_prediction));
  }
  if (tb.lambda_score != 0.0) {
    total = t.add(total, t.scale(score, tb.lambda_score));
  }
  if (tb.lambda_imitation != 0.0) {
    total = t.add(total, t.scale(imitation, tb.lambda_imitation));
  }
  if (tb.lambda_planning != 0.0) {
    total = t.add(total, t.scale(planning, tb.lambda_planning));
  }

  CompositeGraph g;
  g.total = total;
  g.values.prediction = t.value(pred)(0, 0);
  g.values.score = t.value(score)(0, 0);
  g.values.imitation = t.value(imitation)(0, 0);
  g.values.planning = t.value(planning)(0, 0);
  g.values.total = t.value(total)(0, 0);
  return g;
}

LossBreakdown composite_loss(ParamStore& ps, const Frame& frame,
                             const FramePlan& aux, const EngineConfig& cfg) {
  Tape t;
  return composite_loss_graph(t, ps, frame, aux, cfg).values;
}

namespace {

void check_finite_terms(const LossBreakdown& v) {
  const std::pair<const char*, double> terms[] = {
      {"prediction", v.prediction}, {"score", v.score},
      {"imitation", v.imitation},   {"planning", v.planning},
      {"composite total", v.total}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw NumericError(std::string(name) + " term is not finite");
    }
  }
}

}  // namespace

TrainResult train(const std::vector<Frame>& dataset, const EngineConfig& cfg) {
  validate_config(cfg);
  if (dataset.empty()) throw ValidationError("train: dataset is empty");

  std::vector<Frame> frames;
  frames.reserve(dataset.size());
  for (const Frame& f : dataset) {
    frames.push_back(f.is_local ? f : to_local_frame(f));
  }
  std::vector<SceneContext> scenes;
  scenes.reserve(frames.size());
  for (const Frame& f : frames) {
    scenes.push_back(assemble_inputs(f, cfg.model).scene);
  }

  const TrainingBlock& tb = cfg.training;
  const bool single_valued = tb.ablation == Ablation::kSingleValued;

  TrainResult out;
  init_model_params(out.params, cfg.model, cfg.seed);
  ParamStore& ps = out.params;

  DistributionalCostWeights dist;
  dist.mu.fill(1.0);
  dist.sigma2.fill(single_valued ? kPinnedVariance : 1.0);

  std::map<std::string, Mat> velocity;
  for (const std::string& name : ps.names()) {
    const Mat& v = ps.value(name);
    velocity.emplace(name, Mat(v.rows, v.cols));
  }

  std::vector<FramePlan> plans(frames.size());
  auto replan_all = [&]() {
    const CostWeights key = mean_key(dist);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      plans[i].planned =
          plan_vut_trajectory(frames[i], key, cfg.planner, cfg.model);
      plans[i].key = key;
    }
  };
  replan_all();

  auto refit = [&]() {
    std::vector<FitDemo> demos;
    demos.reserve(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
      FitDemo d;
      d.truth = frames[i].vut_future_truth;
      d.candidates = generate_candidates(frames[i], cfg.planner).candidates;
      d.candidates.push_back(d.truth);
      d.scene = scenes[i];
      demos.push_back(std::move(d));
    }
    FitOptions opt;
    opt.init = mean_key(dist);
    const CostWeights fitted = fit_weights(demos, opt);
    std::array<double, kNumCostFeatures> noise{};
    noise.fill(kFitObsNoiseVar);
    dist = bayesian_update(dist, {fitted}, noise);
    if (single_valued) dist.sigma2.fill(kPinnedVariance);
    replan_all();
  };

  const auto t_start = std::chrono::steady_clock::now();
  out.trace.reserve(static_cast<std::size_t>(tb.steps));
  for (int step = 0; step < tb.steps; ++step) {
    if (tb.fit_interval > 0 && step > 0 && step % tb.fit_interval == 0) {
      refit();
    }
    ps.zero_grads();
    LossBreakdown avg;
    for (int j = 0; j < tb.batch_size; ++j) {
      const std::size_t idx =
          (static_cast<std::size_t>(step) * static_cast<std::size_t>(tb.batch_size) +
           static_cast<std::size_t>(j)) %
          frames.size();
      try {
        Tape t;
        const CompositeGraph g =
            composite_loss_graph(t, ps, frames[idx], plans[idx], cfg);
        check_finite_terms(g.values);
        t.backward(g.total);
        avg.prediction += g.values.prediction;
        avg.score += g.values.score;
        avg.imitation += g.values.imitation;
        avg.planning += g.values.planning;
        avg.total += g.values.total;
      } catch (const NumericError& e) {
        throw NumericError("training aborted at step " + std::to_string(step) +
                           ": " + e.what());
      }
    }
    const double inv_b = 1.0 / static_cast<double>(tb.batch_size);
    avg.prediction *= inv_b;
    avg.score *= inv_b;
    avg.imitation *= inv_b;
    avg.planning *= inv_b;
    avg.total *= inv_b;

    // Batch-mean gradient, global-norm clip, then the momentum step.
    double norm_sq = 0.0;
    for (const std::string& name : ps.names()) {
      Mat& g = ps.grad(name);
      for (double& x : g.d) {
        x *= inv_b;
        norm_sq += x * x;
      }
    }
    const double norm = std::sqrt(norm_sq);
    const double clip_scale =
        (tb.grad_clip > 0.0 && norm > tb.grad_clip) ? tb.grad_clip / norm : 1.0;
    // Linear ramp in, half-cosine decay out: the tail would otherwise ring
    // at constant speed and the final loss would depend on ring phase.
    const double warm =
        std::min(1.0, static_cast<double>(step + 1) /
                          static_cast<double>(kWarmupSteps));
    const double anneal =
        0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                              static_cast<double>(tb.steps)));
    const double lr = tb.learning_rate * warm * anneal;
    // While the learning rate ramps, also damp velocity that turns uphill
    // against the fresh gradient: the clipped cruise out of the random init
    // otherwise coasts far past the first valley. Past the ramp, momentum
    // runs free.
    double carry = 1.0;
    if (step < kWarmupSteps) {
      double align = 0.0;
      for (const std::string& name : ps.names()) {
        const Mat& g = ps.grad(name);
        const Mat& v = velocity.at(name);
        for (std::size_t i = 0; i < g.size(); ++i) {
          align += g.d[i] * v.d[i];
        }
      }
      if (align < 0.0) carry = kUphillCarry;
    }
    for (const std::string& name : ps.names()) {
      const Mat& g = ps.grad(name);
      Mat& v = velocity.at(name);
      Mat& p = ps.value(name);
      for (std::size_t i = 0; i < g.size(); ++i) {
        v.d[i] = tb.momentum * carry * v.d[i] + g.d[i] * clip_scale;
        p.d[i] -= lr * v.d[i];
      }
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
            .count();
    out.trace.push_back(TrainLogRow{step, avg, wall});
  }

  out.cost_dist = dist;
  return out;
}

std::string format_train_log(const std::vector<TrainLogRow>& trace) {
  std::string s = "step,total,prediction,score,imitation,planning,wall_seconds\n";
  char buf[256];
  for (const TrainLogRow& r : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.3f\n",
                  r.step, r.loss.total, r.loss.prediction, r.loss.score,
                  r.loss.imitation, r.loss.planning, r.wall_seconds);
    s += buf;
  }
  return s;
}

Checkpoint make_train_checkpoint(const TrainResult& result,
                                 const EngineConfig& cfg) {
  Checkpoint ck;
  ck.config_hash = config_hash(cfg);
  ck.step = static_cast<std::uint64_t>(cfg.training.steps);
  ck.seed = cfg.seed;
  store_to_checkpoint(result.params, ck);
  Mat mu(kNumCostFeatures, 1);
  Mat sigma2(kNumCostFeatures, 1);
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    mu(i, 0) = result.cost_dist.mu[i];
    sigma2(i, 0) = result.cost_dist.sigma2[i];
  }
  ck.arrays["cost/mu"] = std::move(mu);
  ck.arrays["cost/sigma2"] = std::move(sigma2);
  return ck;
}

void load_train_state(const Checkpoint& ck, ParamStore& ps,
                      DistributionalCostWeights& dist) {
  load_into_store(ck, ps);
  const auto mu_it = ck.arrays.find("cost/mu");
  const auto s2_it = ck.arrays.find("cost/sigma2");
  if (mu_it == ck.arrays.end() || s2_it == ck.arrays.end()) {
    throw ParseError("checkpoint is missing the cost weight distribution");
  }
  if (mu_it->second.size() != kNumCostFeatures ||
      s2_it->second.size() != kNumCostFeatures) {
    throw ParseError("checkpoint cost weight arrays have the wrong shape");
  }
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    dist.mu[i] = mu_it->second.d[i];
    dist.sigma2[i] = s2_it->second.d[i];
    if (!(dist.sigma2[i] > 0.0)) {
      throw ValidationError("checkpoint cost weight variance must be positive");
    }
  }
}

Metrics evaluate_ade_fde(ParamStore& ps, const std::vector<Frame>& dataset,
                         const EngineConfig& cfg) {
  Metrics m;
  const bool no_augment = cfg.training.ablation == Ablation::kNoAugment;
  double ade_sum = 0.0;
  double fde_sum[3] = {0.0, 0.0, 0.0};
  for (const Frame& raw : dataset) {
    const Frame frame = raw.is_local ? raw : to_local_frame(raw);
    const InputTensors in = assemble_inputs(frame, cfg.model);
    const ModelOutput out = run_model(ps, in, cfg.model, no_augment);
    const Mat best = select_most_likely(out);
    for (std::size_t i = 0; i < kNumAgents; ++i) {
      if (!frame.agent_mask[i]) continue;
      for (std::size_t s = 0; s < kFutureSteps; ++s) {
        const double dx = best(i, 2 * s) - frame.agent_futures_truth[i][s].x;
        const double dy = best(i, 2 * s + 1) - frame.agent_futures_truth[i][s].y;
        const double d = std::sqrt(dx * dx + dy * dy);
        ade_sum += d;
        for (std::size_t f = 0; f < 3; ++f) {
          if (s == kFdeSteps[f]) fde_sum[f] += d;
        }
      }
      ++m.n_agents;
    }
    ++m.n_frames;
  }
  if (m.n_agents > 0) {
    const double inv_agents = 1.0 / static_cast<double>(m.n_agents);
    m.ade = ade_sum * (inv_agents / static_cast<double>(kFutureSteps));
    m.fde_1s = fde_sum[0] * inv_agents;
    m.fde_3s = fde_sum[1] * inv_agents;
    m.fde_5s = fde_sum[2] * inv_agents;
  }
  return m;
}

}  // namespace vcdi

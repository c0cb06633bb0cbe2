#include "vcdi/cost.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "vcdi/errors.hpp"
#include "vcdi/geometry.hpp"
#include "vcdi/rng.hpp"

namespace vcdi {

const std::array<const char*, kNumCostFeatures> kCostFeatureNames = {
    "speed", "accel", "jerk", "steer", "steer_rate", "center", "direction"};

namespace {

constexpr double kSpeedEps = 1e-12;   // keeps sqrt differentiable at rest
constexpr double kCurvEps = 1e-2;     // ~0.1 m/s floor inside the curvature
constexpr double kHeadingSpeedMin = 0.05;  // m/s; below it heading is held

using Steps = std::array<double, kFutureSteps>;

// Per-step references against the nearest unmasked VUT-lane waypoint.
struct LaneRefs {
  Steps limit, cx, cy, nx, ny, heading;
};

LaneRefs nearest_lane_refs(const Mat& xy, const SceneContext& scene) {
  const std::size_t slot0_rows =
      std::size_t(scene.l_lanes) * std::size_t(scene.w_waypoints);
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < slot0_rows; ++r) {
    if (scene.lane_mask(r, 0) != 0.0) rows.push_back(r);
  }
  if (rows.empty()) {
    throw FeatureError("cost features need at least one lane waypoint");
  }
  LaneRefs refs;
  for (std::size_t t = 0; t < kFutureSteps; ++t) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_r = rows[0];
    for (const std::size_t r : rows) {
      const double dx = xy(t, 0) - scene.lane_feat(r, 0);
      const double dy = xy(t, 1) - scene.lane_feat(r, 1);
      const double d2 = dx * dx + dy * dy;
      if (d2 < best) {
        best = d2;
        best_r = r;
      }
    }
    refs.limit[t] = scene.lane_feat(best_r, 7);
    refs.cx[t] = scene.lane_feat(best_r, 0);
    refs.cy[t] = scene.lane_feat(best_r, 1);
    const double h = scene.lane_feat(best_r, 6);
    refs.heading[t] = h;
    refs.nx[t] = -std::sin(h);
    refs.ny[t] = std::cos(h);
  }
  return refs;
}

// Tape analogue of fd_rows over any node, columnwise. Term grouping matches
// fd_rows exactly so both paths agree bitwise.
TapeValue fd_tape(Tape& t, TapeValue x) {
  const std::size_t n = t.value(x).rows;
  const TapeValue first =
      t.add(t.scale(t.slice_rows(x, 0, 1), -3.0),
            t.sub(t.scale(t.slice_rows(x, 1, 2), 4.0), t.slice_rows(x, 2, 3)));
  const TapeValue mid = t.sub(t.slice_rows(x, 2, n), t.slice_rows(x, 0, n - 2));
  const TapeValue last =
      t.add(t.scale(t.slice_rows(x, n - 1, n), 3.0),
            t.sub(t.slice_rows(x, n - 3, n - 2),
                  t.scale(t.slice_rows(x, n - 2, n - 1), 4.0)));
  return t.scale(t.concat_rows({first, mid, last}), kHz / 2.0);
}

Mat column(const Steps& a) {
  Mat m(kFutureSteps, 1);
  for (std::size_t t = 0; t < kFutureSteps; ++t) m(t, 0) = a[t];
  return m;
}

double mean_sq(const Mat& a) {
  double acc = 0.0;
  for (const double v : a.d) acc += v * v;
  return acc * (1.0 / double(a.size()));
}

void check_weights(const CostWeights& w) {
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    if (!std::isfinite(w.w[i]) || w.w[i] < 0.0) {
      throw ValidationError(std::string("cost weight ") + kCostFeatureNames[i] +
                            " must be finite and nonnegative");
    }
  }
}

}  // namespace

Mat plan_positions(const VutFuturePlan& plan) {
  Mat xy(kFutureSteps, 2);
  for (std::size_t t = 0; t < kFutureSteps; ++t) {
    xy(t, 0) = plan.states[t].x;
    xy(t, 1) = plan.states[t].y;
  }
  return xy;
}

Mat fd_rows(const Mat& x) {
  const std::size_t n = x.rows;
  if (n < 3) throw ValidationError("fd_rows: needs >= 3 rows");
  const double half = kHz / 2.0;
  Mat v(n, x.cols);
  for (std::size_t c = 0; c < x.cols; ++c) {
    v(0, c) = (-3.0 * x(0, c) + (4.0 * x(1, c) - x(2, c))) * half;
    for (std::size_t t = 1; t + 1 < n; ++t) {
      v(t, c) = (x(t + 1, c) - x(t - 1, c)) * half;
    }
    v(n - 1, c) =
        (3.0 * x(n - 1, c) + (x(n - 3, c) - 4.0 * x(n - 2, c))) * half;
  }
  return v;
}

CostFeatureVector extract_cost_features(const VutFuturePlan& traj,
                                        const SceneContext& scene) {
  const Mat xy = plan_positions(traj);
  const LaneRefs refs = nearest_lane_refs(xy, scene);

  const Mat v = fd_rows(xy);
  Mat speed(kFutureSteps, 1);
  for (std::size_t t = 0; t < kFutureSteps; ++t) {
    speed(t, 0) = std::sqrt(v(t, 0) * v(t, 0) + v(t, 1) * v(t, 1) + kSpeedEps);
  }
  const Mat accel = fd_rows(speed);
  const Mat jerk = fd_rows(accel);
  const Mat a = fd_rows(v);

  Mat dev_speed(kFutureSteps, 1), steer(kFutureSteps, 1), lat(kFutureSteps, 1),
      dir(kFutureSteps, 1);
  for (std::size_t t = 0; t < kFutureSteps; ++t) {
    dev_speed(t, 0) = speed(t, 0) - refs.limit[t];
    const double q = v(t, 0) * v(t, 0) + v(t, 1) * v(t, 1) + kCurvEps;
    const double cross = v(t, 0) * a(t, 1) - v(t, 1) * a(t, 0);
    steer(t, 0) = cross / (std::sqrt(q) * q) * kWheelbase;
    lat(t, 0) = (xy(t, 0) - refs.cx[t]) * refs.nx[t] +
                (xy(t, 1) - refs.cy[t]) * refs.ny[t];
    const bool moving = speed(t, 0) >= kHeadingSpeedMin;
    const double heading =
        std::atan2(moving ? v(t, 1) : 0.0, moving ? v(t, 0) : 1.0);
    dir(t, 0) = moving ? wrap_angle(heading - refs.heading[t]) : 0.0;
  }
  const Mat steer_rate = fd_rows(steer);

  CostFeatureVector out;
  out.f = {mean_sq(dev_speed), mean_sq(accel), mean_sq(jerk), mean_sq(steer),
           mean_sq(steer_rate), mean_sq(lat), mean_sq(dir)};
  return out;
}

double evaluate_cost(const VutFuturePlan& traj, const CostWeights& weights,
                     const SceneContext& scene) {
  check_weights(weights);
  const CostFeatureVector f = extract_cost_features(traj, scene);
  double cost = 0.0;
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) cost += weights.w[i] * f.f[i];
  return cost;
}

std::array<TapeValue, kNumCostFeatures> extract_cost_features_tape(
    Tape& t, TapeValue xy, const SceneContext& scene) {
  const Mat& pos = t.value(xy);
  if (pos.rows != kFutureSteps || pos.cols != 2) {
    throw ValidationError("cost features expect a 50 x 2 position node");
  }
  // Waypoint selection and gating decisions come from the current values;
  // the graph then treats them as constants, matching the plain evaluation.
  const LaneRefs refs = nearest_lane_refs(pos, scene);

  const TapeValue v = fd_tape(t, xy);
  const TapeValue vx = t.slice_cols(v, 0, 1);
  const TapeValue vy = t.slice_cols(v, 1, 2);
  const TapeValue speed = t.sqrt_op(
      t.add_scalar(t.add(t.square_op(vx), t.square_op(vy)), kSpeedEps));
  const TapeValue accel = fd_tape(t, speed);
  const TapeValue jerk = fd_tape(t, accel);
  const TapeValue a = fd_tape(t, v);
  const TapeValue ax = t.slice_cols(a, 0, 1);
  const TapeValue ay = t.slice_cols(a, 1, 2);

  const TapeValue q =
      t.add_scalar(t.add(t.square_op(vx), t.square_op(vy)), kCurvEps);
  const TapeValue cross = t.sub(t.mul(vx, ay), t.mul(vy, ax));
  const TapeValue steer =
      t.scale(t.div(cross, t.mul(t.sqrt_op(q), q)), kWheelbase);
  const TapeValue steer_rate = fd_tape(t, steer);

  const TapeValue dev_speed = t.sub(speed, t.input(column(refs.limit), "vlim"));
  const TapeValue px = t.slice_cols(xy, 0, 1);
  const TapeValue py = t.slice_cols(xy, 1, 2);
  const TapeValue lat = t.add(
      t.mul(t.sub(px, t.input(column(refs.cx), "cx")),
            t.input(column(refs.nx), "nx")),
      t.mul(t.sub(py, t.input(column(refs.cy), "cy")),
            t.input(column(refs.ny), "ny")));

  // Heading deviation only counts while moving; held steps flow through safe
  // constants (atan2(0, 1) = 0) so the angle stays differentiable.
  Mat moving(kFutureSteps, 1), held(kFutureSteps, 1);
  const Mat& sp = t.value(speed);
  for (std::size_t i = 0; i < kFutureSteps; ++i) {
    const bool m = sp(i, 0) >= kHeadingSpeedMin;
    moving(i, 0) = m ? 1.0 : 0.0;
    held(i, 0) = m ? 0.0 : 1.0;
  }
  const TapeValue hx = t.add(t.mul_mask(vx, moving), t.input(held, "held"));
  const TapeValue hy = t.mul_mask(vy, moving);
  const TapeValue heading = t.atan2_op(hy, hx);
  const TapeValue dir = t.mul_mask(
      t.wrap_angle_op(
          t.sub(heading, t.input(column(refs.heading), "lane_heading"))),
      moving);

  return {t.mean_all(t.square_op(dev_speed)), t.mean_all(t.square_op(accel)),
          t.mean_all(t.square_op(jerk)),      t.mean_all(t.square_op(steer)),
          t.mean_all(t.square_op(steer_rate)), t.mean_all(t.square_op(lat)),
          t.mean_all(t.square_op(dir))};
}

TapeValue evaluate_cost_tape(Tape& t, TapeValue xy, const CostWeights& weights,
                             const SceneContext& scene) {
  check_weights(weights);
  const std::array<TapeValue, kNumCostFeatures> f =
      extract_cost_features_tape(t, xy, scene);
  TapeValue cost = t.scale(f[0], weights.w[0]);
  for (std::size_t i = 1; i < kNumCostFeatures; ++i) {
    cost = t.add(cost, t.scale(f[i], weights.w[i]));
  }
  return cost;
}

CostWeights fit_weights(const std::vector<FitDemo>& demos,
                        const FitOptions& opt) {
  if (demos.empty()) throw ValidationError("fit_weights: no demonstrations");
  if (opt.margin < 0.0 || opt.learning_rate <= 0.0 || opt.steps < 0) {
    throw ValidationError("fit_weights: bad options");
  }

  struct Prepared {
    CostFeatureVector truth;
    std::vector<CostFeatureVector> rivals;
  };
  std::vector<Prepared> prep;
  std::size_t rivals_total = 0;
  for (const FitDemo& d : demos) {
    if (d.candidates.size() < 2) {
      throw ValidationError(
          "fit_weights: each demo needs >= 2 candidates including the truth");
    }
    Prepared p;
    p.truth = extract_cost_features(d.truth, d.scene);
    for (const VutFuturePlan& c : d.candidates) {
      const CostFeatureVector f = extract_cost_features(c, d.scene);
      if (f.f == p.truth.f) continue;  // the truth itself is not a rival
      p.rivals.push_back(f);
    }
    rivals_total += p.rivals.size();
    prep.push_back(std::move(p));
  }
  if (rivals_total == 0) {
    throw FitError("fit_weights: all candidates identical to the truth");
  }

  CostWeights w = opt.init;
  for (double& v : w.w) v = std::max(v, 0.0);
  const double denom = double(rivals_total);
  for (int step = 0; step <= opt.steps; ++step) {
    double objective = 0.0;
    std::array<double, kNumCostFeatures> grad{};
    for (const Prepared& p : prep) {
      double truth_cost = 0.0;
      for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
        truth_cost += w.w[i] * p.truth.f[i];
      }
      for (const CostFeatureVector& r : p.rivals) {
        double rival_cost = 0.0;
        for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
          rival_cost += w.w[i] * r.f[i];
        }
        const double violation = opt.margin + truth_cost - rival_cost;
        if (violation > 0.0) {
          objective += violation / denom;
          for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
            grad[i] += (p.truth.f[i] - r.f[i]) / denom;
          }
        }
      }
    }
    if (objective <= opt.tolerance || step == opt.steps) break;
    for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
      w.w[i] = std::max(0.0, w.w[i] - opt.learning_rate * grad[i]);
    }
  }
  return w;
}

DistributionalCostWeights bayesian_update(
    const DistributionalCostWeights& prior,
    const std::vector<CostWeights>& observed,
    const std::array<double, kNumCostFeatures>& obs_noise_var) {
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    if (!(prior.sigma2[i] > 0.0)) {
      throw ValidationError("bayesian_update: prior variance must be > 0");
    }
    if (!(obs_noise_var[i] > 0.0)) {
      throw ValidationError("bayesian_update: observation noise must be > 0");
    }
  }
  DistributionalCostWeights post;
  const double n = double(observed.size());
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    double sum = 0.0;
    for (const CostWeights& o : observed) sum += o.w[i];
    const double prec = 1.0 / prior.sigma2[i] + n / obs_noise_var[i];
    post.sigma2[i] = 1.0 / prec;
    post.mu[i] =
        post.sigma2[i] * (prior.mu[i] / prior.sigma2[i] + sum / obs_noise_var[i]);
  }
  return post;
}

CostWeights sample_key(const DistributionalCostWeights& dist,
                       std::uint64_t seed) {
  Rng rng(seed);
  CostWeights key;
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    if (!(dist.sigma2[i] > 0.0)) {
      throw ValidationError("sample_key: variance must be > 0");
    }
    key.w[i] = std::max(0.0, dist.mu[i] + std::sqrt(dist.sigma2[i]) * rng.normal());
  }
  return key;
}

CostWeights select_key(const DistributionalCostWeights& dist,
                       const std::array<double, kNumCostFeatures>& offsets) {
  CostWeights key;
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    if (!(dist.sigma2[i] > 0.0)) {
      throw ValidationError("select_key: variance must be > 0");
    }
    key.w[i] = std::max(0.0, dist.mu[i] + offsets[i] * std::sqrt(dist.sigma2[i]));
  }
  return key;
}

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

std::vector<std::string> read_nonempty_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void save_key(const std::string& path, const CostWeights& key) {
  check_weights(key);
  std::string text = "vcdi_key_v1\n";
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    text += std::string(kCostFeatureNames[i]) + " " + format_double(key.w[i]) +
            "\n";
  }
  write_text(path, text);
}

CostWeights load_key(const std::string& path) {
  const std::vector<std::string> lines = read_nonempty_lines(path);
  if (lines.empty() || lines[0] != "vcdi_key_v1") {
    throw ParseError("key file missing vcdi_key_v1 tag: " + path);
  }
  if (lines.size() != 1 + kNumCostFeatures) {
    throw ParseError("key file must hold exactly 7 weights: " + path);
  }
  CostWeights key;
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    std::istringstream ss(lines[i + 1]);
    std::string name;
    double value = 0.0;
    if (!(ss >> name >> value) || name != kCostFeatureNames[i]) {
      throw ParseError("key file line " + std::to_string(i + 2) + " must be '" +
                       std::string(kCostFeatureNames[i]) + " <value>': " + path);
    }
    key.w[i] = value;
  }
  check_weights(key);
  return key;
}

void save_dist(const std::string& path, const DistributionalCostWeights& d) {
  std::string text = "vcdi_dist_v1\n";
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    if (!(d.sigma2[i] > 0.0)) {
      throw ValidationError("save_dist: variance must be > 0");
    }
    text += std::string(kCostFeatureNames[i]) + " " + format_double(d.mu[i]) +
            " " + format_double(d.sigma2[i]) + "\n";
  }
  write_text(path, text);
}

DistributionalCostWeights load_dist(const std::string& path) {
  const std::vector<std::string> lines = read_nonempty_lines(path);
  if (lines.empty() || lines[0] != "vcdi_dist_v1") {
    throw ParseError("distribution file missing vcdi_dist_v1 tag: " + path);
  }
  if (lines.size() != 1 + kNumCostFeatures) {
    throw ParseError("distribution file must hold exactly 7 rows: " + path);
  }
  DistributionalCostWeights d;
  for (std::size_t i = 0; i < kNumCostFeatures; ++i) {
    std::istringstream ss(lines[i + 1]);
    std::string name;
    double mu = 0.0, sigma2 = 0.0;
    if (!(ss >> name >> mu >> sigma2) || name != kCostFeatureNames[i]) {
      throw ParseError("distribution file line " + std::to_string(i + 2) +
                       " malformed: " + path);
    }
    if (!std::isfinite(mu) || !(sigma2 > 0.0) || !std::isfinite(sigma2)) {
      throw ValidationError(std::string("distribution row ") +
                            kCostFeatureNames[i] +
                            " needs finite mu and sigma2 > 0: " + path);
    }
    d.mu[i] = mu;
    d.sigma2[i] = sigma2;
  }
  return d;
}

}  // namespace vcdi

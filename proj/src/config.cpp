#include "vcdi/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "vcdi/errors.hpp"
#include "vcdi/hash.hpp"

namespace vcdi {
namespace {

using nlohmann::json;

// Tracks which keys of one JSON object were consumed so leftovers can be
// rejected by their full path.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string prefix)
      : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) {
      throw ConfigError("config: " + label() + " must be an object");
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  int get_int(const std::string& key, int fallback, int lo, int hi) {
    if (!has(key)) return check_range(key, fallback, lo, hi);
    const json& v = j_.at(key);
    if (!v.is_number_integer()) {
      throw ConfigError("config: " + path(key) + " must be an integer");
    }
    return check_range(key, v.get<int>(), lo, hi);
  }

  double get_double(const std::string& key, double fallback, double lo,
                    double hi) {
    if (!has(key)) return check_range_d(key, fallback, lo, hi);
    const json& v = j_.at(key);
    if (!v.is_number()) {
      throw ConfigError("config: " + path(key) + " must be a number");
    }
    return check_range_d(key, v.get<double>(), lo, hi);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      throw ConfigError("config: " + path(key) +
                        " must be a nonnegative integer");
    }
    return v.get<std::uint64_t>();
  }

  std::string get_string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_string()) {
      throw ConfigError("config: " + path(key) + " must be a string");
    }
    return v.get<std::string>();
  }

  const json* get_object(const std::string& key) {
    if (!has(key)) return nullptr;
    return &j_.at(key);
  }

  // Rejects any key that was never requested.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (seen_.count(it.key()) == 0) {
        throw ConfigError("config: unknown key " + path(it.key()));
      }
    }
  }

  std::string path(const std::string& key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

 private:
  std::string label() const { return prefix_.empty() ? "root" : prefix_; }

  int check_range(const std::string& key, int v, int lo, int hi) const {
    if (v < lo || v > hi) {
      throw ConfigError("config: " + path(key) + " = " + std::to_string(v) +
                        " outside [" + std::to_string(lo) + ", " +
                        std::to_string(hi) + "]");
    }
    return v;
  }

  double check_range_d(const std::string& key, double v, double lo,
                       double hi) const {
    if (!(v >= lo && v <= hi)) {
      throw ConfigError("config: " + path(key) + " = " + std::to_string(v) +
                        " outside [" + std::to_string(lo) + ", " +
                        std::to_string(hi) + "]");
    }
    return v;
  }

  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

ModelConfig parse_model(const json& j) {
  ModelConfig m;
  ObjectReader r(j, "model");
  m.d_model = r.get_int("d_model", m.d_model, 8, 1024);
  m.k_modes = r.get_int("k_modes", m.k_modes, 1, 16);
  m.l_lanes = r.get_int("l_lanes", m.l_lanes, 1, 16);
  m.w_waypoints = r.get_int("w_waypoints", m.w_waypoints, 2, 200);
  m.c_crosswalks = r.get_int("c_crosswalks", m.c_crosswalks, 1, 16);
  m.p_points = r.get_int("p_points", m.p_points, 2, 64);
  m.n_heads = r.get_int("n_heads", m.n_heads, 1, 16);
  m.ff_dim = r.get_int("ff_dim", m.ff_dim, 1, 4096);
  m.n_layers = r.get_int("n_layers", m.n_layers, 1, 8);
  r.finish();
  if (m.d_model % m.n_heads != 0) {
    throw ConfigError("config: model.d_model must be divisible by n_heads");
  }
  return m;
}

TrainingBlock parse_training(const json& j) {
  TrainingBlock t;
  ObjectReader r(j, "training");
  t.lambda_prediction =
      r.get_double("lambda_prediction", t.lambda_prediction, 0.0, 1e6);
  t.lambda_score = r.get_double("lambda_score", t.lambda_score, 0.0, 1e6);
  t.lambda_imitation =
      r.get_double("lambda_imitation", t.lambda_imitation, 0.0, 1e6);
  t.lambda_planning =
      r.get_double("lambda_planning", t.lambda_planning, 0.0, 1e6);
  t.learning_rate = r.get_double("learning_rate", t.learning_rate, 1e-9, 10.0);
  t.momentum = r.get_double("momentum", t.momentum, 0.0, 0.999);
  t.grad_clip = r.get_double("grad_clip", t.grad_clip, 1e-9, 1e9);
  t.steps = r.get_int("steps", t.steps, 0, 1000000);
  t.batch_size = r.get_int("batch_size", t.batch_size, 1, 1024);
  t.fit_interval = r.get_int("fit_interval", t.fit_interval, 1, 1000000);
  t.ablation = ablation_from_string(
      r.get_string("ablation", to_string(t.ablation)));
  r.finish();
  if (t.lambda_prediction == 0.0 && t.lambda_score == 0.0 &&
      t.lambda_imitation == 0.0 && t.lambda_planning == 0.0) {
    throw ConfigError("config: at least one training.lambda_* must be > 0");
  }
  return t;
}

PlannerBlock parse_planner(const json& j) {
  PlannerBlock p;
  ObjectReader r(j, "planner");
  p.n_speeds = r.get_int("n_speeds", p.n_speeds, 2, 32);
  p.n_lateral = r.get_int("n_lateral", p.n_lateral, 1, 9);
  p.max_lateral_offset =
      r.get_double("max_lateral_offset", p.max_lateral_offset, 0.0, 3.0);
  p.refine_steps = r.get_int("refine_steps", p.refine_steps, 0, 1000);
  p.refine_lr = r.get_double("refine_lr", p.refine_lr, 1e-9, 1.0);
  r.finish();
  if (p.n_lateral % 2 == 0) {
    throw ConfigError("config: planner.n_lateral must be odd");
  }
  return p;
}

SimBlock parse_sim(const json& j) {
  SimBlock s;
  ObjectReader r(j, "sim");
  s.replan_interval = r.get_int("replan_interval", s.replan_interval, 1, 50);
  s.duration_steps = r.get_int("duration_steps", s.duration_steps, 0, 100000);
  s.v_max = r.get_double("v_max", s.v_max, 0.1, 60.0);
  r.finish();
  return s;
}

void append_kv(std::string& out, const char* key, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s=%.17g;", key, v);
  out += buf;
}

void append_kv(std::string& out, const char* key, int v) {
  out += key;
  out += '=';
  out += std::to_string(v);
  out += ';';
}

}  // namespace

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kFull:
      return "full";
    case Ablation::kSingleValued:
      return "single_valued";
    case Ablation::kNoAugment:
      return "no_augment";
  }
  throw ValidationError("unknown ablation value");
}

Ablation ablation_from_string(const std::string& s) {
  if (s == "full") return Ablation::kFull;
  if (s == "single_valued") return Ablation::kSingleValued;
  if (s == "no_augment") return Ablation::kNoAugment;
  throw ConfigError(
      "config: ablation must be one of full, single_valued, no_augment "
      "(got \"" + s + "\")");
}

void validate_config(const EngineConfig& cfg) {
  // Mirrors the ranges the parser enforces, for configs built in code.
  auto in = [](double v, double lo, double hi) { return v >= lo && v <= hi; };
  const ModelConfig& m = cfg.model;
  if (m.d_model < 8 || m.d_model > 1024 || m.d_model % m.n_heads != 0 ||
      m.k_modes < 1 || m.k_modes > 16 || m.l_lanes < 1 || m.l_lanes > 16 ||
      m.w_waypoints < 2 || m.w_waypoints > 200 || m.c_crosswalks < 1 ||
      m.c_crosswalks > 16 || m.p_points < 2 || m.p_points > 64 ||
      m.n_heads < 1 || m.n_heads > 16 || m.ff_dim < 1 || m.ff_dim > 4096 ||
      m.n_layers < 1 || m.n_layers > 8) {
    throw ConfigError("config: model block out of range");
  }
  const TrainingBlock& t = cfg.training;
  if (!in(t.lambda_prediction, 0.0, 1e6) || !in(t.lambda_score, 0.0, 1e6) ||
      !in(t.lambda_imitation, 0.0, 1e6) || !in(t.lambda_planning, 0.0, 1e6) ||
      !in(t.learning_rate, 1e-9, 10.0) || !in(t.momentum, 0.0, 0.999) ||
      !in(t.grad_clip, 1e-9, 1e9) || t.steps < 0 || t.batch_size < 1 ||
      t.fit_interval < 1) {
    throw ConfigError("config: training block out of range");
  }
  if (t.lambda_prediction == 0.0 && t.lambda_score == 0.0 &&
      t.lambda_imitation == 0.0 && t.lambda_planning == 0.0) {
    throw ConfigError("config: at least one training.lambda_* must be > 0");
  }
  const PlannerBlock& p = cfg.planner;
  if (p.n_speeds < 2 || p.n_speeds > 32 || p.n_lateral < 1 ||
      p.n_lateral > 9 || p.n_lateral % 2 == 0 ||
      !in(p.max_lateral_offset, 0.0, 3.0) || p.refine_steps < 0 ||
      p.refine_steps > 1000 || !in(p.refine_lr, 1e-9, 1.0)) {
    throw ConfigError("config: planner block out of range");
  }
  const SimBlock& s = cfg.sim;
  if (s.replan_interval < 1 || s.replan_interval > 50 ||
      s.duration_steps < 0 || s.duration_steps > 100000 ||
      !in(s.v_max, 0.1, 60.0)) {
    throw ConfigError("config: sim block out of range");
  }
}

EngineConfig parse_engine_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  EngineConfig cfg;
  ObjectReader root(j, "");
  if (const json* m = root.get_object("model")) cfg.model = parse_model(*m);
  if (const json* t = root.get_object("training")) {
    cfg.training = parse_training(*t);
  }
  if (const json* p = root.get_object("planner")) {
    cfg.planner = parse_planner(*p);
  }
  if (const json* s = root.get_object("sim")) cfg.sim = parse_sim(*s);
  cfg.seed = root.get_u64("seed", cfg.seed);
  root.finish();
  return cfg;
}

EngineConfig load_engine_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_engine_config_text(ss.str());
}

std::string canonical_config_string(const EngineConfig& cfg) {
  std::string out = "vcdi_config_v1;";
  append_kv(out, "model.d_model", cfg.model.d_model);
  append_kv(out, "model.k_modes", cfg.model.k_modes);
  append_kv(out, "model.l_lanes", cfg.model.l_lanes);
  append_kv(out, "model.w_waypoints", cfg.model.w_waypoints);
  append_kv(out, "model.c_crosswalks", cfg.model.c_crosswalks);
  append_kv(out, "model.p_points", cfg.model.p_points);
  append_kv(out, "model.n_heads", cfg.model.n_heads);
  append_kv(out, "model.ff_dim", cfg.model.ff_dim);
  append_kv(out, "model.n_layers", cfg.model.n_layers);
  append_kv(out, "training.lambda_prediction", cfg.training.lambda_prediction);
  append_kv(out, "training.lambda_score", cfg.training.lambda_score);
  append_kv(out, "training.lambda_imitation", cfg.training.lambda_imitation);
  append_kv(out, "training.lambda_planning", cfg.training.lambda_planning);
  append_kv(out, "training.learning_rate", cfg.training.learning_rate);
  append_kv(out, "training.momentum", cfg.training.momentum);
  append_kv(out, "training.grad_clip", cfg.training.grad_clip);
  append_kv(out, "training.steps", cfg.training.steps);
  append_kv(out, "training.batch_size", cfg.training.batch_size);
  append_kv(out, "training.fit_interval", cfg.training.fit_interval);
  out += "training.ablation=" + to_string(cfg.training.ablation) + ";";
  append_kv(out, "planner.n_speeds", cfg.planner.n_speeds);
  append_kv(out, "planner.n_lateral", cfg.planner.n_lateral);
  append_kv(out, "planner.max_lateral_offset", cfg.planner.max_lateral_offset);
  append_kv(out, "planner.refine_steps", cfg.planner.refine_steps);
  append_kv(out, "planner.refine_lr", cfg.planner.refine_lr);
  append_kv(out, "sim.replan_interval", cfg.sim.replan_interval);
  append_kv(out, "sim.duration_steps", cfg.sim.duration_steps);
  append_kv(out, "sim.v_max", cfg.sim.v_max);
  char buf[48];
  std::snprintf(buf, sizeof(buf), "seed=%" PRIu64 ";", cfg.seed);
  out += buf;
  return out;
}

std::uint64_t config_hash(const EngineConfig& cfg) {
  return fnv1a(canonical_config_string(cfg));
}

}  // namespace vcdi

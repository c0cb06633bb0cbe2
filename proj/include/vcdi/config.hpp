#pragma once

#include <cstdint>
#include <string>

namespace vcdi {

// Training variants: `kFull` is the complete model, `kSingleValued` pins the
// cost-weight distribution variance to ~0 (one fixed VUT strategy), and
// `kNoAugment` removes the VUT-future conditioning path entirely.
enum class Ablation { kFull, kSingleValued, kNoAugment };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

struct ModelConfig {
  int d_model = 64;      // embedding width; must divide evenly by n_heads
  int k_modes = 3;       // trajectory modes per agent
  int l_lanes = 4;       // lanes kept per agent
  int w_waypoints = 30;  // waypoints kept per lane
  int c_crosswalks = 2;  // crosswalks kept per agent
  int p_points = 8;      // perimeter points kept per crosswalk
  int n_heads = 4;       // attention heads
  int ff_dim = 128;      // feed-forward hidden width
  int n_layers = 2;      // interaction encoder layers
};

struct TrainingBlock {
  double lambda_prediction = 1.0;
  double lambda_score = 0.2;
  double lambda_imitation = 1.0;
  double lambda_planning = 0.01;
  double learning_rate = 0.02;
  double momentum = 0.9;
  double grad_clip = 1.0;  // global gradient-norm ceiling
  int steps = 2000;
  int batch_size = 4;
  int fit_interval = 50;  // cost-weight refit cadence, in steps
  Ablation ablation = Ablation::kFull;
};

struct PlannerBlock {
  int n_speeds = 7;                 // lattice target-speed count
  int n_lateral = 3;                // lattice lateral end-offset count (odd)
  double max_lateral_offset = 0.5;  // meters, offsets span [-max, +max]
  int refine_steps = 20;
  double refine_lr = 0.05;
};

struct SimBlock {
  int replan_interval = 10;  // steps between replans (10 = 1 s)
  int duration_steps = 100;
  double v_max = 30.0;  // used by the no-teleportation displacement clamp
};

struct EngineConfig {
  ModelConfig model;
  TrainingBlock training;
  PlannerBlock planner;
  SimBlock sim;
  std::uint64_t seed = 7;
};

// Validates every field range; throws ConfigError naming the offending field.
void validate_config(const EngineConfig& cfg);

// Parses a JSON engine config (// and /* */ comments allowed). Every field is
// optional and defaults as above; unknown keys are rejected by full path.
EngineConfig parse_engine_config_text(const std::string& text);
EngineConfig load_engine_config(const std::string& path);

// Canonical flat rendering of every field, used for hashing and manifests.
std::string canonical_config_string(const EngineConfig& cfg);
std::uint64_t config_hash(const EngineConfig& cfg);

}  // namespace vcdi

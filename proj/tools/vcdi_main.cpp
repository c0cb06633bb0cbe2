// Single command-line entry point: scenario synthesis, training, evaluation,
// gradient checking, closed-loop simulation, and key sweeps. Every command is
// deterministic given its flags and seed; all outputs land in a run directory
// together with a run.json manifest (tool version, seeds, config hash). Error
// lines share one machine-readable prefix: "vcdi: error: <category>: ...",
// where the category is "validation" (exit 1) or "runtime" (exit 2).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vcdi/checkpoint.hpp"
#include "vcdi/config.hpp"
#include "vcdi/cost.hpp"
#include "vcdi/errors.hpp"
#include "vcdi/grad_check.hpp"
#include "vcdi/model.hpp"
#include "vcdi/planner.hpp"
#include "vcdi/scenario.hpp"
#include "vcdi/sim.hpp"
#include "vcdi/training.hpp"

namespace {

constexpr const char* kToolVersion = "0.1.0";

using nlohmann::json;

void make_run_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw vcdi::IoError("cannot create " + dir + ": " + ec.message());
  }
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw vcdi::IoError("cannot open " + path + " for writing");
  out << body;
  if (!out) throw vcdi::IoError("short write to " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw vcdi::IoError("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw vcdi::ParseError(path + ": " + e.what());
  }
}

// Tool version, config hash, and command-specific fields; everything in it
// must be reproducible, so no timestamps and no wall-clock readings.
void write_run_manifest(const std::string& out_dir,
                        const vcdi::EngineConfig& cfg, json extra) {
  extra["tool_version"] = kToolVersion;
  extra["config_hash"] = vcdi::config_hash(cfg);
  write_text(out_dir + "/run.json", extra.dump(2) + "\n");
}

// Every *.json in the directory except run/trace manifests, in name order so
// the frame sequence is stable across filesystems.
std::vector<vcdi::Frame> load_frames(const std::string& data_dir) {
  if (!std::filesystem::is_directory(data_dir)) {
    throw vcdi::ValidationError("not a directory: " + data_dir);
  }
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(data_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (entry.path().extension() != ".json") continue;
    if (name == "run.json" || name == "manifest.json") continue;
    files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  std::vector<vcdi::Frame> frames;
  for (const std::string& file : files) {
    const vcdi::Scenario s = vcdi::load_scenario(file);
    std::vector<vcdi::Frame> sliced = vcdi::slice_frames(s);
    frames.insert(frames.end(), sliced.begin(), sliced.end());
  }
  if (frames.empty()) {
    throw vcdi::ValidationError("no usable scenario frames under " +
                                data_dir);
  }
  return frames;
}

std::array<double, vcdi::kNumCostFeatures> parse_feature_map(
    const json& j, const std::string& what) {
  if (!j.is_object()) {
    throw vcdi::ValidationError(what + ": expected an object of weights");
  }
  std::array<double, vcdi::kNumCostFeatures> out{};
  std::size_t seen = 0;
  for (int f = 0; f < vcdi::kNumCostFeatures; ++f) {
    const char* name = vcdi::kCostFeatureNames[static_cast<std::size_t>(f)];
    if (!j.contains(name)) {
      throw vcdi::ValidationError(what + ": missing feature \"" +
                                  std::string(name) + "\"");
    }
    const double v = j.at(name).get<double>();
    if (!std::isfinite(v)) {
      throw vcdi::ValidationError(what + ": feature \"" + std::string(name) +
                                  "\" is not finite");
    }
    out[static_cast<std::size_t>(f)] = v;
    ++seen;
  }
  if (j.size() != seen) {
    throw vcdi::ValidationError(what + ": unknown extra keys present");
  }
  return out;
}

vcdi::CostWeights parse_key(const json& j, const std::string& what) {
  vcdi::CostWeights key;
  key.w = parse_feature_map(j, what);
  for (double v : key.w) {
    if (v < 0.0) {
      throw vcdi::ValidationError(what + ": weights must be nonnegative");
    }
  }
  return key;
}

json key_to_json(const vcdi::CostWeights& key) {
  json j = json::object();
  for (int f = 0; f < vcdi::kNumCostFeatures; ++f) {
    j[vcdi::kCostFeatureNames[static_cast<std::size_t>(f)]] =
        key.w[static_cast<std::size_t>(f)];
  }
  return j;
}

vcdi::DistributionalCostWeights load_dist_file(const std::string& path) {
  const json j = parse_json_file(path);
  if (!j.is_object() || !j.contains("mu") || !j.contains("sigma2")) {
    throw vcdi::ValidationError(path +
                                ": expected an object with mu and sigma2");
  }
  vcdi::DistributionalCostWeights dist;
  dist.mu = parse_feature_map(j.at("mu"), path + ": mu");
  dist.sigma2 = parse_feature_map(j.at("sigma2"), path + ": sigma2");
  for (double v : dist.sigma2) {
    if (v <= 0.0) {
      throw vcdi::ValidationError(path + ": sigma2 must be positive");
    }
  }
  return dist;
}

// Registers parameters for the config, then fills them from the checkpoint.
// Array shapes are the compatibility contract: mismatched model dims fail
// the load with the offending parameter named. Hashes go to run.json for
// auditing rather than gating here, since flag overrides (--steps,
// --ablation) legitimately shift the full-config hash.
vcdi::ParamStore params_for(const vcdi::Checkpoint& ck,
                            const vcdi::EngineConfig& cfg) {
  vcdi::ParamStore ps;
  vcdi::init_model_params(ps, cfg.model, cfg.seed);
  try {
    vcdi::load_into_store(ck, ps);
  } catch (const vcdi::ValidationError& e) {
    throw vcdi::ValidationError(
        std::string(e.what()) +
        " (was the checkpoint trained under a different model config?)");
  }
  return ps;
}

void apply_ablation_flag(vcdi::EngineConfig& cfg, const std::string& flag) {
  if (flag.empty()) return;
  cfg.training.ablation = vcdi::ablation_from_string(flag);
}

int cmd_synth(const vcdi::EngineConfig& cfg, const std::string& kind_name,
              int count, std::size_t duration, std::uint64_t seed,
              const std::string& out_dir) {
  vcdi::SynthKind kind;
  if (kind_name == "car_following") {
    kind = vcdi::SynthKind::kCarFollowing;
  } else if (kind_name == "intersection") {
    kind = vcdi::SynthKind::kIntersection;
  } else {
    throw vcdi::ValidationError("unknown scenario kind: " + kind_name);
  }
  if (count < 0) throw vcdi::ValidationError("count must be >= 0");
  make_run_dir(out_dir);

  vcdi::SynthParams params;
  params.duration_steps = duration;
  json files = json::array();
  for (int i = 0; i < count; ++i) {
    const std::uint64_t file_seed = seed + static_cast<std::uint64_t>(i);
    const vcdi::Scenario s =
        vcdi::generate_synthetic_scenario(kind, file_seed, params);
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%03d.json", kind_name.c_str(), i);
    vcdi::save_scenario(out_dir + "/" + name, s);
    files.push_back(
        {{"file", name}, {"seed", file_seed}, {"scenario_id", s.scenario_id}});
  }
  write_run_manifest(out_dir, cfg,
                     {{"command", "synth"},
                      {"kind", kind_name},
                      {"count", count},
                      {"duration_steps", duration},
                      {"seed", seed},
                      {"files", files}});
  std::cout << "wrote " << count << " scenario file(s) to " << out_dir
            << "\n";
  return 0;
}

int cmd_train(const vcdi::EngineConfig& cfg, const std::string& data_dir,
              const std::string& out_dir) {
  const std::vector<vcdi::Frame> frames = load_frames(data_dir);
  const vcdi::TrainResult result = vcdi::train(frames, cfg);
  make_run_dir(out_dir);
  const vcdi::Checkpoint ck = vcdi::make_train_checkpoint(result, cfg);
  vcdi::save_checkpoint(out_dir + "/checkpoint.bin", ck);
  write_text(out_dir + "/train_log.csv",
             vcdi::format_train_log(result.trace));

  char final_loss[64] = "";
  if (!result.trace.empty()) {
    std::snprintf(final_loss, sizeof(final_loss), "%.17g",
                  result.trace.back().loss.total);
  }
  write_run_manifest(
      out_dir, cfg,
      {{"command", "train"},
       {"seed", cfg.seed},
       {"steps", cfg.training.steps},
       {"frames", frames.size()},
       {"final_total_loss", final_loss},
       {"checkpoint", "checkpoint.bin"},
       {"log", "train_log.csv"}});
  std::cout << "trained " << cfg.training.steps << " step(s) on "
            << frames.size() << " frame(s); checkpoint at " << out_dir
            << "/checkpoint.bin\n";
  return 0;
}

int cmd_eval(const vcdi::EngineConfig& cfg, const std::string& ckpt_path,
             const std::string& data_dir, const std::string& out_dir) {
  const vcdi::Checkpoint ck = vcdi::load_checkpoint(ckpt_path);
  vcdi::ParamStore ps = params_for(ck, cfg);
  const std::vector<vcdi::Frame> frames = load_frames(data_dir);
  const vcdi::Metrics m = vcdi::evaluate_ade_fde(ps, frames, cfg);

  // The metrics report carries exactly the four displacement numbers.
  const json report = {{"ade", m.ade},
                       {"fde_1s", m.fde_1s},
                       {"fde_3s", m.fde_3s},
                       {"fde_5s", m.fde_5s}};
  std::cout << report.dump(2) << "\n";
  if (!out_dir.empty()) {
    make_run_dir(out_dir);
    write_text(out_dir + "/eval_report.json", report.dump(2) + "\n");
    write_run_manifest(out_dir, cfg,
                       {{"command", "eval"},
                        {"checkpoint_id", vcdi::checkpoint_digest(ckpt_path)},
                        {"seed", cfg.seed},
                        {"frames", m.n_frames},
                        {"agents", m.n_agents},
                        {"report", "eval_report.json"}});
  }
  return 0;
}

int cmd_simulate(vcdi::EngineConfig cfg, const std::string& ckpt_path,
                 const std::string& scenario_path, const std::string& key_path,
                 int duration, std::uint64_t seed, const std::string& out_dir,
                 bool single_shot, bool sample_modes) {
  if (duration >= 0) cfg.sim.duration_steps = duration;
  const vcdi::Scenario scenario = vcdi::load_scenario(scenario_path);
  const vcdi::CostWeights key =
      parse_key(parse_json_file(key_path), key_path);
  const vcdi::Checkpoint ck = vcdi::load_checkpoint(ckpt_path);
  vcdi::ParamStore ps = params_for(ck, cfg);

  vcdi::SimOptions opts;
  opts.single_shot = single_shot;
  opts.sample_modes = sample_modes;
  opts.seed = seed;
  opts.checkpoint_id = vcdi::checkpoint_digest(ckpt_path);
  const vcdi::SimulationTrace trace =
      vcdi::rollout(scenario, ps, key, cfg, opts);

  make_run_dir(out_dir);
  vcdi::export_trace(trace, scenario, out_dir);
  write_run_manifest(out_dir, cfg,
                     {{"command", "simulate"},
                      {"scenario_id", scenario.scenario_id},
                      {"checkpoint_id", opts.checkpoint_id},
                      {"seed", seed},
                      {"duration_steps", cfg.sim.duration_steps},
                      {"mode", trace.closed_loop ? "closed_loop"
                                                 : "single_shot"},
                      {"key", key_to_json(key)}});
  std::cout << "simulated " << trace.steps.size() - 1 << " step(s), "
            << trace.replans.size() << " replan(s); trace under " << out_dir
            << "\n";
  return 0;
}

int cmd_sweep(const vcdi::EngineConfig& cfg, const std::string& ckpt_path,
              const std::string& scenario_path, const std::string& dist_path,
              const std::string& keys_path, int n_keys, std::uint64_t seed,
              const std::string& out_dir, bool single_shot) {
  const vcdi::Scenario scenario = vcdi::load_scenario(scenario_path);
  const vcdi::Checkpoint ck = vcdi::load_checkpoint(ckpt_path);
  vcdi::ParamStore ps;
  vcdi::init_model_params(ps, cfg.model, cfg.seed);
  vcdi::DistributionalCostWeights dist;
  if (!dist_path.empty()) {
    vcdi::load_into_store(ck, ps);
    dist = load_dist_file(dist_path);
  } else {
    // Without --dist the key distribution travels inside the checkpoint.
    vcdi::load_train_state(ck, ps, dist);
  }

  std::vector<vcdi::CostWeights> keys;
  if (!keys_path.empty()) {
    const json j = parse_json_file(keys_path);
    if (!j.is_array()) {
      throw vcdi::ValidationError(keys_path + ": expected an array of keys");
    }
    for (std::size_t i = 0; i < j.size(); ++i) {
      keys.push_back(parse_key(
          j.at(i), keys_path + "[" + std::to_string(i) + "]"));
    }
  } else {
    if (n_keys < 2) {
      throw vcdi::ValidationError("sweep needs at least two keys");
    }
    for (int i = 0; i < n_keys; ++i) {
      keys.push_back(vcdi::sample_key(
          dist, seed ^ (0x9e3779b97f4a7c15ULL *
                        static_cast<std::uint64_t>(i + 1))));
    }
  }

  vcdi::SimOptions opts;
  opts.single_shot = single_shot;
  opts.seed = seed;
  opts.checkpoint_id = vcdi::checkpoint_digest(ckpt_path);
  const vcdi::DivergenceReport rep =
      vcdi::diversity_sweep(scenario, ps, keys, cfg, opts);
  const std::string text = vcdi::format_divergence_report(rep);

  make_run_dir(out_dir);
  write_text(out_dir + "/sweep_report.txt", text);
  json pairs = json::array();
  for (const vcdi::KeyPairDivergence& p : rep.pairs) {
    json agents = json::array();
    for (const vcdi::AgentDivergence& d : p.agents) {
      agents.push_back({{"agent_id", d.agent_id},
                        {"mean", d.mean_displacement},
                        {"max", d.max_displacement}});
    }
    pairs.push_back({{"key_a", p.key_a},
                     {"key_b", p.key_b},
                     {"mean_over_agents", p.mean_over_agents},
                     {"agents", agents}});
  }
  json keys_json = json::array();
  for (const vcdi::CostWeights& k : keys) keys_json.push_back(key_to_json(k));
  write_text(out_dir + "/divergence.json",
             json({{"scenario_id", rep.scenario_id},
                   {"keys", keys_json},
                   {"vut_progress", rep.vut_progress},
                   {"pairs", pairs}})
                     .dump(2) +
                 "\n");
  write_run_manifest(out_dir, cfg,
                     {{"command", "sweep"},
                      {"scenario_id", scenario.scenario_id},
                      {"checkpoint_id", opts.checkpoint_id},
                      {"seed", seed},
                      {"n_keys", keys.size()},
                      {"report", "sweep_report.txt"}});
  std::cout << text;
  return 0;
}

int cmd_gradcheck(const vcdi::EngineConfig& cfg, const std::string& out_dir) {
  // One synthetic frame at the configured dims, planned under a unit key, is
  // enough graph to touch every registered parameter.
  vcdi::SynthParams params;
  params.duration_steps = 80;
  const vcdi::Scenario scenario = vcdi::generate_synthetic_scenario(
      vcdi::SynthKind::kIntersection, cfg.seed, params);
  const std::vector<vcdi::Frame> frames = vcdi::slice_frames(scenario);
  if (frames.empty()) {
    throw vcdi::ValidationError("gradcheck: synthetic scenario too short");
  }
  const vcdi::Frame frame = vcdi::to_local_frame(frames.front());
  vcdi::FramePlan aux;
  aux.key.w.fill(1.0);
  aux.planned =
      vcdi::plan_vut_trajectory(frame, aux.key, cfg.planner, cfg.model);

  vcdi::ParamStore ps;
  vcdi::init_model_params(ps, cfg.model, cfg.seed);
  const vcdi::GradReport report = vcdi::grad_check(
      ps, [&](vcdi::Tape& t, vcdi::ParamStore& store) {
        return vcdi::composite_loss_graph(t, store, frame, aux, cfg).total;
      });

  std::cout << report.summary();
  if (!out_dir.empty()) {
    make_run_dir(out_dir);
    write_text(out_dir + "/gradcheck.txt", report.summary());
    write_run_manifest(out_dir, cfg,
                       {{"command", "gradcheck"},
                        {"seed", cfg.seed},
                        {"coords_checked", report.coords_checked},
                        {"worst_rel_error", report.worst_rel_error},
                        {"pass", report.pass}});
  }
  if (!report.pass) {
    std::cerr << "vcdi: error: runtime: gradient check failed (worst "
                 "relative error "
              << report.worst_rel_error << ")\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "vcdi: conditional background-traffic inference around a "
      "vehicle-under-test (synthesis, training, evaluation, simulation)"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path,
                 "engine config file (JSON with comments); defaults apply "
                 "when omitted");

  // synth
  auto* synth = app.add_subcommand("synth", "generate synthetic scenarios");
  std::string synth_kind = "intersection";
  int synth_count = 1;
  std::size_t synth_duration = 200;
  std::uint64_t synth_seed = 0;
  bool synth_seed_set = false;
  std::string synth_out;
  synth->add_option("--kind", synth_kind,
                    "car_following or intersection");
  synth->add_option("--count", synth_count, "number of scenario files");
  synth->add_option("--duration", synth_duration, "steps per scenario");
  synth->add_option("--seed", synth_seed, "base seed (default: config seed)")
      ->each([&](const std::string&) { synth_seed_set = true; });
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train the inference model");
  std::string train_data, train_out, train_ablation;
  int train_steps = -1;
  train->add_option("--data", train_data, "directory of scenario files")
      ->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--ablation", train_ablation,
                    "full, single_valued, or no_augment");
  train->add_option("--steps", train_steps, "override training step count");

  // eval
  auto* eval = app.add_subcommand("eval", "report ADE/FDE metrics");
  std::string eval_ckpt, eval_data, eval_out, eval_ablation;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "directory of scenario files")
      ->required();
  eval->add_option("--out", eval_out, "optional output directory");
  eval->add_option("--ablation", eval_ablation,
                   "ablation the checkpoint was trained with");

  // simulate
  auto* simulate =
      app.add_subcommand("simulate", "closed-loop rollout of one scenario");
  std::string sim_ckpt, sim_scenario, sim_key, sim_out, sim_ablation;
  int sim_duration = -1;
  std::uint64_t sim_seed = 0;
  bool sim_seed_set = false;
  bool sim_single_shot = false;
  bool sim_sample_modes = false;
  simulate->add_option("--checkpoint", sim_ckpt, "checkpoint file")
      ->required();
  simulate->add_option("--scenario", sim_scenario, "scenario file")
      ->required();
  simulate->add_option("--key", sim_key, "cost-key JSON file")->required();
  simulate->add_option("--duration", sim_duration,
                       "steps to roll (default: config)");
  simulate->add_option("--seed", sim_seed, "seed (default: config seed)")
      ->each([&](const std::string&) { sim_seed_set = true; });
  simulate->add_option("--out", sim_out, "output directory")->required();
  simulate->add_option("--ablation", sim_ablation,
                       "ablation the checkpoint was trained with");
  simulate->add_flag("--single-shot", sim_single_shot,
                     "one inference pass at t=0, no replanning");
  simulate->add_flag("--sample-modes", sim_sample_modes,
                     "sample agent modes by score instead of most-likely");

  // sweep
  auto* sweep =
      app.add_subcommand("sweep", "divergence across cost keys");
  std::string sweep_ckpt, sweep_scenario, sweep_dist, sweep_keys, sweep_out,
      sweep_ablation;
  int sweep_n_keys = 0;
  std::uint64_t sweep_seed = 0;
  bool sweep_seed_set = false;
  bool sweep_single_shot = false;
  sweep->add_option("--checkpoint", sweep_ckpt, "checkpoint file")
      ->required();
  sweep->add_option("--scenario", sweep_scenario, "scenario file")
      ->required();
  sweep->add_option("--dist", sweep_dist,
                    "weight-distribution JSON (default: from checkpoint)");
  sweep->add_option("--keys", sweep_keys, "JSON array of explicit keys");
  sweep->add_option("--n-keys", sweep_n_keys,
                    "number of keys to sample from the distribution");
  sweep->add_option("--seed", sweep_seed, "seed (default: config seed)")
      ->each([&](const std::string&) { sweep_seed_set = true; });
  sweep->add_option("--out", sweep_out, "output directory")->required();
  sweep->add_option("--ablation", sweep_ablation,
                    "ablation the checkpoint was trained with");
  sweep->add_flag("--single-shot", sweep_single_shot,
                  "single inference pass rollouts");

  // gradcheck
  auto* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference check of the composite loss gradient");
  std::string gc_out;
  gradcheck->add_option("--out", gc_out, "optional output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "vcdi: error: validation: " << e.what() << "\n";
    return 1;
  }

  try {
    vcdi::EngineConfig cfg;
    if (!config_path.empty()) cfg = vcdi::load_engine_config(config_path);
    vcdi::validate_config(cfg);

    if (app.got_subcommand(synth)) {
      return cmd_synth(cfg, synth_kind, synth_count, synth_duration,
                       synth_seed_set ? synth_seed : cfg.seed, synth_out);
    }
    if (app.got_subcommand(train)) {
      apply_ablation_flag(cfg, train_ablation);
      if (train_steps >= 0) cfg.training.steps = train_steps;
      vcdi::validate_config(cfg);
      return cmd_train(cfg, train_data, train_out);
    }
    if (app.got_subcommand(eval)) {
      apply_ablation_flag(cfg, eval_ablation);
      return cmd_eval(cfg, eval_ckpt, eval_data, eval_out);
    }
    if (app.got_subcommand(simulate)) {
      apply_ablation_flag(cfg, sim_ablation);
      return cmd_simulate(cfg, sim_ckpt, sim_scenario, sim_key, sim_duration,
                          sim_seed_set ? sim_seed : cfg.seed, sim_out,
                          sim_single_shot, sim_sample_modes);
    }
    if (app.got_subcommand(sweep)) {
      apply_ablation_flag(cfg, sweep_ablation);
      return cmd_sweep(cfg, sweep_ckpt, sweep_scenario, sweep_dist,
                       sweep_keys, sweep_n_keys,
                       sweep_seed_set ? sweep_seed : cfg.seed, sweep_out,
                       sweep_single_shot);
    }
    if (app.got_subcommand(gradcheck)) {
      return cmd_gradcheck(cfg, gc_out);
    }
    throw vcdi::ValidationError("no subcommand given");
  } catch (const vcdi::ValidationError& e) {
    std::cerr << "vcdi: error: validation: " << e.what() << "\n";
    return 1;
  } catch (const vcdi::EngineError& e) {
    std::cerr << "vcdi: error: runtime: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "vcdi: error: runtime: " << e.what() << "\n";
    return 2;
  }
}

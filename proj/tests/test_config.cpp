#include <fstream>
#include <sstream>

#include "test_support.hpp"
#include "vcdi/config.hpp"
#include "vcdi/errors.hpp"

using vcdi::Ablation;
using vcdi::EngineConfig;

TEST_CASE("empty config yields all defaults") {
  const EngineConfig cfg = vcdi::parse_engine_config_text("{}");
  CHECK(cfg.model.d_model == 64);
  CHECK(cfg.model.k_modes == 3);
  CHECK(cfg.model.l_lanes == 4);
  CHECK(cfg.model.w_waypoints == 30);
  CHECK(cfg.model.c_crosswalks == 2);
  CHECK(cfg.model.p_points == 8);
  CHECK(cfg.model.n_heads == 4);
  CHECK(cfg.model.ff_dim == 128);
  CHECK(cfg.model.n_layers == 2);
  CHECK(cfg.training.lambda_prediction == 1.0);
  CHECK(cfg.training.lambda_score == 0.2);
  CHECK(cfg.training.lambda_imitation == 1.0);
  CHECK(cfg.training.lambda_planning == 0.01);
  CHECK(cfg.training.momentum == 0.9);
  CHECK(cfg.training.batch_size == 4);
  CHECK(cfg.training.fit_interval == 50);
  CHECK(cfg.training.ablation == Ablation::kFull);
  CHECK(cfg.planner.n_speeds == 7);
  CHECK(cfg.planner.n_lateral == 3);
  CHECK(cfg.planner.max_lateral_offset == 0.5);
  CHECK(cfg.planner.refine_steps == 20);
  CHECK(cfg.planner.refine_lr == 0.05);
  CHECK(cfg.sim.replan_interval == 10);
  CHECK(cfg.sim.v_max == 30.0);
  CHECK(cfg.seed == 7);
  CHECK_NOTHROW(vcdi::validate_config(cfg));
}

TEST_CASE("partial override keeps the rest defaulted") {
  const EngineConfig cfg = vcdi::parse_engine_config_text(
      R"({"model": {"d_model": 32, "n_heads": 2}, "seed": 99})");
  CHECK(cfg.model.d_model == 32);
  CHECK(cfg.model.n_heads == 2);
  CHECK(cfg.model.k_modes == 3);
  CHECK(cfg.seed == 99);
  CHECK(cfg.training.steps == 2000);
}

TEST_CASE("unknown keys are rejected with their full path") {
  using vcdi::ConfigError;
  CHECK_THROWS_WITH_AS(vcdi::parse_engine_config_text(R"({"modle": {}})"),
                       doctest::Contains("modle"), ConfigError);
  CHECK_THROWS_WITH_AS(
      vcdi::parse_engine_config_text(R"({"training": {"lr": 0.1}})"),
      doctest::Contains("training.lr"), ConfigError);
  CHECK_THROWS_WITH_AS(
      vcdi::parse_engine_config_text(R"({"planner": {"speeds": 5}})"),
      doctest::Contains("planner.speeds"), ConfigError);
}

TEST_CASE("range violations name the field") {
  using vcdi::ConfigError;
  CHECK_THROWS_WITH_AS(
      vcdi::parse_engine_config_text(R"({"model": {"d_model": 4}})"),
      doctest::Contains("model.d_model"), ConfigError);
  CHECK_THROWS_WITH_AS(
      vcdi::parse_engine_config_text(R"({"model": {"d_model": 30}})"),
      doctest::Contains("divisible"), ConfigError);
  CHECK_THROWS_WITH_AS(
      vcdi::parse_engine_config_text(
          R"({"training": {"learning_rate": -0.5}})"),
      doctest::Contains("training.learning_rate"), ConfigError);
  CHECK_THROWS_WITH_AS(
      vcdi::parse_engine_config_text(R"({"planner": {"n_lateral": 2}})"),
      doctest::Contains("n_lateral"), ConfigError);
  CHECK_THROWS_AS(
      vcdi::parse_engine_config_text(R"({"sim": {"replan_interval": 0}})"),
      ConfigError);
  // All-zero lambdas leave nothing to optimize.
  CHECK_THROWS_AS(vcdi::parse_engine_config_text(
                      R"({"training": {"lambda_prediction": 0.0,
                          "lambda_score": 0.0, "lambda_imitation": 0.0,
                          "lambda_planning": 0.0}})"),
                  ConfigError);
  // Type errors.
  CHECK_THROWS_AS(
      vcdi::parse_engine_config_text(R"({"model": {"d_model": 64.5}})"),
      ConfigError);
  CHECK_THROWS_AS(vcdi::parse_engine_config_text(R"({"seed": -3})"),
                  ConfigError);
  CHECK_THROWS_AS(
      vcdi::parse_engine_config_text(R"({"training": {"ablation": "both"}})"),
      ConfigError);
  CHECK_THROWS_AS(vcdi::parse_engine_config_text("not json"), ConfigError);
}

TEST_CASE("comments are tolerated and the shipped example parses clean") {
  const EngineConfig inline_cfg = vcdi::parse_engine_config_text(
      "// leading comment\n{\n  \"seed\": 5 // trailing\n}\n");
  CHECK(inline_cfg.seed == 5);

  std::ifstream in(std::string(VCDI_SOURCE_DIR) + "/configs/desk.json",
                   std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  const EngineConfig cfg = vcdi::parse_engine_config_text(ss.str());
  // The example documents the defaults; parsing it must reproduce them.
  const EngineConfig defaults = vcdi::parse_engine_config_text("{}");
  CHECK(vcdi::canonical_config_string(cfg) ==
        vcdi::canonical_config_string(defaults));
}

TEST_CASE("config hash is stable and sensitive to every block") {
  const EngineConfig base = vcdi::parse_engine_config_text("{}");
  const std::uint64_t h0 = vcdi::config_hash(base);
  CHECK(h0 == vcdi::config_hash(vcdi::parse_engine_config_text("{}")));

  const char* variants[] = {
      R"({"model": {"k_modes": 4}})",
      R"({"training": {"learning_rate": 0.01}})",
      R"({"planner": {"refine_steps": 5}})",
      R"({"sim": {"duration_steps": 50}})",
      R"({"seed": 8})",
      R"({"training": {"ablation": "no_augment"}})",
  };
  for (const char* v : variants) {
    INFO(v);
    CHECK(vcdi::config_hash(vcdi::parse_engine_config_text(v)) != h0);
  }
}

TEST_CASE("ablation names round-trip") {
  for (Ablation a : {Ablation::kFull, Ablation::kSingleValued,
                     Ablation::kNoAugment}) {
    CHECK(vcdi::ablation_from_string(vcdi::to_string(a)) == a);
  }
}

TEST_CASE("validate_config rejects hand-built out-of-range configs") {
  EngineConfig cfg;
  cfg.model.n_heads = 5;  // 64 % 5 != 0
  CHECK_THROWS_AS(vcdi::validate_config(cfg), vcdi::ConfigError);
  cfg = EngineConfig{};
  cfg.planner.refine_lr = 0.0;
  CHECK_THROWS_AS(vcdi::validate_config(cfg), vcdi::ConfigError);
  cfg = EngineConfig{};
  cfg.sim.v_max = 100.0;
  CHECK_THROWS_AS(vcdi::validate_config(cfg), vcdi::ConfigError);
}

#include <doctest.h>

#include <fstream>

#include "octpair/config.hpp"

using namespace octpair;

TEST_SUITE("config") {

TEST_CASE("resolved config round-trips through its JSON echo") {
  PipelineConfig cfg = toy_config();
  nlohmann::json echo = to_json(cfg);
  PipelineConfig rebuilt = default_config();
  apply_json_overrides(rebuilt, echo);
  CHECK(to_json(rebuilt) == echo);
  CHECK(config_hash(rebuilt) == config_hash(cfg));
}

TEST_CASE("unknown keys are rejected at any depth") {
  PipelineConfig cfg;
  CHECK_THROWS_AS(apply_json_overrides(cfg, {{"sede", 1}}), ConfigError);
  CHECK_THROWS_AS(apply_json_overrides(cfg, {{"train", {{"batchsize", 28}}}}),
                  ConfigError);
  CHECK_THROWS_AS(
      apply_json_overrides(cfg, {{"simulate", {{"scene", {{"min_layer", 3}}}}}}),
      ConfigError);
}

TEST_CASE("overrides apply on top of defaults") {
  PipelineConfig cfg;
  apply_json_overrides(cfg, {{"seed", 99},
                             {"train", {{"batch_size", 14}}},
                             {"preprocess", {{"window", 50}}}});
  CHECK(cfg.seed == 99);
  CHECK(cfg.train.batch_size == 14);
  CHECK(cfg.preprocess.window == 50);
  CHECK(cfg.train.temperature == doctest::Approx(0.1));  // untouched default
}

TEST_CASE("paper grid preset pins the experimental constants") {
  PipelineConfig cfg = paper_grid_config();
  CHECK(cfg.train.batch_size == 28);
  CHECK(cfg.train.temperature == doctest::Approx(0.1));
  CHECK(cfg.model.encoder.embed_dim == 512);
  CHECK(cfg.model.encoder.architecture == Architecture::resnet18_style);
  CHECK(cfg.train.pretrain_epochs == 100);
  CHECK(cfg.train.finetune_epochs == 100);
  CHECK(cfg.sweep.fractions == std::vector<double>{0.10, 0.20, 0.30, 0.60, 0.80, 1.00});
  CHECK(cfg.sweep.folds == 3);
}

TEST_CASE("toy preset switches to tiny_conv") {
  PipelineConfig cfg = toy_config();
  CHECK(cfg.model.encoder.architecture == Architecture::tiny_conv);
  int total = 0;
  for (auto [cls, count] : cfg.simulate.per_class_insertion_counts) total += count;
  CHECK(total == 12);
}

TEST_CASE("config hash is stable and sensitive") {
  PipelineConfig a;
  PipelineConfig b;
  CHECK(config_hash(a) == config_hash(b));
  b.seed += 1;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("load_config parses a file over a preset") {
  const auto dir = std::filesystem::temp_directory_path() / "octpair_tests";
  std::filesystem::create_directories(dir);
  const auto path = dir / "cfg.json";
  std::ofstream(path) << R"({"seed": 5, "train": {"finetune_epochs": 2}})";
  PipelineConfig cfg = load_config(path, ConfigPreset::toy);
  CHECK(cfg.seed == 5);
  CHECK(cfg.train.finetune_epochs == 2);
  CHECK(cfg.model.encoder.architecture == Architecture::tiny_conv);  // from preset
  CHECK_THROWS_AS(load_config(dir / "missing.json", ConfigPreset::none), ConfigError);
}

TEST_CASE("run config validation") {
  RunConfig run;
  run.label_fraction = 0.45;
  CHECK_THROWS_AS(validate(run), ConfigError);
  run.label_fraction = 0.6;
  run.batch_size = 1;
  CHECK_THROWS_AS(validate(run), ConfigError);
  run.batch_size = 28;
  CHECK_NOTHROW(validate(run));
}

}  // TEST_SUITE

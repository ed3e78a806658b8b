#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace std::string_literals;
namespace fs = std::filesystem;

namespace {

const char* cli_path() { return OCTPAIR_CLI_PATH; }

struct CmdResult {
  int exit_code;
  std::string output;
};

CmdResult run_cli(const std::string& args) {
  const fs::path log = fs::temp_directory_path() / "octpair_tests" / "cli_out.txt";
  fs::create_directories(log.parent_path());
  const std::string cmd = "\""s + cli_path() + "\" " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  int code = -1;
  if (WIFEXITED(status)) code = WEXITSTATUS(status);
  return {code, ss.str()};
}

fs::path temp_dir(const char* name) {
  fs::path dir = fs::temp_directory_path() / "octpair_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// tiny config for second-scale CLI runs
fs::path write_mini_config(const fs::path& dir) {
  const fs::path path = dir / "mini.json";
  std::ofstream out(path);
  out << R"({
  "seed": 21,
  "data_dir": ")" << dir.string() << R"(",
  "simulate": {
    "counts": {"beef": 3, "pork": 3, "turkey": 3},
    "a_scan_rate": 500.0,
    "insertion_velocity": 150.0,
    "depth_samples": 250,
    "scene": {"min_layers": 2, "max_layers": 3, "min_duration": 6.0,
              "max_duration": 8.0, "min_layer_thickness": 150,
              "max_layer_thickness": 400}
  },
  "preprocess": {"window": 25, "uncertainty_half_width": 1, "crop_w": 16, "crop_h": 16},
  "model": {"architecture": "tiny_conv", "embed_dim": 8},
  "train": {"batch_size": 16, "pretrain_epochs": 1, "finetune_epochs": 1,
            "learning_rate": 0.001},
  "sweep": {"folds": 3, "fractions": [1.0],
            "cells": [{"init": "scratch", "modality": "dual"},
                       {"init": "contrastive_checkpoint", "modality": "dual"}]}
})";
  return path;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with code 1") {
  CHECK(run_cli("definitely-not-a-command").exit_code == 1);
  CHECK(run_cli("evaluate").exit_code == 1);  // missing required --model
}

TEST_CASE("simulate/preprocess/sweep/report pipeline end to end") {
  const fs::path dir = temp_dir("cli_world");
  const fs::path cfg = write_mini_config(dir);

  // dry run prints a plan, writes nothing
  CmdResult dry = run_cli("simulate --config " + cfg.string() + " --dry-run");
  CHECK(dry.exit_code == 0);
  CHECK(dry.output.find("resolved config") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "dataset" / "manifest.json"));

  CmdResult sim = run_cli("simulate --config " + cfg.string());
  CHECK(sim.exit_code == 0);
  CHECK(sim.output.find("9 insertions") != std::string::npos);
  CHECK(fs::exists(dir / "dataset" / "manifest.json"));

  // rerun without --force fails and preserves data; with --force succeeds
  CmdResult again = run_cli("simulate --config " + cfg.string());
  CHECK(again.exit_code == 1);
  CHECK(fs::exists(dir / "dataset" / "manifest.json"));
  CHECK(run_cli("simulate --config " + cfg.string() + " --force").exit_code == 0);

  CmdResult pre = run_cli("preprocess --config " + cfg.string());
  CHECK(pre.exit_code == 0);
  CHECK(fs::exists(dir / "crops" / "crops.json"));
  CHECK(pre.output.find("labeled") != std::string::npos);

  // deterministic rerun produces an identical crop manifest
  std::stringstream first_manifest;
  first_manifest << std::ifstream(dir / "crops" / "crops.json").rdbuf();
  CHECK(run_cli("preprocess --config " + cfg.string() + " --force").exit_code == 0);
  std::stringstream second_manifest;
  second_manifest << std::ifstream(dir / "crops" / "crops.json").rdbuf();
  CHECK(first_manifest.str() == second_manifest.str());

  CmdResult sweep = run_cli("sweep --config " + cfg.string() + " --strict");
  CHECK(sweep.exit_code == 0);
  CHECK(fs::exists(dir / "runs" / "runs.csv"));
  CHECK(fs::exists(dir / "runs" / "table.md"));

  CmdResult report = run_cli("report --config " + cfg.string());
  CHECK(report.exit_code == 0);

  // evaluate a sweep-trained model? the sweep stores no classifier; train one
  CmdResult fine = run_cli("finetune --config " + cfg.string() +
                           " --fold 0 --init scratch --fraction 1.0");
  CHECK(fine.exit_code == 0);
  CHECK(fs::exists(dir / "runs" / "models" / "classifier_f0.ckpt"));
  CmdResult eval = run_cli("evaluate --config " + cfg.string() + " --model " +
                           (dir / "runs" / "models" / "classifier_f0.ckpt").string());
  CHECK(eval.exit_code == 0);
  CHECK(eval.output.find("weighted_f1") != std::string::npos);
}

TEST_CASE("missing inputs produce nonzero exits with messages") {
  const fs::path dir = temp_dir("cli_missing");
  const fs::path cfg = write_mini_config(dir);
  CmdResult pre = run_cli("preprocess --config " + cfg.string());
  CHECK(pre.exit_code == 2);  // no dataset yet
  CHECK_FALSE(pre.output.empty());
}

TEST_CASE("paper-grid dry run echoes the experimental constants") {
  CmdResult dry = run_cli("sweep --paper-grid --dry-run");
  CHECK(dry.exit_code == 0);
  CHECK(dry.output.find("\"batch_size\": 28") != std::string::npos);
  CHECK(dry.output.find("\"temperature\": 0.1") != std::string::npos);
  CHECK(dry.output.find("\"embed_dim\": 512") != std::string::npos);
}

}  // TEST_SUITE

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octpair/model.hpp"
#include "octpair/phantom.hpp"
#include "octpair/preprocess.hpp"
#include "octpair/train.hpp"

namespace octpair {

struct SweepCellGroup {
  InitMode init = InitMode::scratch;
  HeadMode modality = HeadMode::dual;
  std::optional<std::vector<double>> fractions;  // default: sweep.fractions
};

struct SweepPlanConfig {
  int folds = 3;
  std::vector<double> fractions = {0.10, 1.00};
  std::vector<SweepCellGroup> cells = {
      {InitMode::scratch, HeadMode::dual, std::nullopt},
      {InitMode::contrastive_checkpoint, HeadMode::dual, std::nullopt},
  };
  int workers = 1;
};

struct ModelConfig {
  EncoderConfig encoder;
  std::string generic_weights_path;
};

// One resolved configuration drives every command; all randomness derives
// from `seed`. `deterministic` forces single-worker sweeps; cell results are
// seed-determined either way.
struct PipelineConfig {
  std::uint64_t seed = 17;
  bool deterministic = false;
  std::string data_dir;  // default data root; env OCTPAIR_DATA_DIR when empty

  DatasetConfig simulate;
  PreprocessConfig preprocess;
  ModelConfig model;
  RunConfig train;  // init/modality/fraction fields are per-cell, set by sweep
  SweepPlanConfig sweep;
};

enum class ConfigPreset { none, toy, paper_grid };

PipelineConfig default_config();
// Minute-scale settings: tiny_conv, 12 insertions, small crops.
PipelineConfig toy_config();
// The full experimental grid: batch 28, tau 0.1, D 512, 100 epochs,
// fractions 10/20/30/60/80/100 percent, resnet18-style encoders.
PipelineConfig paper_grid_config();

// defaults (or preset) -> JSON file overrides. Unknown keys are rejected.
PipelineConfig load_config(const std::filesystem::path& path, ConfigPreset preset);
PipelineConfig make_config(ConfigPreset preset);
void apply_json_overrides(PipelineConfig& config, const nlohmann::json& doc);

// Fully resolved echo; round-trips through apply_json_overrides.
nlohmann::json to_json(const PipelineConfig& config);

// Stable 16-hex-digit digest of the resolved configuration.
std::string config_hash(const PipelineConfig& config);
std::string config_hash(const nlohmann::json& doc);

std::filesystem::path resolve_data_dir(const PipelineConfig& config);

}  // namespace octpair

#include "octpair/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>

namespace octpair {

PipelineConfig default_config() {
  PipelineConfig cfg;
  // desk-scale default: 1000 A-scans/s with the averaging window scaled from
  // the 91 kHz / 1000-column acquisition ratio; the full-rate setting stays
  // selectable through simulate.a_scan_rate and preprocess.window
  cfg.preprocess.window = 10;
  return cfg;
}

PipelineConfig toy_config() {
  PipelineConfig cfg = default_config();
  cfg.deterministic = true;  // the benchmark is the reproducibility fixture
  cfg.simulate.per_class_insertion_counts = {
      {TissueClass::beef, 4}, {TissueClass::pork, 4}, {TissueClass::turkey, 4}};
  cfg.simulate.base.depth_samples = 256;
  // two-layer scenes: a gelatin entry segment, then the meat until the end
  cfg.simulate.scene.min_layers = 2;
  cfg.simulate.scene.max_layers = 2;
  cfg.simulate.scene.min_duration = 60.0;
  cfg.simulate.scene.max_duration = 80.0;
  cfg.simulate.scene.min_layer_thickness = 800;
  cfg.simulate.scene.max_layer_thickness = 2000;
  // acquisition variability between insertions keeps the few-label task hard
  cfg.simulate.scene.min_intensity_gain = 0.6;
  cfg.simulate.scene.max_intensity_gain = 1.4;
  cfg.simulate.scene.min_phase_gain = 0.6;
  cfg.simulate.scene.max_phase_gain = 1.4;
  // compressed class spacing so per-insertion gains overlap adjacent classes
  cfg.simulate.tissue_params[TissueClass::gelatin].speckle.mean_reflectivity = 0.15;
  cfg.simulate.tissue_params[TissueClass::pork].speckle.mean_reflectivity = 0.25;
  cfg.simulate.tissue_params[TissueClass::beef].speckle.mean_reflectivity = 0.40;
  cfg.simulate.tissue_params[TissueClass::turkey].speckle.mean_reflectivity = 0.60;
  cfg.preprocess.window = 100;
  cfg.preprocess.uncertainty_half_width = 1;
  cfg.preprocess.crop_w = 32;
  cfg.preprocess.crop_h = 32;
  cfg.model.encoder.architecture = Architecture::tiny_conv;
  cfg.model.encoder.embed_dim = 64;
  cfg.train.batch_size = 28;
  cfg.train.pretrain_epochs = 20;
  cfg.train.finetune_epochs = 30;
  cfg.train.learning_rate = 5e-4;
  cfg.sweep.folds = 3;
  cfg.sweep.fractions = {0.10, 1.00};
  cfg.sweep.cells = {
      {InitMode::scratch, HeadMode::dual, std::nullopt},
      {InitMode::contrastive_checkpoint, HeadMode::dual, std::nullopt},
      {InitMode::contrastive_checkpoint, HeadMode::intensity_only,
       std::vector<double>{1.00}},
      {InitMode::contrastive_checkpoint, HeadMode::phase_only,
       std::vector<double>{1.00}},
  };
  return cfg;
}

PipelineConfig paper_grid_config() {
  PipelineConfig cfg = default_config();
  cfg.model.encoder.architecture = Architecture::resnet18_style;
  cfg.model.encoder.embed_dim = 512;
  cfg.train.batch_size = 28;
  cfg.train.pretrain_epochs = 100;
  cfg.train.finetune_epochs = 100;
  cfg.train.temperature = 0.1;
  cfg.train.learning_rate = 1e-4;
  cfg.sweep.folds = 3;
  cfg.sweep.fractions = {0.10, 0.20, 0.30, 0.60, 0.80, 1.00};
  cfg.sweep.cells = {
      {InitMode::scratch, HeadMode::dual, std::nullopt},
      {InitMode::generic_pretrained, HeadMode::dual, std::nullopt},
      {InitMode::contrastive_checkpoint, HeadMode::dual, std::nullopt},
      {InitMode::contrastive_checkpoint, HeadMode::intensity_only, std::nullopt},
      {InitMode::contrastive_checkpoint, HeadMode::phase_only, std::nullopt},
  };
  return cfg;
}

PipelineConfig make_config(ConfigPreset preset) {
  switch (preset) {
    case ConfigPreset::toy: return toy_config();
    case ConfigPreset::paper_grid: return paper_grid_config();
    case ConfigPreset::none: break;
  }
  return default_config();
}

namespace {

using nlohmann::json;

// Applies handler(key, value) to every member and rejects unknown keys.
void walk_object(const json& doc, const std::string& where,
                 const std::set<std::string>& known,
                 const std::function<void(const std::string&, const json&)>& handler) {
  if (!doc.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key))
      throw ConfigError("unknown key '" + key + "' in " + where);
    handler(key, value);
  }
}

void apply_speckle(SpeckleParams& p, const json& doc, const std::string& where) {
  walk_object(doc, where,
              {"mean_reflectivity", "grain_scale", "contrast"},
              [&](const std::string& key, const json& value) {
                if (key == "mean_reflectivity") p.mean_reflectivity = value.get<double>();
                else if (key == "grain_scale") p.grain_scale = value.get<double>();
                else p.contrast = value.get<double>();
              });
}

void apply_phase(PhaseParams& p, const json& doc, const std::string& where) {
  walk_object(doc, where, {"drift_rate", "jitter_amplitude"},
              [&](const std::string& key, const json& value) {
                if (key == "drift_rate") p.drift_rate = value.get<double>();
                else p.jitter_amplitude = value.get<double>();
              });
}

void apply_simulate(DatasetConfig& sim, const json& doc) {
  walk_object(doc, "simulate",
              {"counts", "insertion_velocity", "a_scan_rate", "depth_samples",
               "noise_floor", "attenuation_depth", "scene", "tissue_params"},
              [&](const std::string& key, const json& value) {
    if (key == "counts") {
      sim.per_class_insertion_counts.clear();
      walk_object(value, "simulate.counts", {"beef", "pork", "turkey"},
                  [&](const std::string& cls, const json& count) {
                    sim.per_class_insertion_counts[tissue_from_string_or_throw(cls)] =
                        count.get<int>();
                  });
    } else if (key == "insertion_velocity") {
      sim.base.insertion_velocity = value.get<double>();
    } else if (key == "a_scan_rate") {
      sim.base.a_scan_rate = value.get<double>();
    } else if (key == "depth_samples") {
      sim.base.depth_samples = value.get<int>();
    } else if (key == "noise_floor") {
      sim.base.noise_floor = value.get<double>();
    } else if (key == "attenuation_depth") {
      sim.base.attenuation_depth = value.get<double>();
    } else if (key == "scene") {
      walk_object(value, "simulate.scene",
                  {"min_layers", "max_layers", "min_duration", "max_duration",
                   "min_layer_thickness", "max_layer_thickness", "min_intensity_gain",
                   "max_intensity_gain", "min_phase_gain", "max_phase_gain"},
                  [&](const std::string& k, const json& v) {
                    if (k == "min_layers") sim.scene.min_layers = v.get<int>();
                    else if (k == "max_layers") sim.scene.max_layers = v.get<int>();
                    else if (k == "min_duration") sim.scene.min_duration = v.get<double>();
                    else if (k == "max_duration") sim.scene.max_duration = v.get<double>();
                    else if (k == "min_layer_thickness")
                      sim.scene.min_layer_thickness = v.get<int>();
                    else if (k == "max_layer_thickness")
                      sim.scene.max_layer_thickness = v.get<int>();
                    else if (k == "min_intensity_gain")
                      sim.scene.min_intensity_gain = v.get<double>();
                    else if (k == "max_intensity_gain")
                      sim.scene.max_intensity_gain = v.get<double>();
                    else if (k == "min_phase_gain")
                      sim.scene.min_phase_gain = v.get<double>();
                    else sim.scene.max_phase_gain = v.get<double>();
                  });
    } else {  // tissue_params
      walk_object(value, "simulate.tissue_params",
                  {"gelatin", "pork", "beef", "turkey"},
                  [&](const std::string& cls, const json& stats) {
        TissueStats& entry = sim.tissue_params[tissue_from_string_or_throw(cls)];
        walk_object(stats, "simulate.tissue_params." + cls,
                    {"speckle", "phase"},
                    [&](const std::string& k, const json& v) {
                      if (k == "speckle")
                        apply_speckle(entry.speckle, v, "simulate.tissue_params." + cls + ".speckle");
                      else
                        apply_phase(entry.phase, v, "simulate.tissue_params." + cls + ".phase");
                    });
      });
    }
  });
}

void apply_preprocess(PreprocessConfig& pre, const json& doc) {
  walk_object(doc, "preprocess",
              {"window", "uncertainty_half_width", "depth_lo", "depth_hi", "crop_w",
               "crop_h"},
              [&](const std::string& key, const json& value) {
                if (key == "window") pre.window = value.get<long>();
                else if (key == "uncertainty_half_width")
                  pre.uncertainty_half_width = value.get<int>();
                else if (key == "depth_lo") pre.depth_lo = value.get<long>();
                else if (key == "depth_hi") pre.depth_hi = value.get<long>();
                else if (key == "crop_w") pre.crop_w = value.get<long>();
                else pre.crop_h = value.get<long>();
              });
}

void apply_model(ModelConfig& model, const json& doc) {
  walk_object(doc, "model", {"architecture", "embed_dim", "generic_weights_path"},
              [&](const std::string& key, const json& value) {
                if (key == "architecture")
                  model.encoder.architecture =
                      architecture_from_string(value.get<std::string>());
                else if (key == "embed_dim") model.encoder.embed_dim = value.get<int>();
                else model.generic_weights_path = value.get<std::string>();
              });
}

void apply_train(RunConfig& train, const json& doc) {
  walk_object(doc, "train",
              {"batch_size", "pretrain_epochs", "finetune_epochs", "learning_rate",
               "temperature", "symmetric_contrastive"},
              [&](const std::string& key, const json& value) {
                if (key == "batch_size") train.batch_size = value.get<int>();
                else if (key == "pretrain_epochs") train.pretrain_epochs = value.get<int>();
                else if (key == "finetune_epochs") train.finetune_epochs = value.get<int>();
                else if (key == "learning_rate") train.learning_rate = value.get<double>();
                else if (key == "temperature") train.temperature = value.get<double>();
                else train.symmetric_contrastive = value.get<bool>();
              });
}

void apply_sweep(SweepPlanConfig& sweep, const json& doc) {
  walk_object(doc, "sweep", {"folds", "fractions", "workers", "cells"},
              [&](const std::string& key, const json& value) {
    if (key == "folds") {
      sweep.folds = value.get<int>();
    } else if (key == "fractions") {
      sweep.fractions = value.get<std::vector<double>>();
    } else if (key == "workers") {
      sweep.workers = value.get<int>();
    } else {
      sweep.cells.clear();
      for (const auto& cell : value) {
        SweepCellGroup group;
        walk_object(cell, "sweep.cells[]", {"init", "modality", "fractions"},
                    [&](const std::string& k, const json& v) {
                      if (k == "init")
                        group.init = init_mode_from_string(v.get<std::string>());
                      else if (k == "modality")
                        group.modality = head_mode_from_string(v.get<std::string>());
                      else group.fractions = v.get<std::vector<double>>();
                    });
        sweep.cells.push_back(std::move(group));
      }
    }
  });
}

}  // namespace

void apply_json_overrides(PipelineConfig& config, const nlohmann::json& doc) {
  walk_object(doc, "config",
              {"seed", "deterministic", "data_dir", "simulate", "preprocess", "model",
               "train", "sweep"},
              [&](const std::string& key, const json& value) {
                if (key == "seed") config.seed = value.get<std::uint64_t>();
                else if (key == "deterministic") config.deterministic = value.get<bool>();
                else if (key == "data_dir") config.data_dir = value.get<std::string>();
                else if (key == "simulate") apply_simulate(config.simulate, value);
                else if (key == "preprocess") apply_preprocess(config.preprocess, value);
                else if (key == "model") apply_model(config.model, value);
                else if (key == "train") apply_train(config.train, value);
                else apply_sweep(config.sweep, value);
              });
}

PipelineConfig load_config(const std::filesystem::path& path, ConfigPreset preset) {
  PipelineConfig config = make_config(preset);
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("malformed JSON in " + path.string());
  apply_json_overrides(config, doc);
  return config;
}

nlohmann::json to_json(const PipelineConfig& config) {
  json tissue;
  for (const auto& [cls, stats] : config.simulate.tissue_params)
    tissue[std::string(to_string(cls))] = {
        {"speckle",
         {{"mean_reflectivity", stats.speckle.mean_reflectivity},
          {"grain_scale", stats.speckle.grain_scale},
          {"contrast", stats.speckle.contrast}}},
        {"phase",
         {{"drift_rate", stats.phase.drift_rate},
          {"jitter_amplitude", stats.phase.jitter_amplitude}}},
    };
  json counts;
  for (const auto& [cls, count] : config.simulate.per_class_insertion_counts)
    counts[std::string(to_string(cls))] = count;

  json cells = json::array();
  for (const SweepCellGroup& group : config.sweep.cells) {
    json cell = {{"init", std::string(to_string(group.init))},
                 {"modality", std::string(to_string(group.modality))}};
    if (group.fractions) cell["fractions"] = *group.fractions;
    cells.push_back(std::move(cell));
  }

  return json{
      {"seed", config.seed},
      {"deterministic", config.deterministic},
      {"data_dir", config.data_dir},
      {"simulate",
       {{"counts", counts},
        {"insertion_velocity", config.simulate.base.insertion_velocity},
        {"a_scan_rate", config.simulate.base.a_scan_rate},
        {"depth_samples", config.simulate.base.depth_samples},
        {"noise_floor", config.simulate.base.noise_floor},
        {"attenuation_depth", config.simulate.base.attenuation_depth},
        {"scene",
         {{"min_layers", config.simulate.scene.min_layers},
          {"max_layers", config.simulate.scene.max_layers},
          {"min_duration", config.simulate.scene.min_duration},
          {"max_duration", config.simulate.scene.max_duration},
          {"min_layer_thickness", config.simulate.scene.min_layer_thickness},
          {"max_layer_thickness", config.simulate.scene.max_layer_thickness},
          {"min_intensity_gain", config.simulate.scene.min_intensity_gain},
          {"max_intensity_gain", config.simulate.scene.max_intensity_gain},
          {"min_phase_gain", config.simulate.scene.min_phase_gain},
          {"max_phase_gain", config.simulate.scene.max_phase_gain}}},
        {"tissue_params", tissue}}},
      {"preprocess",
       {{"window", config.preprocess.window},
        {"uncertainty_half_width", config.preprocess.uncertainty_half_width},
        {"depth_lo", config.preprocess.depth_lo},
        {"depth_hi", config.preprocess.depth_hi},
        {"crop_w", config.preprocess.crop_w},
        {"crop_h", config.preprocess.crop_h}}},
      {"model",
       {{"architecture", std::string(to_string(config.model.encoder.architecture))},
        {"embed_dim", config.model.encoder.embed_dim},
        {"generic_weights_path", config.model.generic_weights_path}}},
      {"train",
       {{"batch_size", config.train.batch_size},
        {"pretrain_epochs", config.train.pretrain_epochs},
        {"finetune_epochs", config.train.finetune_epochs},
        {"learning_rate", config.train.learning_rate},
        {"temperature", config.train.temperature},
        {"symmetric_contrastive", config.train.symmetric_contrastive}}},
      {"sweep",
       {{"folds", config.sweep.folds},
        {"fractions", config.sweep.fractions},
        {"workers", config.sweep.workers},
        {"cells", cells}}},
  };
}

std::string config_hash(const nlohmann::json& doc) {
  // storage locations and execution-mode knobs (worker count, deterministic
  // scheduling) do not change the experiment; equal-seed runs must hash the
  // same wherever and however they execute
  nlohmann::json canon_doc = doc;
  canon_doc.erase("data_dir");
  canon_doc.erase("deterministic");
  if (canon_doc.contains("model")) canon_doc["model"].erase("generic_weights_path");
  if (canon_doc.contains("sweep")) canon_doc["sweep"].erase("workers");
  const std::string canon = canon_doc.dump();
  std::uint64_t h = hash_str(canon);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::string config_hash(const PipelineConfig& config) {
  return config_hash(to_json(config));
}

std::filesystem::path resolve_data_dir(const PipelineConfig& config) {
  if (!config.data_dir.empty()) return config.data_dir;
  if (const char* env = std::getenv("OCTPAIR_DATA_DIR")) return env;
  return "data";
}

}  // namespace octpair

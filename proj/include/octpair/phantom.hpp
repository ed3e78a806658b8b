#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "octpair/common.hpp"
#include "octpair/tissue.hpp"

namespace octpair {

struct SpeckleParams {
  double mean_reflectivity = 0.5;  // [0,1]
  double grain_scale = 1.0;        // texture cell size in samples, >= 1
  double contrast = 0.5;           // [0,1]
};

struct PhaseParams {
  double drift_rate = 0.1;        // radians per A-scan
  double jitter_amplitude = 0.1;  // radians (std of the per-scan jitter)
};

struct TissueLayerSpec {
  TissueClass tissue_class = TissueClass::gelatin;
  int thickness = 0;  // depth samples; kUnboundedThickness on the final layer
                      // marks a terminal layer of unlimited extent
  SpeckleParams speckle;
  PhaseParams phase;
};

inline constexpr int kUnboundedThickness = 0;

struct TissueStats {
  SpeckleParams speckle;
  PhaseParams phase;
};

// Default per-class signal statistics. The same table ships as
// configs/default_tissue_params.json (version-pinned); a test keeps the two
// in sync.
inline constexpr int kTissueParamTableVersion = 1;
SpeckleParams default_speckle_params(TissueClass c);
PhaseParams default_phase_params(TissueClass c);
std::map<TissueClass, TissueStats> default_tissue_params();
TissueLayerSpec make_layer(TissueClass c, int thickness);

struct InsertionConfig {
  std::vector<TissueLayerSpec> layer_sequence;
  double insertion_velocity = 120.0;  // depth samples advanced per second
  double a_scan_rate = 1000.0;        // A-scans per second
  double duration = 30.0;             // seconds
  int depth_samples = 300;            // post-crop A-scan length, >= 250
  double noise_floor = 0.01;          // additive noise std
  double attenuation_depth = 150.0;   // exponential decay constant in samples
  std::uint64_t seed = 0;

  long num_columns() const { return std::lround(a_scan_rate * duration); }
};

// Throws ConfigError if any invariant is violated.
void validate(const InsertionConfig& config);

struct BoundaryEvent {
  long index = 0;  // A-scan index at which the needle enters `entering`
  TissueClass entering = TissueClass::gelatin;
};

struct RawInsertionRecord {
  MatrixF intensity;  // depth_samples x T, values >= 0
  MatrixF phase;      // depth_samples x T, values in (-pi, pi]
  std::vector<BoundaryEvent> boundary_times;
  InsertionConfig config;
};

RawInsertionRecord generate_insertion(const InsertionConfig& config);

// Tissue class at the needle tip for A-scan index t, from cumulative layer
// thickness vs. needle depth. Also the ground-truth labeling rule.
TissueClass tissue_at(const InsertionConfig& config, long t);

// Scene randomization for dataset generation. Each insertion gets an
// alternating gelatin/meat stack with seeded thicknesses and duration; the
// final layer is terminal (unbounded). Per-insertion gain factors scale the
// reflectivity resp. phase motion of every layer, modelling acquisition
// variability between insertions.
struct SceneParams {
  int min_layers = 3;
  int max_layers = 5;
  double min_duration = 20.0;  // seconds
  double max_duration = 60.0;
  int min_layer_thickness = 600;  // depth samples
  int max_layer_thickness = 1500;
  double min_intensity_gain = 1.0;
  double max_intensity_gain = 1.0;
  double min_phase_gain = 1.0;
  double max_phase_gain = 1.0;
};

struct DatasetConfig {
  std::map<TissueClass, int> per_class_insertion_counts = {
      {TissueClass::beef, 34}, {TissueClass::pork, 14}, {TissueClass::turkey, 18}};
  InsertionConfig base;
  SceneParams scene;
  std::map<TissueClass, TissueStats> tissue_params = default_tissue_params();
  std::uint64_t master_seed = 0;
};

struct InsertionEntry {
  std::string id;
  std::string dir;  // relative to the manifest's directory
  TissueClass meat_class = TissueClass::beef;
  std::uint64_t seed = 0;
  long columns = 0;
  int depth_samples = 0;
  std::vector<BoundaryEvent> boundary_times;
};

struct DatasetManifest {
  int format_version = 1;
  std::uint64_t master_seed = 0;
  std::vector<InsertionEntry> insertions;
};

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr const char* kDatasetManifestName = "manifest.json";

// Builds the per-insertion config (scene + seed) that generate_dataset uses;
// exposed so callers can regenerate any single insertion deterministically.
InsertionConfig make_insertion_config(const DatasetConfig& config,
                                      TissueClass meat_class, int index);

DatasetManifest generate_dataset(const DatasetConfig& config,
                                 const std::filesystem::path& out_dir,
                                 bool force = false);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace octpair

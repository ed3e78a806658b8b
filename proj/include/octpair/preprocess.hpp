#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "octpair/common.hpp"
#include "octpair/phantom.hpp"
#include "octpair/tissue.hpp"

namespace octpair {

template <typename Scalar>
struct MScanT {
  Matrix<Scalar> data;  // height (depth) x width (time)
  Modality modality = Modality::intensity;
  std::string insertion_id;
  int columns_per_cell = 1;  // 1 raw, = averaging window after temporal_average
};

using MScan = MScanT<float>;

inline constexpr int kExcludedLabel = -1;

struct ColumnLabels {
  std::vector<int> labels;  // class index, or kExcludedLabel
  int uncertainty_half_width = 0;
};

template <typename Scalar>
struct CropPairT {
  Matrix<Scalar> intensity;  // crop_h x crop_w
  Matrix<Scalar> phase;      // identical (depth, time) region
  int time_window_index = 0;
  std::string insertion_id;
  std::optional<TissueClass> label;
};

using CropPair = CropPairT<float>;

// ---------------------------------------------------------------------------
// operations
// ---------------------------------------------------------------------------

template <typename Scalar>
MScanT<Scalar> assemble_mscan_from(const Matrix<Scalar>& columns, Modality modality,
                                   std::string insertion_id) {
  if (columns.rows() < 1 || columns.cols() < 1)
    throw ConfigError("M-scan needs at least one row and column");
  return MScanT<Scalar>{columns, modality, std::move(insertion_id), 1};
}

MScan assemble_mscan(const RawInsertionRecord& record, Modality modality,
                     std::string insertion_id = "");

// Block mean over the time axis. Intensity averages values directly; phase is
// averaged in its inter-column difference representation: the wrapped
// column-to-column difference per depth sample (the first column, having no
// predecessor, contributes zero). Output is stored unwrapped.
template <typename Scalar>
MScanT<Scalar> temporal_average(const MScanT<Scalar>& mscan, long window = 1000) {
  if (window < 1) throw ConfigError("averaging window must be >= 1");
  if (mscan.columns_per_cell != 1)
    throw ConfigError("temporal_average expects a raw (unaveraged) M-scan");
  const long width = mscan.data.cols();
  if (window > width)
    throw ConfigError("averaging window exceeds M-scan width (empty output)");

  const long out_width = width / window;
  MScanT<Scalar> out;
  out.modality = mscan.modality;
  out.insertion_id = mscan.insertion_id;
  out.columns_per_cell = static_cast<int>(window);
  out.data.resize(mscan.data.rows(), out_width);

  if (mscan.modality == Modality::intensity) {
    for (long k = 0; k < out_width; ++k)
      out.data.col(k) = mscan.data.middleCols(k * window, window).rowwise().mean();
    return out;
  }

  const Scalar pi = static_cast<Scalar>(kPi);
  const Scalar two_pi = static_cast<Scalar>(kTwoPi);
  Vector<Scalar> acc(mscan.data.rows());
  for (long k = 0; k < out_width; ++k) {
    acc.setZero();
    for (long t = k * window; t < (k + 1) * window; ++t) {
      if (t == 0) continue;  // defined-zero difference for the first column
      auto diff = (mscan.data.col(t) - mscan.data.col(t - 1)).array();
      acc.array() += (diff > pi).select(diff - two_pi,
                                        (diff <= -pi).select(diff + two_pi, diff));
    }
    out.data.col(k) = acc / static_cast<Scalar>(window);
  }
  return out;
}

template <typename Scalar>
MScanT<Scalar> spatial_crop(const MScanT<Scalar>& mscan, long depth_lo, long depth_hi) {
  if (depth_lo < 0 || depth_lo >= depth_hi || depth_hi > mscan.data.rows())
    throw ConfigError("spatial crop rows out of range");
  if (depth_hi - depth_lo < 250)
    throw ConfigError("spatial crop must keep at least 250 rows");
  MScanT<Scalar> out = mscan;
  out.data = mscan.data.middleRows(depth_lo, depth_hi - depth_lo);
  return out;
}

// Labels per averaged column: majority class of the raw indices the cell
// covers, EXCLUDED within uncertainty_half_width (averaged columns) of any
// boundary crossing.
ColumnLabels label_columns(const std::vector<BoundaryEvent>& boundary_times,
                           long raw_width, long window, int uncertainty_half_width);
ColumnLabels label_columns(const RawInsertionRecord& record, long window,
                           int uncertainty_half_width);

// Non-overlapping crop_w x crop_h windows tiling the time axis from column 0;
// a crop is labeled iff a single non-EXCLUDED class covers all its columns.
template <typename Scalar>
std::vector<CropPairT<Scalar>> extract_crops(const MScanT<Scalar>& intensity,
                                             const MScanT<Scalar>& phase,
                                             const ColumnLabels& labels,
                                             long crop_w = 256, long crop_h = 250) {
  if (intensity.modality != Modality::intensity || phase.modality != Modality::phase)
    throw ConfigError("extract_crops expects (intensity, phase) scans in that order");
  if (intensity.data.rows() != phase.data.rows() ||
      intensity.data.cols() != phase.data.cols())
    throw ConfigError("intensity/phase dimensions differ");
  if (crop_w < 1 || crop_h < 1) throw ConfigError("crop dims must be >= 1");
  if (intensity.data.rows() < crop_h)
    throw ConfigError("M-scan height below crop height");
  if (static_cast<long>(labels.labels.size()) != intensity.data.cols())
    throw ConfigError("label vector width does not match M-scan width");

  const long count = intensity.data.cols() / crop_w;
  std::vector<CropPairT<Scalar>> crops;
  crops.reserve(static_cast<std::size_t>(count));
  for (long k = 0; k < count; ++k) {
    CropPairT<Scalar> crop;
    crop.time_window_index = static_cast<int>(k);
    crop.insertion_id = intensity.insertion_id;
    crop.intensity = intensity.data.block(0, k * crop_w, crop_h, crop_w);
    crop.phase = phase.data.block(0, k * crop_w, crop_h, crop_w);

    int label = labels.labels[static_cast<std::size_t>(k * crop_w)];
    for (long c = k * crop_w; c < (k + 1) * crop_w; ++c)
      if (labels.labels[static_cast<std::size_t>(c)] != label) label = kExcludedLabel;
    if (label != kExcludedLabel) crop.label = static_cast<TissueClass>(label);
    crops.push_back(std::move(crop));
  }
  return crops;
}

// ---------------------------------------------------------------------------
// pipeline and crop store
// ---------------------------------------------------------------------------

struct PreprocessConfig {
  long window = 1000;
  int uncertainty_half_width = 2;
  long depth_lo = 0;
  long depth_hi = 0;  // 0 = full height
  long crop_w = 256;
  long crop_h = 250;
};

// record -> aligned labeled crop pairs (temporal average, spatial crop,
// column labeling, tiling). Pure function of its inputs.
std::vector<CropPair> preprocess_insertion(const RawInsertionRecord& record,
                                           const std::string& insertion_id,
                                           const PreprocessConfig& config);

struct CropEntry {
  std::string crop_id;
  std::string insertion_id;
  int time_window_index = 0;
  std::optional<TissueClass> label;
  std::string intensity_path;  // relative to the manifest's directory
  std::string phase_path;
};

struct CropManifest {
  int format_version = 1;
  std::vector<CropEntry> crops;
};

inline constexpr int kCropFormatVersion = 1;
inline constexpr const char* kCropManifestName = "crops.json";

void append_crops(CropManifest& manifest, const std::vector<CropPair>& crops,
                  const std::filesystem::path& store_dir);
void save_crop_manifest(const CropManifest& manifest, const std::filesystem::path& path);
CropManifest load_crop_manifest(const std::filesystem::path& path);
CropPair load_crop(const CropEntry& entry, const std::filesystem::path& store_dir);

// Full dataset pass: read every insertion of `dataset_dir`'s manifest,
// preprocess, persist crops under `out_dir`.
CropManifest preprocess_dataset(const std::filesystem::path& dataset_dir,
                                const PreprocessConfig& config,
                                const std::filesystem::path& out_dir,
                                bool force = false);

}  // namespace octpair

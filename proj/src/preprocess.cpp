#include "octpair/preprocess.hpp"

#include <algorithm>
#include <array>
#include <fstream>

#include <nlohmann/json.hpp>

#include "octpair/array_io.hpp"

namespace octpair {

MScan assemble_mscan(const RawInsertionRecord& record, Modality modality,
                     std::string insertion_id) {
  const MatrixF& src =
      modality == Modality::intensity ? record.intensity : record.phase;
  return assemble_mscan_from<float>(src, modality, std::move(insertion_id));
}

ColumnLabels label_columns(const std::vector<BoundaryEvent>& boundary_times,
                           long raw_width, long window, int uncertainty_half_width) {
  if (window < 1) throw ConfigError("window must be >= 1");
  if (uncertainty_half_width < 0) throw ConfigError("uncertainty_half_width must be >= 0");
  if (boundary_times.empty() || boundary_times.front().index != 0)
    throw ConfigError("boundary_times must start at index 0");

  const long n_avg = raw_width / window;
  ColumnLabels out;
  out.uncertainty_half_width = uncertainty_half_width;
  out.labels.assign(static_cast<std::size_t>(n_avg), kExcludedLabel);

  for (long k = 0; k < n_avg; ++k) {
    // majority class over the raw span [k*window, (k+1)*window)
    const long lo = k * window;
    const long hi = (k + 1) * window;
    std::array<long, kNumClasses> occupancy{};
    for (std::size_t b = 0; b < boundary_times.size(); ++b) {
      const long seg_lo = std::max(lo, boundary_times[b].index);
      const long seg_hi = b + 1 < boundary_times.size()
                              ? std::min(hi, boundary_times[b + 1].index)
                              : hi;
      if (seg_hi > seg_lo)
        occupancy[static_cast<std::size_t>(boundary_times[b].entering)] += seg_hi - seg_lo;
    }
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c)
      if (occupancy[static_cast<std::size_t>(c)] > occupancy[static_cast<std::size_t>(best)])
        best = c;
    out.labels[static_cast<std::size_t>(k)] = best;
  }

  for (std::size_t b = 1; b < boundary_times.size(); ++b) {
    const long cell = boundary_times[b].index / window;
    const long lo = std::max<long>(0, cell - uncertainty_half_width);
    const long hi = std::min<long>(n_avg - 1, cell + uncertainty_half_width);
    for (long k = lo; k <= hi; ++k)
      out.labels[static_cast<std::size_t>(k)] = kExcludedLabel;
  }
  return out;
}

ColumnLabels label_columns(const RawInsertionRecord& record, long window,
                           int uncertainty_half_width) {
  return label_columns(record.boundary_times, record.intensity.cols(), window,
                       uncertainty_half_width);
}

std::vector<CropPair> preprocess_insertion(const RawInsertionRecord& record,
                                           const std::string& insertion_id,
                                           const PreprocessConfig& config) {
  MScan mscan_int = assemble_mscan(record, Modality::intensity, insertion_id);
  MScan mscan_phs = assemble_mscan(record, Modality::phase, insertion_id);

  MScan avg_int = temporal_average(mscan_int, config.window);
  MScan avg_phs = temporal_average(mscan_phs, config.window);

  const long hi = config.depth_hi > 0 ? config.depth_hi : avg_int.data.rows();
  avg_int = spatial_crop(avg_int, config.depth_lo, hi);
  avg_phs = spatial_crop(avg_phs, config.depth_lo, hi);

  ColumnLabels labels =
      label_columns(record, config.window, config.uncertainty_half_width);
  return extract_crops(avg_int, avg_phs, labels, config.crop_w, config.crop_h);
}

// ---------------------------------------------------------------------------
// crop store
// ---------------------------------------------------------------------------

void append_crops(CropManifest& manifest, const std::vector<CropPair>& crops,
                  const std::filesystem::path& store_dir) {
  for (const CropPair& crop : crops) {
    CropEntry entry;
    entry.insertion_id = crop.insertion_id;
    entry.time_window_index = crop.time_window_index;
    entry.crop_id = crop.insertion_id + "_c" + std::to_string(crop.time_window_index);
    entry.label = crop.label;
    entry.intensity_path = crop.insertion_id + "/" + entry.crop_id + ".int.f32";
    entry.phase_path = crop.insertion_id + "/" + entry.crop_id + ".phs.f32";

    std::filesystem::create_directories(store_dir / crop.insertion_id);
    write_array(store_dir / entry.intensity_path, crop.intensity, "intensity");
    write_array(store_dir / entry.phase_path, crop.phase, "phase");
    manifest.crops.push_back(std::move(entry));
  }
}

void save_crop_manifest(const CropManifest& manifest, const std::filesystem::path& path) {
  nlohmann::json doc = {
      {"format_version", manifest.format_version},
      {"crops", nlohmann::json::array()},
  };
  for (const CropEntry& e : manifest.crops) {
    nlohmann::json item = {
        {"crop_id", e.crop_id},
        {"insertion_id", e.insertion_id},
        {"time_window_index", e.time_window_index},
        {"intensity_path", e.intensity_path},
        {"phase_path", e.phase_path},
    };
    item["label"] = e.label ? nlohmann::json(std::string(to_string(*e.label)))
                            : nlohmann::json(nullptr);
    doc["crops"].push_back(std::move(item));
  }
  std::ofstream out(path);
  out << doc.dump(2) << "\n";
  if (!out) throw IoError("failed to write crop manifest " + path.string());
}

CropManifest load_crop_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open crop manifest " + path.string());
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw IoError("malformed crop manifest " + path.string());
  if (doc.value("format_version", -1) != kCropFormatVersion)
    throw IoError("unsupported crop format version in " + path.string());

  CropManifest manifest;
  manifest.format_version = doc.at("format_version").get<int>();
  for (const auto& item : doc.at("crops")) {
    CropEntry e;
    e.crop_id = item.at("crop_id").get<std::string>();
    e.insertion_id = item.at("insertion_id").get<std::string>();
    e.time_window_index = item.at("time_window_index").get<int>();
    e.intensity_path = item.at("intensity_path").get<std::string>();
    e.phase_path = item.at("phase_path").get<std::string>();
    if (!item.at("label").is_null())
      e.label = tissue_from_string_or_throw(item.at("label").get<std::string>());
    manifest.crops.push_back(std::move(e));
  }
  return manifest;
}

CropPair load_crop(const CropEntry& entry, const std::filesystem::path& store_dir) {
  CropPair crop;
  crop.insertion_id = entry.insertion_id;
  crop.time_window_index = entry.time_window_index;
  crop.label = entry.label;
  crop.intensity = read_array(store_dir / entry.intensity_path).data;
  crop.phase = read_array(store_dir / entry.phase_path).data;
  return crop;
}

CropManifest preprocess_dataset(const std::filesystem::path& dataset_dir,
                                const PreprocessConfig& config,
                                const std::filesystem::path& out_dir,
                                bool force) {
  const std::filesystem::path manifest_path = out_dir / kCropManifestName;
  if (std::filesystem::exists(manifest_path) && !force)
    throw ConfigError("refusing to overwrite existing crop manifest " +
                      manifest_path.string() + " (pass force to replace)");

  DatasetManifest dataset = load_manifest(dataset_dir / kDatasetManifestName);
  std::filesystem::create_directories(out_dir);

  CropManifest manifest;
  manifest.format_version = kCropFormatVersion;
  for (const InsertionEntry& entry : dataset.insertions) {
    RawInsertionRecord record;
    record.intensity = read_array(dataset_dir / entry.dir / "intensity.f32").data;
    record.phase = read_array(dataset_dir / entry.dir / "phase.f32").data;
    record.boundary_times = entry.boundary_times;
    std::vector<CropPair> crops = preprocess_insertion(record, entry.id, config);
    append_crops(manifest, crops, out_dir);
  }
  save_crop_manifest(manifest, manifest_path);
  return manifest;
}

}  // namespace octpair

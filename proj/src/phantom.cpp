#include "octpair/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "octpair/array_io.hpp"

namespace octpair {

SpeckleParams default_speckle_params(TissueClass c) {
  switch (c) {
    case TissueClass::gelatin: return {0.10, 1.0, 0.20};
    case TissueClass::pork: return {0.30, 2.0, 0.50};
    case TissueClass::beef: return {0.55, 3.0, 0.70};
    case TissueClass::turkey: return {0.85, 4.0, 0.90};
  }
  return {};
}

PhaseParams default_phase_params(TissueClass c) {
  switch (c) {
    case TissueClass::gelatin: return {0.01, 0.02};
    case TissueClass::pork: return {0.08, 0.06};
    case TissueClass::beef: return {0.20, 0.12};
    case TissueClass::turkey: return {0.45, 0.25};
  }
  return {};
}

std::map<TissueClass, TissueStats> default_tissue_params() {
  std::map<TissueClass, TissueStats> table;
  for (TissueClass c : all_classes())
    table[c] = {default_speckle_params(c), default_phase_params(c)};
  return table;
}

TissueLayerSpec make_layer(TissueClass c, int thickness) {
  return {c, thickness, default_speckle_params(c), default_phase_params(c)};
}

void validate(const InsertionConfig& config) {
  if (config.layer_sequence.empty())
    throw ConfigError("layer_sequence must be nonempty");
  if (config.layer_sequence.front().tissue_class != TissueClass::gelatin)
    throw ConfigError("first layer must be gelatin");
  for (std::size_t i = 0; i < config.layer_sequence.size(); ++i) {
    const TissueLayerSpec& layer = config.layer_sequence[i];
    const bool last = i + 1 == config.layer_sequence.size();
    if (layer.thickness < 1 && !(last && layer.thickness == kUnboundedThickness))
      throw ConfigError("layer thickness must be >= 1 (0 only on a terminal last layer)");
    const SpeckleParams& sp = layer.speckle;
    if (sp.mean_reflectivity < 0.0 || sp.mean_reflectivity > 1.0 ||
        sp.contrast < 0.0 || sp.contrast > 1.0)
      throw ConfigError("amplitude/contrast parameters must lie in [0,1]");
    if (sp.grain_scale < 1.0) throw ConfigError("grain scale must be >= 1");
    if (layer.phase.jitter_amplitude < 0.0)
      throw ConfigError("jitter amplitude must be >= 0");
  }
  if (config.insertion_velocity <= 0.0) throw ConfigError("insertion_velocity must be > 0");
  if (config.a_scan_rate <= 0.0) throw ConfigError("a_scan_rate must be > 0");
  if (config.duration <= 0.0) throw ConfigError("duration must be > 0");
  if (config.depth_samples < 250)
    throw ConfigError("depth_samples must be >= 250 to admit height-250 crops");
  if (config.noise_floor < 0.0) throw ConfigError("noise_floor must be >= 0");
  if (config.attenuation_depth <= 0.0) throw ConfigError("attenuation_depth must be > 0");
  if (config.num_columns() < 1) throw ConfigError("duration x a_scan_rate yields no columns");
}

namespace {

struct LayerTable {
  // Per layer, plus one trailing "void" entry for depths beyond a bounded stack.
  std::vector<double> upper;  // cumulative upper depth bound, +inf if unbounded
  std::vector<double> mu, contrast, grain, drift, sigma;
  std::vector<TissueClass> cls;
  bool bounded = false;   // true if the last real layer has finite thickness
  double total_depth = 0; // cumulative bounded thickness

  explicit LayerTable(const InsertionConfig& config) {
    const double inf = std::numeric_limits<double>::infinity();
    double cum = 0.0;
    for (std::size_t i = 0; i < config.layer_sequence.size(); ++i) {
      const TissueLayerSpec& layer = config.layer_sequence[i];
      const bool unbounded = layer.thickness == kUnboundedThickness;
      cum = unbounded ? inf : cum + layer.thickness;
      upper.push_back(cum);
      mu.push_back(layer.speckle.mean_reflectivity);
      contrast.push_back(layer.speckle.contrast);
      grain.push_back(layer.speckle.grain_scale);
      drift.push_back(layer.phase.drift_rate);
      sigma.push_back(std::sqrt(layer.phase.jitter_amplitude * layer.phase.jitter_amplitude +
                                config.noise_floor * config.noise_floor));
      cls.push_back(layer.tissue_class);
    }
    bounded = std::isfinite(cum);
    total_depth = cum;
    // void beyond the stack: no reflectivity, noise-only phase
    upper.push_back(inf);
    mu.push_back(0.0);
    contrast.push_back(0.0);
    grain.push_back(1.0);
    drift.push_back(0.0);
    sigma.push_back(config.noise_floor);
    cls.push_back(cls.back());
  }

  std::size_t layer_at(double depth) const {
    std::size_t li = 0;
    while (depth >= upper[li]) ++li;
    return li;
  }
};

}  // namespace

TissueClass tissue_at(const InsertionConfig& config, long t) {
  LayerTable table(config);
  const double tip = config.insertion_velocity * static_cast<double>(t) / config.a_scan_rate;
  std::size_t li = std::min(table.layer_at(tip), config.layer_sequence.size() - 1);
  return table.cls[li];
}

RawInsertionRecord generate_insertion(const InsertionConfig& config) {
  validate(config);
  const long T = config.num_columns();
  const int depth = config.depth_samples;
  const double rate = config.a_scan_rate;
  const double velocity = config.insertion_velocity;

  LayerTable table(config);
  if (table.bounded &&
      velocity * static_cast<double>(T - 1) / rate >= table.total_depth)
    throw ConfigError(
        "under-specified scene: needle exceeds total layer thickness before the "
        "insertion ends; give the last layer unbounded thickness or shorten the run");

  RawInsertionRecord record;
  record.config = config;
  record.intensity.resize(depth, T);
  record.phase.resize(depth, T);

  const std::uint64_t s_speckle = hash_combine(config.seed, hash_str("speckle"));
  const std::uint64_t s_inoise = hash_combine(config.seed, hash_str("inoise"));
  const std::uint64_t s_phase0 = hash_combine(config.seed, hash_str("phase0"));
  const std::uint64_t s_pnoise = hash_combine(config.seed, hash_str("pnoise"));

  VectorD atten(depth);
  for (int r = 0; r < depth; ++r)
    atten[r] = std::exp(-static_cast<double>(r) / config.attenuation_depth);

  const double nf = config.noise_floor;
  for (long t = 0; t < T; ++t) {
    const double tip = velocity * static_cast<double>(t) / rate;
    std::size_t li = table.layer_at(tip);
    std::int64_t cached_cell = std::numeric_limits<std::int64_t>::min();
    std::size_t cached_li = static_cast<std::size_t>(-1);
    double speckle_e = 1.0;
    float* icol = record.intensity.col(t).data();
    float* pcol = record.phase.col(t).data();
    const float* pprev = t > 0 ? record.phase.col(t - 1).data() : nullptr;

    for (int r = 0; r < depth; ++r) {
      const double d = tip + r;
      while (d >= table.upper[li]) ++li;

      // intensity: class-conditioned speckle texture over exponential falloff
      const double g = table.grain[li];
      const std::int64_t cell_r = static_cast<std::int64_t>(d / g);
      if (cell_r != cached_cell || li != cached_li) {
        const std::int64_t cell_t = static_cast<std::int64_t>(static_cast<double>(t) / g);
        double u = hash_unit(s_speckle, static_cast<std::uint64_t>(cell_r),
                             static_cast<std::uint64_t>(cell_t), li);
        speckle_e = -std::log(1.0 - u);  // Exp(1), mean 1
        cached_cell = cell_r;
        cached_li = li;
      }
      const double c = table.contrast[li];
      const double signal = table.mu[li] * atten[r] * ((1.0 - c) + c * speckle_e);
      const double noisy =
          signal + nf * hash_unit_sym(s_inoise, static_cast<std::uint64_t>(r),
                                      static_cast<std::uint64_t>(t), 0);
      icol[r] = static_cast<float>(noisy > 0.0 ? noisy : 0.0);

      // phase: wrapped random walk with class-conditioned drift and jitter
      if (t == 0) {
        const double u = hash_unit(s_phase0, static_cast<std::uint64_t>(r), 0, 0);
        pcol[r] = static_cast<float>(kPi - kTwoPi * u);  // uniform in (-pi, pi]
      } else {
        const double inc =
            table.drift[li] + table.sigma[li] * hash_unit_sym(s_pnoise,
                                                              static_cast<std::uint64_t>(r),
                                                              static_cast<std::uint64_t>(t), 0);
        double x = static_cast<double>(pprev[r]) + inc;
        if (x > kPi || x <= -kPi) x = wrap_phase(x);
        pcol[r] = static_cast<float>(x);
      }
    }
  }

  // layer crossings; consistent by construction with tissue_at(). A layer
  // thinner than one A-scan advance collapses into the next crossing so the
  // index sequence stays strictly increasing.
  record.boundary_times.push_back({0, config.layer_sequence.front().tissue_class});
  for (std::size_t k = 0; k + 1 < config.layer_sequence.size(); ++k) {
    const double bound = table.upper[k];
    long tk = static_cast<long>(std::ceil(bound * rate / velocity));
    while (tk > 0 && velocity * static_cast<double>(tk - 1) / rate >= bound) --tk;
    while (velocity * static_cast<double>(tk) / rate < bound) ++tk;
    if (tk >= T) break;
    const TissueClass entering = config.layer_sequence[k + 1].tissue_class;
    if (record.boundary_times.back().index == tk)
      record.boundary_times.back().entering = entering;
    else
      record.boundary_times.push_back({tk, entering});
  }
  return record;
}

// ---------------------------------------------------------------------------
// dataset generation
// ---------------------------------------------------------------------------

InsertionConfig make_insertion_config(const DatasetConfig& config,
                                      TissueClass meat_class, int index) {
  std::string id = std::string(to_string(meat_class)) + "_" + std::to_string(index);
  Rng rng(hash_combine(config.master_seed, hash_str(id)));

  InsertionConfig ins = config.base;
  ins.seed = rng.next_u64();
  const SceneParams& scene = config.scene;
  ins.duration = scene.min_duration +
                 rng.next_unit() * (scene.max_duration - scene.min_duration);

  const int span = std::max(1, scene.max_layers - scene.min_layers + 1);
  const int n_layers = scene.min_layers + static_cast<int>(rng.next_below(span));
  const double intensity_gain =
      scene.min_intensity_gain +
      rng.next_unit() * (scene.max_intensity_gain - scene.min_intensity_gain);
  const double phase_gain =
      scene.min_phase_gain + rng.next_unit() * (scene.max_phase_gain - scene.min_phase_gain);
  ins.layer_sequence.clear();
  for (int i = 0; i < n_layers; ++i) {
    TissueClass c = (i % 2 == 0) ? TissueClass::gelatin : meat_class;
    const int range = std::max(1, scene.max_layer_thickness - scene.min_layer_thickness + 1);
    int thickness = scene.min_layer_thickness + static_cast<int>(rng.next_below(range));
    const TissueStats& stats = config.tissue_params.at(c);
    TissueLayerSpec layer{c, thickness, stats.speckle, stats.phase};
    layer.speckle.mean_reflectivity =
        std::clamp(layer.speckle.mean_reflectivity * intensity_gain, 0.0, 1.0);
    layer.phase.drift_rate *= phase_gain;
    layer.phase.jitter_amplitude *= phase_gain;
    ins.layer_sequence.push_back(layer);
  }
  ins.layer_sequence.back().thickness = kUnboundedThickness;
  return ins;
}

namespace {

nlohmann::json boundaries_to_json(const std::vector<BoundaryEvent>& boundaries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const BoundaryEvent& b : boundaries)
    arr.push_back({{"index", b.index}, {"entering", std::string(to_string(b.entering))}});
  return arr;
}

std::vector<BoundaryEvent> boundaries_from_json(const nlohmann::json& arr) {
  std::vector<BoundaryEvent> out;
  for (const auto& item : arr)
    out.push_back({item.at("index").get<long>(),
                   tissue_from_string_or_throw(item.at("entering").get<std::string>())});
  return out;
}

}  // namespace

DatasetManifest generate_dataset(const DatasetConfig& config,
                                 const std::filesystem::path& out_dir,
                                 bool force) {
  for (auto [cls, count] : config.per_class_insertion_counts) {
    if (cls == TissueClass::gelatin)
      throw ConfigError("insertion counts are keyed by meat class; gelatin is implicit");
    if (count < 1) throw ConfigError("insertion counts must be >= 1 per meat class");
  }

  const std::filesystem::path manifest_path = out_dir / kDatasetManifestName;
  if (std::filesystem::exists(manifest_path) && !force)
    throw ConfigError("refusing to overwrite existing manifest " + manifest_path.string() +
                      " (pass force to replace)");
  std::filesystem::create_directories(out_dir / "insertions");

  DatasetManifest manifest;
  manifest.format_version = kDatasetFormatVersion;
  manifest.master_seed = config.master_seed;

  for (auto [cls, count] : config.per_class_insertion_counts) {
    for (int i = 0; i < count; ++i) {
      InsertionConfig ins = make_insertion_config(config, cls, i);
      RawInsertionRecord record = generate_insertion(ins);

      InsertionEntry entry;
      entry.id = std::string(to_string(cls)) + "_" + std::to_string(i);
      entry.dir = "insertions/" + entry.id;
      entry.meat_class = cls;
      entry.seed = ins.seed;
      entry.columns = record.intensity.cols();
      entry.depth_samples = ins.depth_samples;
      entry.boundary_times = record.boundary_times;

      const std::filesystem::path dir = out_dir / entry.dir;
      std::filesystem::create_directories(dir);
      write_array(dir / "intensity.f32", record.intensity, "intensity");
      write_array(dir / "phase.f32", record.phase, "phase");

      nlohmann::json meta = {
          {"id", entry.id},
          {"meat_class", std::string(to_string(cls))},
          {"seed", entry.seed},
          {"columns", entry.columns},
          {"depth_samples", entry.depth_samples},
          {"duration", ins.duration},
          {"a_scan_rate", ins.a_scan_rate},
          {"insertion_velocity", ins.insertion_velocity},
          {"noise_floor", ins.noise_floor},
          {"boundary_times", boundaries_to_json(entry.boundary_times)},
      };
      std::ofstream meta_out(dir / "meta.json");
      meta_out << meta.dump(2) << "\n";
      if (!meta_out) throw IoError("failed to write " + (dir / "meta.json").string());

      manifest.insertions.push_back(std::move(entry));
    }
  }

  save_manifest(manifest, manifest_path);
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  nlohmann::json doc = {
      {"format_version", manifest.format_version},
      {"master_seed", manifest.master_seed},
      {"insertions", nlohmann::json::array()},
  };
  for (const InsertionEntry& e : manifest.insertions) {
    doc["insertions"].push_back({
        {"id", e.id},
        {"dir", e.dir},
        {"meat_class", std::string(to_string(e.meat_class))},
        {"seed", e.seed},
        {"columns", e.columns},
        {"depth_samples", e.depth_samples},
        {"boundary_times", boundaries_to_json(e.boundary_times)},
    });
  }
  std::ofstream out(path);
  out << doc.dump(2) << "\n";
  if (!out) throw IoError("failed to write manifest " + path.string());
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw IoError("malformed manifest " + path.string());
  if (doc.value("format_version", -1) != kDatasetFormatVersion)
    throw IoError("unsupported dataset format version in " + path.string());

  DatasetManifest manifest;
  manifest.format_version = doc.at("format_version").get<int>();
  manifest.master_seed = doc.at("master_seed").get<std::uint64_t>();
  for (const auto& item : doc.at("insertions")) {
    InsertionEntry e;
    e.id = item.at("id").get<std::string>();
    e.dir = item.at("dir").get<std::string>();
    e.meat_class = tissue_from_string_or_throw(item.at("meat_class").get<std::string>());
    e.seed = item.at("seed").get<std::uint64_t>();
    e.columns = item.at("columns").get<long>();
    e.depth_samples = item.at("depth_samples").get<int>();
    e.boundary_times = boundaries_from_json(item.at("boundary_times"));
    manifest.insertions.push_back(std::move(e));
  }
  return manifest;
}

}  // namespace octpair

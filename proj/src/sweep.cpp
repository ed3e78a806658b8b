#include "octpair/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <tuple>

#include <nlohmann/json.hpp>

namespace octpair {

namespace {

std::string fraction_tag(double fraction) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "p%03d", static_cast<int>(std::lround(fraction * 100)));
  return buf;
}

}  // namespace

std::string cell_id(const SweepCell& cell) {
  if (cell.is_pretrain) return "pretrain_f" + std::to_string(cell.fold);
  return "finetune_" + std::string(to_string(cell.init)) + "_" +
         std::string(to_string(cell.modality)) + "_" + fraction_tag(cell.fraction) +
         "_f" + std::to_string(cell.fold);
}

std::vector<SweepCell> enumerate_cells(const PipelineConfig& config) {
  std::vector<SweepCell> cells;
  std::set<std::string> seen;
  bool needs_pretrain = false;
  for (const SweepCellGroup& group : config.sweep.cells)
    if (group.init == InitMode::contrastive_checkpoint) needs_pretrain = true;

  if (needs_pretrain)
    for (int fold = 0; fold < config.sweep.folds; ++fold) {
      SweepCell cell;
      cell.is_pretrain = true;
      cell.fold = fold;
      cells.push_back(cell);
    }

  for (const SweepCellGroup& group : config.sweep.cells) {
    const std::vector<double>& fractions =
        group.fractions ? *group.fractions : config.sweep.fractions;
    for (double fraction : fractions)
      for (int fold = 0; fold < config.sweep.folds; ++fold) {
        SweepCell cell;
        cell.fold = fold;
        cell.init = group.init;
        cell.modality = group.modality;
        cell.fraction = fraction;
        if (seen.insert(cell_id(cell)).second) cells.push_back(cell);
      }
  }
  return cells;
}

namespace {

using nlohmann::json;

std::filesystem::path ledger_dir(const std::filesystem::path& out_dir) {
  return out_dir / "ledger";
}

std::filesystem::path result_path(const std::filesystem::path& out_dir,
                                  const std::string& id) {
  return ledger_dir(out_dir) / (id + ".json");
}

// Atomic creation ("wx") is the claim; holders alone may write the result.
bool claim_cell(const std::filesystem::path& out_dir, const std::string& id) {
  const std::filesystem::path claim = ledger_dir(out_dir) / (id + ".claim");
  std::FILE* f = std::fopen(claim.string().c_str(), "wx");
  if (!f) return false;
  std::fclose(f);
  return true;
}

void release_cell(const std::filesystem::path& out_dir, const std::string& id) {
  std::error_code ec;
  std::filesystem::remove(ledger_dir(out_dir) / (id + ".claim"), ec);
}

void write_result(const std::filesystem::path& out_dir, const std::string& id,
                  const json& doc) {
  const std::filesystem::path final_path = result_path(out_dir, id);
  const std::filesystem::path tmp = final_path.string() + ".tmp";
  std::ofstream out(tmp);
  out << doc.dump(2) << "\n";
  out.close();
  if (!out) throw IoError("failed to write ledger record for " + id);
  std::filesystem::rename(tmp, final_path);
}

json metrics_to_json(const MetricsReport& report) {
  json per_class = json::array();
  for (int c = 0; c < kNumClasses; ++c) {
    const ClassMetrics& m = report.per_class[static_cast<std::size_t>(c)];
    per_class.push_back({{"class", std::string(to_string(static_cast<TissueClass>(c)))},
                         {"support", m.support},
                         {"precision", m.precision},
                         {"recall", m.recall},
                         {"f1", m.f1},
                         {"average_precision", m.average_precision}});
  }
  return json{{"weighted_ap", report.weighted_ap},
              {"weighted_f1", report.weighted_f1},
              {"num_samples", report.num_samples},
              {"per_class", per_class},
              {"absent_classes", report.absent_classes}};
}

struct CellOutcome {
  bool ran = false;
  bool failed = false;
};

class SweepRunner {
 public:
  SweepRunner(const PipelineConfig& config, const std::filesystem::path& crops_dir,
              const std::filesystem::path& out_dir)
      : config_(config), crops_dir_(crops_dir), out_dir_(out_dir),
        resolved_(to_json(config)), hash_(config_hash(resolved_)) {
    const std::filesystem::path dataset_dir = resolve_data_dir(config_) / "dataset";
    DatasetManifest manifest = load_manifest(dataset_dir / kDatasetManifestName);
    plan_ = make_splits(manifest, config_.sweep.folds, config_.seed);
    std::filesystem::create_directories(ledger_dir(out_dir_));
    std::filesystem::create_directories(out_dir_ / "checkpoints");

    std::ofstream echo(out_dir_ / "resolved_config.json");
    echo << resolved_.dump(2) << "\n";
  }

  std::filesystem::path pretrain_checkpoint(int fold) const {
    return out_dir_ / "checkpoints" / ("pretrain_f" + std::to_string(fold) + ".ckpt");
  }

  CellOutcome run_cell(const SweepCell& cell) {
    const std::string id = cell_id(cell);
    CellOutcome outcome;
    if (std::filesystem::exists(result_path(out_dir_, id))) return outcome;
    if (!claim_cell(out_dir_, id)) return outcome;  // another worker owns it

    json record = {
        {"id", id},
        {"state", "running"},
        {"config_hash", hash_},
        {"cell",
         {{"phase", cell.is_pretrain ? "pretrain" : "finetune"},
          {"fold", cell.fold},
          {"init", std::string(to_string(cell.init))},
          {"modality", std::string(to_string(cell.modality))},
          {"label_fraction", cell.fraction}}},
        {"run_config",
         {{"batch_size", config_.train.batch_size},
          {"pretrain_epochs", config_.train.pretrain_epochs},
          {"finetune_epochs", config_.train.finetune_epochs},
          {"learning_rate", config_.train.learning_rate},
          {"temperature", config_.train.temperature},
          {"seed", cell_seed(id)}}},
        {"class_index_mapping", {"gelatin", "pork", "beef", "turkey"}},
    };
    try {
      if (cell.is_pretrain) {
        run_pretrain(cell, record);
      } else {
        run_finetune(cell, record);
      }
      record["state"] = "done";
      outcome.ran = true;
    } catch (const std::exception& e) {
      record["state"] = "error";
      record["error"] = e.what();
      outcome.ran = true;
      outcome.failed = true;
    }
    write_result(out_dir_, id, record);
    release_cell(out_dir_, id);
    return outcome;
  }

  const SplitPlan& plan() const { return plan_; }

 private:
  std::uint64_t cell_seed(const std::string& id) const {
    return hash_combine(config_.seed, hash_str(id));
  }

  RunConfig cell_run_config(const SweepCell& cell) const {
    RunConfig run = config_.train;
    run.init_mode = cell.init;
    run.modality_mode = cell.modality;
    run.label_fraction = cell.fraction;
    run.seed = cell_seed(cell_id(cell));
    return run;
  }

  void run_pretrain(const SweepCell& cell, json& record) {
    CropStore store = open_crop_store(crops_dir_);
    RunConfig run = cell_run_config(cell);
    PretrainResult result = pretrain(store, plan_.folds[static_cast<std::size_t>(cell.fold)],
                                     run, config_.model.encoder,
                                     pretrain_checkpoint(cell.fold));
    record["pretrain"] = {
        {"steps", result.steps},
        {"epoch_losses", result.epoch_losses},
        {"checkpoint", result.checkpoint_path.string()},
    };
  }

  void run_finetune(const SweepCell& cell, json& record) {
    CropStore store = open_crop_store(crops_dir_);
    RunConfig run = cell_run_config(cell);
    InitOptions init;
    init.mode = cell.init;
    init.seed = run.seed;
    init.generic_weights_path = config_.model.generic_weights_path;
    if (cell.init == InitMode::contrastive_checkpoint) {
      init.checkpoint_path = pretrain_checkpoint(cell.fold);
      if (!std::filesystem::exists(init.checkpoint_path))
        throw std::runtime_error("pretraining checkpoint missing for fold " +
                                 std::to_string(cell.fold));
    }
    const FoldSpec& fold = plan_.folds[static_cast<std::size_t>(cell.fold)];
    FinetuneResult tuned = finetune(store, fold, run, config_.model.encoder, init);
    MetricsReport metrics = evaluate(*tuned.model, store, fold, run.batch_size);
    record["metrics"] = metrics_to_json(metrics);
    record["finetune"] = {
        {"best_epoch", tuned.best_epoch},
        {"best_val_f1", tuned.best_val_f1},
        {"labeled_crops_used", tuned.labeled_crops_used},
        {"epoch_train_loss", tuned.epoch_train_loss},
        {"epoch_val_f1", tuned.epoch_val_f1},
    };
  }

  const PipelineConfig& config_;
  std::filesystem::path crops_dir_;
  std::filesystem::path out_dir_;
  json resolved_;
  std::string hash_;
  SplitPlan plan_;
};

void clear_stale_claims(const std::filesystem::path& out_dir) {
  if (!std::filesystem::exists(ledger_dir(out_dir))) return;
  for (const auto& entry : std::filesystem::directory_iterator(ledger_dir(out_dir))) {
    if (entry.path().extension() != ".claim") continue;
    std::error_code ec;
    std::filesystem::remove(entry.path(), ec);
  }
}

void run_batch(SweepRunner& runner, const std::vector<SweepCell>& cells, int workers,
               SweepSummary& summary, std::mutex& mutex) {
  std::size_t next = 0;
  auto worker = [&]() {
    for (;;) {
      SweepCell cell;
      {
        std::lock_guard<std::mutex> lock(mutex);
        if (next >= cells.size()) return;
        cell = cells[next++];
      }
      CellOutcome outcome = runner.run_cell(cell);
      std::lock_guard<std::mutex> lock(mutex);
      if (!outcome.ran) ++summary.skipped;
      else if (outcome.failed) ++summary.failed;
      else ++summary.completed;
    }
  };
  if (workers <= 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
}

}  // namespace

SweepSummary run_sweep(const PipelineConfig& config,
                       const std::filesystem::path& crops_dir,
                       const std::filesystem::path& out_dir) {
  SweepSummary summary;
  summary.out_dir = out_dir;
  std::filesystem::create_directories(out_dir);
  clear_stale_claims(out_dir);  // interrupted runs leave claims without results

  SweepRunner runner(config, crops_dir, out_dir);
  std::vector<SweepCell> all = enumerate_cells(config);
  std::vector<SweepCell> pretrain_cells, finetune_cells;
  for (const SweepCell& cell : all)
    (cell.is_pretrain ? pretrain_cells : finetune_cells).push_back(cell);

  const int workers = config.deterministic ? 1 : std::max(1, config.sweep.workers);
  std::mutex mutex;
  run_batch(runner, pretrain_cells, workers, summary, mutex);  // barrier before finetunes
  run_batch(runner, finetune_cells, workers, summary, mutex);

  write_reports(out_dir);
  return summary;
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

namespace {

struct RunRow {
  std::string init;
  std::string modality;
  double fraction = 0.0;
  int fold = 0;
  std::string state;
  double weighted_ap = 0.0;
  double weighted_f1 = 0.0;
  std::string config_hash;
  std::string error;
};

std::vector<RunRow> collect_rows(const std::filesystem::path& out_dir) {
  std::vector<RunRow> rows;
  if (!std::filesystem::exists(ledger_dir(out_dir))) return rows;
  for (const auto& entry : std::filesystem::directory_iterator(ledger_dir(out_dir))) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path());
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) continue;
    if (doc.value("state", "") == "running") continue;
    const json& cell = doc.at("cell");
    if (cell.value("phase", "") != "finetune") continue;
    RunRow row;
    row.init = cell.value("init", "");
    row.modality = cell.value("modality", "");
    row.fraction = cell.value("label_fraction", 0.0);
    row.fold = cell.value("fold", 0);
    row.state = doc.value("state", "");
    row.config_hash = doc.value("config_hash", "");
    row.error = doc.value("error", "");
    if (doc.contains("metrics")) {
      row.weighted_ap = doc["metrics"].value("weighted_ap", 0.0);
      row.weighted_f1 = doc["metrics"].value("weighted_f1", 0.0);
    }
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(), [](const RunRow& a, const RunRow& b) {
    return std::tie(a.init, a.modality, a.fraction, a.fold) <
           std::tie(b.init, b.modality, b.fraction, b.fold);
  });
  return rows;
}

std::string format2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string method_label(const std::string& init) {
  if (init == "scratch") return "Scratch";
  if (init == "generic_pretrained") return "Generic";
  if (init == "contrastive_checkpoint") return "Pretrained";
  return init;
}

std::string modality_label(const std::string& modality) {
  if (modality == "dual") return "Intensity+Phase";
  if (modality == "intensity_only") return "Intensity";
  if (modality == "phase_only") return "Phase";
  return modality;
}

struct CurvePoint {
  Aggregate ap;
  Aggregate f1;
};

std::map<std::pair<std::string, double>, CurvePoint> aggregate_rows(
    const std::vector<RunRow>& rows, bool by_modality) {
  std::map<std::pair<std::string, double>, std::pair<std::vector<double>, std::vector<double>>>
      buckets;
  for (const RunRow& row : rows) {
    if (row.state != "done") continue;
    if (by_modality) {
      if (row.init != "contrastive_checkpoint") continue;
      buckets[{row.modality, row.fraction}].first.push_back(row.weighted_ap);
      buckets[{row.modality, row.fraction}].second.push_back(row.weighted_f1);
    } else {
      if (row.modality != "dual") continue;
      buckets[{row.init, row.fraction}].first.push_back(row.weighted_ap);
      buckets[{row.init, row.fraction}].second.push_back(row.weighted_f1);
    }
  }
  std::map<std::pair<std::string, double>, CurvePoint> out;
  for (const auto& [key, values] : buckets)
    out[key] = {aggregate(values.first), aggregate(values.second)};
  return out;
}

}  // namespace

void write_reports(const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::vector<RunRow> rows = collect_rows(out_dir);

  {
    std::ofstream csv(out_dir / "runs.csv");
    csv << "init_mode,modality_mode,label_fraction,fold,state,weighted_ap,weighted_f1,"
           "config_hash,error\n";
    char buf[64];
    for (const RunRow& row : rows) {
      std::snprintf(buf, sizeof(buf), "%.2f", row.fraction);
      csv << row.init << ',' << row.modality << ',' << buf << ',' << row.fold << ','
          << row.state << ',';
      std::snprintf(buf, sizeof(buf), "%.6f", row.weighted_ap);
      csv << buf << ',';
      std::snprintf(buf, sizeof(buf), "%.6f", row.weighted_f1);
      csv << buf << ',' << row.config_hash << ',';
      std::string err = row.error;
      std::replace(err.begin(), err.end(), ',', ';');
      std::replace(err.begin(), err.end(), '\n', ' ');
      csv << err << '\n';
    }
  }

  const auto methods = aggregate_rows(rows, /*by_modality=*/false);
  const auto modalities = aggregate_rows(rows, /*by_modality=*/true);

  {
    std::ofstream table(out_dir / "table.md");
    table << "| % Training Set | Method | AP | F1 |\n";
    table << "|---|---|---|---|\n";
    std::set<double> fractions;
    for (const auto& [key, point] : methods) fractions.insert(key.second);
    for (double fraction : fractions) {
      for (const char* init :
           {"scratch", "generic_pretrained", "contrastive_checkpoint"}) {
        auto it = methods.find({init, fraction});
        if (it == methods.end()) continue;
        table << "| " << static_cast<int>(std::lround(fraction * 100)) << " | "
              << method_label(init) << " | " << format2(it->second.ap.mean) << "±"
              << format2(it->second.ap.stddev) << " | " << format2(it->second.f1.mean)
              << "±" << format2(it->second.f1.stddev) << " |\n";
      }
    }
  }

  {
    std::ofstream curve(out_dir / "curve_methods.csv");
    curve << "fraction_percent,method,mean_ap,std_ap,mean_f1,std_f1,folds\n";
    for (const auto& [key, point] : methods) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%d,%s,%.6f,%.6f,%.6f,%.6f,%d",
                    static_cast<int>(std::lround(key.second * 100)),
                    method_label(key.first).c_str(), point.ap.mean, point.ap.stddev,
                    point.f1.mean, point.f1.stddev, point.ap.count);
      curve << buf << '\n';
    }
  }

  {
    std::ofstream curve(out_dir / "curve_modalities.csv");
    curve << "fraction_percent,modality,mean_ap,std_ap,mean_f1,std_f1,folds\n";
    for (const auto& [key, point] : modalities) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%d,%s,%.6f,%.6f,%.6f,%.6f,%d",
                    static_cast<int>(std::lround(key.second * 100)),
                    modality_label(key.first).c_str(), point.ap.mean, point.ap.stddev,
                    point.f1.mean, point.f1.stddev, point.ap.count);
      curve << buf << '\n';
    }
  }
}

}  // namespace octpair

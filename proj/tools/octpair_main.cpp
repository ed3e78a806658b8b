// octpair: simulate, preprocess, pretrain, finetune, evaluate, sweep, report.
// Every command is reproducible from its config file alone; --seed overrides
// the config seed and is recorded in the outputs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "octpair/config.hpp"
#include "octpair/sweep.hpp"

namespace fs = std::filesystem;
using namespace octpair;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct CommonOptions {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  bool force = false;
  bool dry_run = false;
  bool strict = false;
  bool toy = false;
  bool paper_grid = false;
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("--config", opt.config_path, "JSON config file");
  cmd->add_option("--out", opt.out_dir, "output directory");
  cmd->add_option("--seed", opt.seed, "override the config seed");
  cmd->add_option("--workers", opt.workers, "sweep worker count");
  cmd->add_flag("--force", opt.force, "overwrite existing outputs");
  cmd->add_flag("--dry-run", opt.dry_run, "print the resolved plan, write nothing");
  cmd->add_flag("--strict", opt.strict, "nonzero exit if any sweep cell errored");
  cmd->add_flag("--toy", opt.toy, "minute-scale preset (tiny_conv, small dataset)");
  cmd->add_flag("--paper-grid", opt.paper_grid, "full experimental grid preset");
}

PipelineConfig resolve_config(const CommonOptions& opt) {
  if (opt.toy && opt.paper_grid)
    throw ConfigError("--toy and --paper-grid are mutually exclusive");
  ConfigPreset preset = ConfigPreset::none;
  if (opt.toy) preset = ConfigPreset::toy;
  if (opt.paper_grid) preset = ConfigPreset::paper_grid;
  PipelineConfig cfg = opt.config_path.empty()
                           ? make_config(preset)
                           : load_config(opt.config_path, preset);
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.workers) cfg.sweep.workers = *opt.workers;
  return cfg;
}

fs::path dataset_dir(const PipelineConfig& cfg, const CommonOptions& opt) {
  return opt.out_dir.empty() ? resolve_data_dir(cfg) / "dataset"
                             : fs::path(opt.out_dir);
}

fs::path crops_dir(const PipelineConfig& cfg, const CommonOptions& opt) {
  return opt.out_dir.empty() ? resolve_data_dir(cfg) / "crops" : fs::path(opt.out_dir);
}

void write_config_echo(const PipelineConfig& cfg, const fs::path& dir) {
  std::ofstream echo(dir / "resolved_config.json");
  echo << to_json(cfg).dump(2) << "\n";
}

int cmd_simulate(const CommonOptions& opt) {
  PipelineConfig cfg = resolve_config(opt);
  DatasetConfig sim = cfg.simulate;
  sim.master_seed = cfg.seed;
  const fs::path out = dataset_dir(cfg, opt);
  if (opt.dry_run) {
    int total = 0;
    for (auto [cls, count] : sim.per_class_insertion_counts) total += count;
    std::cout << "resolved config:\n" << to_json(cfg).dump(2) << "\n";
    std::cout << "would write " << total << " insertions to " << out.string() << "\n";
    return kExitOk;
  }
  DatasetManifest manifest = generate_dataset(sim, out, opt.force);
  write_config_echo(cfg, out);
  std::map<TissueClass, int> counts;
  for (const InsertionEntry& e : manifest.insertions) counts[e.meat_class]++;
  std::cout << "wrote " << manifest.insertions.size() << " insertions to "
            << out.string() << " (";
  bool first = true;
  for (auto [cls, count] : counts) {
    std::cout << (first ? "" : ", ") << to_string(cls) << ": " << count;
    first = false;
  }
  std::cout << ")\n";
  return kExitOk;
}

int cmd_preprocess(const CommonOptions& opt, const std::string& data_arg) {
  PipelineConfig cfg = resolve_config(opt);
  const fs::path dataset = data_arg.empty() ? resolve_data_dir(cfg) / "dataset"
                                            : fs::path(data_arg);
  const fs::path out = crops_dir(cfg, opt);
  if (opt.dry_run) {
    std::cout << "resolved config:\n" << to_json(cfg).dump(2) << "\n";
    std::cout << "would preprocess " << dataset.string() << " into " << out.string()
              << "\n";
    return kExitOk;
  }
  CropManifest manifest = preprocess_dataset(dataset, cfg.preprocess, out, opt.force);
  write_config_echo(cfg, out);
  std::map<std::string, int> labeled;
  int unlabeled = 0;
  for (const CropEntry& e : manifest.crops) {
    if (e.label) labeled[std::string(to_string(*e.label))]++;
    else ++unlabeled;
  }
  std::cout << "wrote " << manifest.crops.size() << " crop pairs to " << out.string()
            << "\n";
  for (const auto& [cls, count] : labeled)
    std::cout << "  " << cls << ": " << count << " labeled\n";
  std::cout << "  unlabeled: " << unlabeled << "\n";
  return kExitOk;
}

int cmd_sweep(const CommonOptions& opt, const std::string& crops_arg) {
  PipelineConfig cfg = resolve_config(opt);
  const fs::path crops = crops_arg.empty() ? resolve_data_dir(cfg) / "crops"
                                           : fs::path(crops_arg);
  const fs::path out = opt.out_dir.empty() ? resolve_data_dir(cfg) / "runs"
                                           : fs::path(opt.out_dir);
  if (opt.dry_run) {
    std::cout << "resolved config:\n" << to_json(cfg).dump(2) << "\n";
    std::cout << "sweep would run " << enumerate_cells(cfg).size() << " cells into "
              << out.string() << "\n";
    return kExitOk;
  }
  SweepSummary summary = run_sweep(cfg, crops, out);
  std::cout << "sweep: " << summary.completed << " ran, " << summary.skipped
            << " already done, " << summary.failed << " failed\n";
  std::cout << "reports under " << out.string() << "\n";
  if (opt.strict && summary.failed > 0) return kExitRuntime;
  return kExitOk;
}

int cmd_pretrain(const CommonOptions& opt, const std::string& crops_arg, int fold) {
  PipelineConfig cfg = resolve_config(opt);
  const fs::path crops = crops_arg.empty() ? resolve_data_dir(cfg) / "crops"
                                           : fs::path(crops_arg);
  const fs::path out = opt.out_dir.empty() ? resolve_data_dir(cfg) / "runs"
                                           : fs::path(opt.out_dir);
  if (opt.dry_run) {
    std::cout << "resolved config:\n" << to_json(cfg).dump(2) << "\n";
    return kExitOk;
  }
  DatasetManifest manifest =
      load_manifest(resolve_data_dir(cfg) / "dataset" / kDatasetManifestName);
  SplitPlan plan = make_splits(manifest, cfg.sweep.folds, cfg.seed);
  if (fold < 0 || fold >= static_cast<int>(plan.folds.size()))
    throw ConfigError("fold out of range");
  CropStore store = open_crop_store(crops);
  RunConfig run = cfg.train;
  run.seed = hash_combine(cfg.seed, hash_str("pretrain_f" + std::to_string(fold)));
  fs::create_directories(out / "checkpoints");
  const fs::path ckpt = out / "checkpoints" / ("pretrain_f" + std::to_string(fold) + ".ckpt");
  PretrainResult result = pretrain(store, plan.folds[static_cast<std::size_t>(fold)],
                                   run, cfg.model.encoder, ckpt);
  std::cout << "pretrained fold " << fold << ": " << result.steps << " steps, first/last "
            << "epoch loss " << (result.epoch_losses.empty() ? 0.0 : result.epoch_losses.front())
            << " / " << (result.epoch_losses.empty() ? 0.0 : result.epoch_losses.back())
            << "\ncheckpoint: " << ckpt.string() << "\n";
  return kExitOk;
}

int cmd_finetune(const CommonOptions& opt, const std::string& crops_arg, int fold,
                 const std::string& init_mode, const std::string& modality,
                 double fraction, const std::string& checkpoint) {
  PipelineConfig cfg = resolve_config(opt);
  const fs::path crops = crops_arg.empty() ? resolve_data_dir(cfg) / "crops"
                                           : fs::path(crops_arg);
  const fs::path out = opt.out_dir.empty() ? resolve_data_dir(cfg) / "runs"
                                           : fs::path(opt.out_dir);
  if (opt.dry_run) {
    std::cout << "resolved config:\n" << to_json(cfg).dump(2) << "\n";
    return kExitOk;
  }
  DatasetManifest manifest =
      load_manifest(resolve_data_dir(cfg) / "dataset" / kDatasetManifestName);
  SplitPlan plan = make_splits(manifest, cfg.sweep.folds, cfg.seed);
  if (fold < 0 || fold >= static_cast<int>(plan.folds.size()))
    throw ConfigError("fold out of range");
  CropStore store = open_crop_store(crops);

  RunConfig run = cfg.train;
  run.init_mode = init_mode_from_string(init_mode);
  run.modality_mode = head_mode_from_string(modality);
  run.label_fraction = fraction;
  run.seed = hash_combine(cfg.seed, hash_str("finetune_f" + std::to_string(fold)));

  InitOptions init;
  init.mode = run.init_mode;
  init.seed = run.seed;
  init.checkpoint_path = checkpoint;
  init.generic_weights_path = cfg.model.generic_weights_path;

  const FoldSpec& fold_spec = plan.folds[static_cast<std::size_t>(fold)];
  FinetuneResult tuned = finetune(store, fold_spec, run, cfg.model.encoder, init);
  MetricsReport metrics = evaluate(*tuned.model, store, fold_spec, run.batch_size);
  fs::create_directories(out / "models");
  const fs::path model_path = out / "models" / ("classifier_f" + std::to_string(fold) + ".ckpt");
  save_classifier(model_path, *tuned.model, run.seed);
  std::cout << "finetuned fold " << fold << " (best epoch " << tuned.best_epoch
            << ", val F1 " << tuned.best_val_f1 << ")\n"
            << "test weighted AP " << metrics.weighted_ap << ", weighted F1 "
            << metrics.weighted_f1 << "\nmodel: " << model_path.string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const CommonOptions& opt, const std::string& model_path,
                 const std::string& crops_arg, const std::string& insertions_csv) {
  PipelineConfig cfg = resolve_config(opt);
  const fs::path crops = crops_arg.empty() ? resolve_data_dir(cfg) / "crops"
                                           : fs::path(crops_arg);
  auto model = load_classifier(model_path);
  CropStore store = open_crop_store(crops);

  std::vector<std::size_t> indices;
  if (insertions_csv.empty()) {
    for (std::size_t i = 0; i < store.size(); ++i)
      if (store.manifest().crops[i].label) indices.push_back(i);
  } else {
    std::vector<std::string> ids;
    std::stringstream ss(insertions_csv);
    std::string id;
    while (std::getline(ss, id, ',')) ids.push_back(id);
    indices = crops_of_insertions(store.manifest(), ids, true);
  }
  MetricsReport metrics = evaluate_on(*model, store, indices, cfg.train.batch_size);

  std::ostream* out_stream = &std::cout;
  std::ofstream file;
  if (!opt.out_dir.empty()) {
    fs::create_directories(opt.out_dir);
    file.open(fs::path(opt.out_dir) / "metrics.csv");
    out_stream = &file;
  }
  *out_stream << "metric,value\n";
  *out_stream << "weighted_ap," << metrics.weighted_ap << "\n";
  *out_stream << "weighted_f1," << metrics.weighted_f1 << "\n";
  for (int c = 0; c < kNumClasses; ++c) {
    const ClassMetrics& m = metrics.per_class[static_cast<std::size_t>(c)];
    const std::string cls(to_string(static_cast<TissueClass>(c)));
    *out_stream << cls << "_support," << m.support << "\n";
    *out_stream << cls << "_f1," << m.f1 << "\n";
    *out_stream << cls << "_ap," << m.average_precision << "\n";
  }
  if (!opt.out_dir.empty())
    std::cout << "wrote " << (fs::path(opt.out_dir) / "metrics.csv").string() << "\n";
  return kExitOk;
}

int cmd_report(const CommonOptions& opt, const std::string& runs_arg) {
  PipelineConfig cfg = resolve_config(opt);
  const fs::path out = runs_arg.empty()
                           ? (opt.out_dir.empty() ? resolve_data_dir(cfg) / "runs"
                                                  : fs::path(opt.out_dir))
                           : fs::path(runs_arg);
  if (!fs::exists(out / "ledger"))
    std::cerr << "warning: no ledger under " << out.string()
              << "; writing empty reports\n";
  write_reports(out);
  std::cout << "reports written under " << out.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"paired intensity/phase OCT tissue-classification pipeline"};
  app.require_subcommand(1);

  CommonOptions opt;
  std::string data_arg, crops_arg, model_arg, insertions_arg, checkpoint_arg, runs_arg;
  int fold = 0;
  std::string init_mode = "scratch", modality = "dual";
  double fraction = 1.0;

  CLI::App* simulate = app.add_subcommand("simulate", "generate the synthetic dataset");
  add_common(simulate, opt);

  CLI::App* preprocess = app.add_subcommand("preprocess", "M-scans to labeled crop pairs");
  add_common(preprocess, opt);
  preprocess->add_option("--data", data_arg, "dataset directory (with manifest.json)");

  CLI::App* pretrain_cmd = app.add_subcommand("pretrain", "contrastive pretraining of one fold");
  add_common(pretrain_cmd, opt);
  pretrain_cmd->add_option("--crops", crops_arg, "crop store directory");
  pretrain_cmd->add_option("--fold", fold, "fold index");

  CLI::App* finetune_cmd = app.add_subcommand("finetune", "supervised finetuning of one fold");
  add_common(finetune_cmd, opt);
  finetune_cmd->add_option("--crops", crops_arg, "crop store directory");
  finetune_cmd->add_option("--fold", fold, "fold index");
  finetune_cmd->add_option("--init", init_mode, "scratch|generic_pretrained|contrastive_checkpoint");
  finetune_cmd->add_option("--modality", modality, "dual|intensity_only|phase_only");
  finetune_cmd->add_option("--fraction", fraction, "label fraction (0.1..1.0)");
  finetune_cmd->add_option("--checkpoint", checkpoint_arg, "pretraining checkpoint");

  CLI::App* evaluate_cmd = app.add_subcommand("evaluate", "metrics for a saved classifier");
  add_common(evaluate_cmd, opt);
  evaluate_cmd->add_option("--model", model_arg, "classifier checkpoint")->required();
  evaluate_cmd->add_option("--crops", crops_arg, "crop store directory");
  evaluate_cmd->add_option("--insertions", insertions_arg,
                           "comma-separated insertion ids (default: all labeled)");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "run the configured experiment grid");
  add_common(sweep_cmd, opt);
  sweep_cmd->add_option("--crops", crops_arg, "crop store directory");

  CLI::App* report_cmd = app.add_subcommand("report", "rebuild tables and curves from the ledger");
  add_common(report_cmd, opt);
  report_cmd->add_option("--runs", runs_arg, "sweep output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(opt);
    if (preprocess->parsed()) return cmd_preprocess(opt, data_arg);
    if (pretrain_cmd->parsed()) return cmd_pretrain(opt, crops_arg, fold);
    if (finetune_cmd->parsed())
      return cmd_finetune(opt, crops_arg, fold, init_mode, modality, fraction,
                          checkpoint_arg);
    if (evaluate_cmd->parsed())
      return cmd_evaluate(opt, model_arg, crops_arg, insertions_arg);
    if (sweep_cmd->parsed()) return cmd_sweep(opt, crops_arg);
    if (report_cmd->parsed()) return cmd_report(opt, runs_arg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

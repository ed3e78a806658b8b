#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "octpair/config.hpp"
#include "octpair/metrics.hpp"
#include "octpair/splits.hpp"
#include "octpair/train.hpp"

namespace octpair {

struct SweepCell {
  bool is_pretrain = false;
  int fold = 0;
  InitMode init = InitMode::scratch;
  HeadMode modality = HeadMode::dual;
  double fraction = 1.0;
};

// Stable ledger identifier, e.g. "finetune_scratch_dual_p010_f0".
std::string cell_id(const SweepCell& cell);

// Every cell the configured grid requires, pretrain cells first. Duplicate
// (init, modality, fraction, fold) combinations collapse.
std::vector<SweepCell> enumerate_cells(const PipelineConfig& config);

struct SweepSummary {
  int completed = 0;  // ran in this invocation
  int skipped = 0;    // already present in the ledger
  int failed = 0;     // recorded as errors (now or previously)
  std::filesystem::path out_dir;
};

// Runs every missing cell of the grid; results land in <out>/ledger as one
// JSON record per cell, claimed via atomic file creation so independent cells
// may run on several workers. Completed cells are never re-run. Reports are
// rewritten at the end.
SweepSummary run_sweep(const PipelineConfig& config,
                       const std::filesystem::path& crops_dir,
                       const std::filesystem::path& out_dir);

// Rebuilds runs.csv, table.md and the two learning-curve CSVs from the
// ledger alone. Empty ledgers produce headers only.
void write_reports(const std::filesystem::path& out_dir);

}  // namespace octpair

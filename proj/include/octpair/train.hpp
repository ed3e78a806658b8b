#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "octpair/metrics.hpp"
#include "octpair/model.hpp"
#include "octpair/objectives.hpp"
#include "octpair/preprocess.hpp"
#include "octpair/splits.hpp"

namespace octpair {

struct RunConfig {
  InitMode init_mode = InitMode::scratch;
  HeadMode modality_mode = HeadMode::dual;
  double label_fraction = 1.0;
  int batch_size = 28;
  int pretrain_epochs = 100;
  int finetune_epochs = 100;
  double learning_rate = 1e-4;
  double temperature = 0.1;
  bool symmetric_contrastive = false;  // extension, off in reproduction runs
  std::uint64_t seed = 0;
};

void validate(const RunConfig& config);

// Loads crops of one manifest lazily and keeps them in memory.
class CropStore {
 public:
  CropStore(CropManifest manifest, std::filesystem::path dir);

  const CropPair& get(std::size_t index) const;
  const CropManifest& manifest() const { return manifest_; }
  std::size_t size() const { return manifest_.crops.size(); }

 private:
  CropManifest manifest_;
  std::filesystem::path dir_;
  mutable std::vector<std::unique_ptr<CropPair>> cache_;
};

CropStore open_crop_store(const std::filesystem::path& dir);

struct PretrainResult {
  std::vector<double> epoch_losses;  // mean per epoch
  long steps = 0;
  std::filesystem::path checkpoint_path;
};

// Joint contrastive training of f and g over all crops (labeled or not) of
// the fold's training insertions. Mini-batches are aligned pairs; a trailing
// batch of one is skipped (the loss is identically zero there).
PretrainResult pretrain(const CropStore& store, const FoldSpec& fold,
                        const RunConfig& run, const EncoderConfig& enc_cfg,
                        const std::filesystem::path& checkpoint_path);

// Mean contrastive loss over fixed pairs, inference mode; used by tests and
// the resume contract.
double pretrain_eval_loss(DualModelF& model, const CropStore& store,
                          const std::vector<std::size_t>& indices, double temperature,
                          int batch_size);

struct FinetuneResult {
  std::unique_ptr<DualModelF> model;
  int best_epoch = -1;  // epoch whose parameters were selected
  double best_val_f1 = 0.0;
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_f1;
  long labeled_crops_used = 0;
};

// Cross-entropy training of head plus the mode's encoders on the fold's
// labeled subset; parameters of the best-validation-F1 epoch are returned.
FinetuneResult finetune(const CropStore& store, const FoldSpec& fold,
                        const RunConfig& run, const EncoderConfig& enc_cfg,
                        const InitOptions& init);

// Class scores (softmax over 4 logits) for the given crops, inference mode.
MatrixD predict_scores(DualModelF& model, const CropStore& store,
                       const std::vector<std::size_t>& indices, int batch_size);

MetricsReport evaluate(DualModelF& model, const CropStore& store,
                       const FoldSpec& fold, int batch_size);
MetricsReport evaluate_on(DualModelF& model, const CropStore& store,
                          const std::vector<std::size_t>& labeled_indices,
                          int batch_size);

void save_classifier(const std::filesystem::path& path, DualModelF& model,
                     std::uint64_t seed);
std::unique_ptr<DualModelF> load_classifier(const std::filesystem::path& path);

}  // namespace octpair

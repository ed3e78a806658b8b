#include "octpair/train.hpp"

#include <algorithm>
#include <iostream>
#include <set>

namespace octpair {

void validate(const RunConfig& config) {
  if (!fraction_in_grid(config.label_fraction))
    throw ConfigError("label_fraction must be one of 10/20/30/60/80/100 percent");
  if (config.batch_size < 2)
    throw ConfigError("batch_size must be >= 2 (the contrastive loss is degenerate at 1)");
  if (config.pretrain_epochs < 0 || config.finetune_epochs < 0)
    throw ConfigError("epoch counts must be >= 0");
  if (config.learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (config.temperature <= 0.0) throw ConfigError("temperature must be > 0");
}

CropStore::CropStore(CropManifest manifest, std::filesystem::path dir)
    : manifest_(std::move(manifest)), dir_(std::move(dir)) {
  cache_.resize(manifest_.crops.size());
}

const CropPair& CropStore::get(std::size_t index) const {
  if (index >= cache_.size()) throw ConfigError("crop index out of range");
  if (!cache_[index])
    cache_[index] = std::make_unique<CropPair>(load_crop(manifest_.crops[index], dir_));
  return *cache_[index];
}

CropStore open_crop_store(const std::filesystem::path& dir) {
  return CropStore(load_crop_manifest(dir / kCropManifestName), dir);
}

namespace {

struct ContrastiveStep {
  float loss = 0.0f;
  MatrixF grad_int;  // N x D
  MatrixF grad_phs;
};

ContrastiveStep contrastive_step(const MatrixF& z_int, const MatrixF& z_phs,
                                 double temperature, bool symmetric) {
  ContrastiveBatch batch{z_int, z_phs, static_cast<float>(temperature)};
  ContrastiveResult<float> result = symmetric
                                        ? symmetric_contrastive_loss_with_grad(batch)
                                        : contrastive_loss_with_grad(batch);
  return {result.loss, std::move(result.grad_int), std::move(result.grad_phs)};
}

void gather_batch(const CropStore& store, const std::vector<std::size_t>& indices,
                  std::size_t begin, std::size_t end,
                  std::vector<const MatrixF*>& intensity,
                  std::vector<const MatrixF*>& phase) {
  intensity.clear();
  phase.clear();
  for (std::size_t k = begin; k < end; ++k) {
    const CropPair& crop = store.get(indices[k]);
    intensity.push_back(&crop.intensity);
    phase.push_back(&crop.phase);
  }
}

void assert_fold_disjoint(const FoldSpec& fold) {
  SplitPlan plan;
  plan.folds.push_back(fold);
  assert_no_leakage(plan);
}

}  // namespace

PretrainResult pretrain(const CropStore& store, const FoldSpec& fold,
                        const RunConfig& run, const EncoderConfig& enc_cfg,
                        const std::filesystem::path& checkpoint_path) {
  validate(run);
  assert_fold_disjoint(fold);
  std::vector<std::size_t> pool =
      crops_of_insertions(store.manifest(), fold.train, /*labeled_only=*/false);
  if (pool.empty()) throw ConfigError("pretraining pool is empty");

  DualModelF model(enc_cfg, HeadConfig{});
  model.init(run.seed);
  std::vector<nn::Param<float>*> enc_params = model.f.params();
  auto gp = model.g.params();
  enc_params.insert(enc_params.end(), gp.begin(), gp.end());
  nn::Adam<float> adam(run.learning_rate);

  PretrainResult result;
  std::vector<const MatrixF*> ints, phss;
  Rng epoch_rng(hash_combine(run.seed, hash_str("pretrain")));
  for (int epoch = 0; epoch < run.pretrain_epochs; ++epoch) {
    std::vector<std::size_t> order = pool;
    epoch_rng.child(static_cast<std::uint64_t>(epoch)).shuffle(order);
    double loss_sum = 0.0;
    long seen = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(run.batch_size)) {
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(run.batch_size));
      if (end - at < 2) continue;  // singleton batch: loss and gradient vanish
      gather_batch(store, order, at, end, ints, phss);

      adam.zero_grad(enc_params);
      MatrixF z_int = model.f.encode_batch(ints, Modality::intensity, true).transpose();
      MatrixF z_phs = model.g.encode_batch(phss, Modality::phase, true).transpose();
      ContrastiveStep step =
          contrastive_step(z_int, z_phs, run.temperature, run.symmetric_contrastive);
      if (!std::isfinite(step.loss))
        throw std::runtime_error("non-finite contrastive loss at epoch " +
                                 std::to_string(epoch));
      model.f.backward(step.grad_int.transpose());
      model.g.backward(step.grad_phs.transpose());
      adam.step(enc_params);
      ++result.steps;
      loss_sum += static_cast<double>(step.loss) * static_cast<double>(end - at);
      seen += static_cast<long>(end - at);
    }
    result.epoch_losses.push_back(seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0);
  }

  if (result.epoch_losses.size() >= 2 &&
      result.epoch_losses.back() >= result.epoch_losses.front())
    std::cerr << "[pretrain] warning: final epoch loss " << result.epoch_losses.back()
              << " did not improve on epoch 1 loss " << result.epoch_losses.front()
              << "\n";

  CheckpointInfo info;
  info.kind = "pretrain";
  info.architecture = enc_cfg.architecture;
  info.embed_dim = enc_cfg.embed_dim;
  info.seed = run.seed;
  save_checkpoint(checkpoint_path, info, enc_params);
  result.checkpoint_path = checkpoint_path;
  return result;
}

double pretrain_eval_loss(DualModelF& model, const CropStore& store,
                          const std::vector<std::size_t>& indices, double temperature,
                          int batch_size) {
  if (indices.size() < 2) throw ConfigError("need at least two pairs");
  std::vector<const MatrixF*> ints, phss;
  double loss_sum = 0.0;
  long seen = 0;
  for (std::size_t at = 0; at < indices.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(indices.size(), at + static_cast<std::size_t>(batch_size));
    if (end - at < 2) continue;
    gather_batch(store, indices, at, end, ints, phss);
    MatrixF z_int = model.f.encode_batch(ints, Modality::intensity, false).transpose();
    MatrixF z_phs = model.g.encode_batch(phss, Modality::phase, false).transpose();
    ContrastiveBatch batch{z_int, z_phs, static_cast<float>(temperature)};
    loss_sum += static_cast<double>(contrastive_loss(batch)) * static_cast<double>(end - at);
    seen += static_cast<long>(end - at);
  }
  return loss_sum / static_cast<double>(seen);
}

namespace {

// logits (4 x N) for one batch under the model's head mode; encoders run in
// the requested training mode.
MatrixF batch_logits(DualModelF& model, const std::vector<const MatrixF*>& ints,
                     const std::vector<const MatrixF*>& phss, bool training) {
  const HeadMode mode = model.head.config().mode;
  if (mode == HeadMode::intensity_only)
    return model.head.forward(model.f.encode_batch(ints, Modality::intensity, training));
  if (mode == HeadMode::phase_only)
    return model.head.forward(model.g.encode_batch(phss, Modality::phase, training));
  MatrixF z_int = model.f.encode_batch(ints, Modality::intensity, training);
  MatrixF z_phs = model.g.encode_batch(phss, Modality::phase, training);
  MatrixF joined(z_int.rows() + z_phs.rows(), z_int.cols());
  joined << z_int, z_phs;  // fixed order: intensity on top
  return model.head.forward(joined);
}

void backprop_logits(DualModelF& model, const MatrixF& dlogits) {
  const HeadMode mode = model.head.config().mode;
  MatrixF dinput = model.head.backward(dlogits);
  if (mode == HeadMode::intensity_only) {
    model.f.backward(dinput);
    return;
  }
  if (mode == HeadMode::phase_only) {
    model.g.backward(dinput);
    return;
  }
  const Eigen::Index d = dinput.rows() / 2;
  model.f.backward(dinput.topRows(d));
  model.g.backward(dinput.bottomRows(d));
}

std::vector<float> snapshot_params(const std::vector<nn::Param<float>*>& params) {
  std::vector<float> out;
  for (const nn::Param<float>* p : params)
    out.insert(out.end(), p->value.data(), p->value.data() + p->value.size());
  return out;
}

void restore_params(const std::vector<nn::Param<float>*>& params,
                    const std::vector<float>& snapshot) {
  std::size_t at = 0;
  for (nn::Param<float>* p : params) {
    std::copy(snapshot.begin() + static_cast<std::ptrdiff_t>(at),
              snapshot.begin() + static_cast<std::ptrdiff_t>(at + p->value.size()),
              p->value.data());
    at += static_cast<std::size_t>(p->value.size());
  }
}

}  // namespace

MatrixD predict_scores(DualModelF& model, const CropStore& store,
                       const std::vector<std::size_t>& indices, int batch_size) {
  MatrixD scores(static_cast<Eigen::Index>(indices.size()), kNumClasses);
  std::vector<const MatrixF*> ints, phss;
  for (std::size_t at = 0; at < indices.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(indices.size(), at + static_cast<std::size_t>(batch_size));
    gather_batch(store, indices, at, end, ints, phss);
    MatrixF logits = batch_logits(model, ints, phss, /*training=*/false);
    for (std::size_t k = at; k < end; ++k) {
      VectorD row = logits.col(static_cast<Eigen::Index>(k - at)).cast<double>();
      row.array() -= row.maxCoeff();
      VectorD p = row.array().exp();
      scores.row(static_cast<Eigen::Index>(k)) = (p / p.sum()).transpose();
    }
  }
  return scores;
}

MetricsReport evaluate_on(DualModelF& model, const CropStore& store,
                          const std::vector<std::size_t>& labeled_indices,
                          int batch_size) {
  if (labeled_indices.empty()) throw ConfigError("no labeled crops to evaluate");
  std::vector<int> labels;
  labels.reserve(labeled_indices.size());
  for (std::size_t idx : labeled_indices) {
    const auto& label = store.manifest().crops[idx].label;
    if (!label) throw ConfigError("evaluation crop lacks a label");
    labels.push_back(static_cast<int>(*label));
  }
  MatrixD scores = predict_scores(model, store, labeled_indices, batch_size);
  return evaluate_predictions(scores, labels);
}

MetricsReport evaluate(DualModelF& model, const CropStore& store,
                       const FoldSpec& fold, int batch_size) {
  return evaluate_on(model, store,
                     crops_of_insertions(store.manifest(), fold.test, true), batch_size);
}

FinetuneResult finetune(const CropStore& store, const FoldSpec& fold,
                        const RunConfig& run, const EncoderConfig& enc_cfg,
                        const InitOptions& init) {
  validate(run);
  assert_fold_disjoint(fold);

  std::vector<std::size_t> subset =
      subsample_train(store.manifest(), fold, run.label_fraction, run.seed);
  if (subset.empty()) throw ConfigError("labeled training subset is empty");
  std::set<int> classes;
  for (std::size_t idx : subset)
    classes.insert(static_cast<int>(*store.manifest().crops[idx].label));
  if (classes.size() < 2)
    throw ConfigError("degenerate single-class training subset; nothing to classify");

  std::vector<std::size_t> val_indices =
      crops_of_insertions(store.manifest(), fold.val, true);
  if (val_indices.empty())
    throw ConfigError("validation split has no labeled crops; cannot select a model");

  FinetuneResult result;
  result.labeled_crops_used = static_cast<long>(subset.size());
  HeadConfig head_cfg;
  head_cfg.mode = run.modality_mode;
  result.model = std::make_unique<DualModelF>(enc_cfg, head_cfg);
  DualModelF& model = *result.model;
  init_weights(model, init);

  std::vector<nn::Param<float>*> trainable = model.trainable_params();
  std::vector<nn::Param<float>*> all = model.all_params();
  nn::Adam<float> adam(run.learning_rate);

  std::vector<float> best_snapshot = snapshot_params(all);
  std::vector<const MatrixF*> ints, phss;
  std::vector<int> labels;
  Rng epoch_rng(hash_combine(run.seed, hash_str("finetune")));
  for (int epoch = 0; epoch < run.finetune_epochs; ++epoch) {
    std::vector<std::size_t> order = subset;
    epoch_rng.child(static_cast<std::uint64_t>(epoch)).shuffle(order);
    double loss_sum = 0.0;
    long seen = 0;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(run.batch_size)) {
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(run.batch_size));
      gather_batch(store, order, at, end, ints, phss);
      labels.clear();
      for (std::size_t k = at; k < end; ++k)
        labels.push_back(static_cast<int>(*store.manifest().crops[order[k]].label));

      adam.zero_grad(trainable);
      MatrixF logits = batch_logits(model, ints, phss, /*training=*/true);
      CrossEntropyResult<float> ce =
          cross_entropy_with_grad<float>(logits.transpose(), labels);
      if (!std::isfinite(ce.loss))
        throw std::runtime_error("non-finite finetune loss at epoch " +
                                 std::to_string(epoch));
      backprop_logits(model, MatrixF(ce.grad_logits.transpose()));
      adam.step(trainable);
      loss_sum += static_cast<double>(ce.loss) * static_cast<double>(end - at);
      seen += static_cast<long>(end - at);
    }
    result.epoch_train_loss.push_back(seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0);

    const double val_f1 =
        evaluate_on(model, store, val_indices, run.batch_size).weighted_f1;
    result.epoch_val_f1.push_back(val_f1);
    if (result.best_epoch < 0 || val_f1 > result.best_val_f1) {
      result.best_val_f1 = val_f1;
      result.best_epoch = epoch;
      best_snapshot = snapshot_params(all);
    }
  }
  restore_params(all, best_snapshot);
  return result;
}

void save_classifier(const std::filesystem::path& path, DualModelF& model,
                     std::uint64_t seed) {
  CheckpointInfo info;
  info.kind = "classifier";
  info.architecture = model.f.config().architecture;
  info.embed_dim = model.f.config().embed_dim;
  info.head_mode = model.head.config().mode;
  info.hidden_dim = model.head.config().hidden_dim;
  info.seed = seed;
  save_checkpoint(path, info, model.all_params());
}

std::unique_ptr<DualModelF> load_classifier(const std::filesystem::path& path) {
  CheckpointInfo info = read_checkpoint_info(path);
  if (info.kind != "classifier")
    throw IoError("checkpoint is not a classifier: " + path.string());
  EncoderConfig enc_cfg;
  enc_cfg.architecture = info.architecture;
  enc_cfg.embed_dim = info.embed_dim;
  HeadConfig head_cfg;
  head_cfg.mode = info.head_mode.value_or(HeadMode::dual);
  head_cfg.hidden_dim = info.hidden_dim;
  auto model = std::make_unique<DualModelF>(enc_cfg, head_cfg);
  load_checkpoint(path, info, model->all_params());
  return model;
}

}  // namespace octpair

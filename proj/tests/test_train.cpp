#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "octpair/array_io.hpp"
#include "octpair/train.hpp"

using namespace octpair;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  fs::path dir = fs::temp_directory_path() / "octpair_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small crop store with class-dependent intensity level and phase slope, so
// both a classifier and the contrastive objective have something to learn.
struct ToyData {
  fs::path dir;
  DatasetManifest dataset;
  FoldSpec fold;
};

ToyData make_toy_store(const char* name, int insertions_per_class = 2,
                       int crops_per_insertion = 30, int crop_size = 12) {
  ToyData toy;
  toy.dir = temp_dir(name);
  Rng rng(4711);
  CropManifest manifest;
  const double levels[] = {0.1, 0.35, 0.6, 0.85};
  const double slopes[] = {0.02, 0.1, 0.25, 0.5};
  for (TissueClass meat : meat_classes()) {
    for (int i = 0; i < insertions_per_class; ++i) {
      InsertionEntry entry;
      entry.id = std::string(to_string(meat)) + "_" + std::to_string(i);
      entry.meat_class = meat;
      entry.seed = rng.next_u64();
      toy.dataset.insertions.push_back(entry);
      fs::create_directories(toy.dir / entry.id);
      for (int k = 0; k < crops_per_insertion; ++k) {
        // alternate gelatin and the insertion's meat class
        const TissueClass cls = (k % 2 == 0) ? TissueClass::gelatin : meat;
        const int c = static_cast<int>(cls);
        MatrixF intensity(crop_size, crop_size);
        MatrixF phase(crop_size, crop_size);
        for (int y = 0; y < crop_size; ++y)
          for (int x = 0; x < crop_size; ++x) {
            intensity(y, x) = static_cast<float>(levels[c] + 0.05 * rng.next_normal());
            phase(y, x) = static_cast<float>(slopes[c] * x + 0.02 * rng.next_normal());
          }
        CropEntry crop;
        crop.crop_id = entry.id + "_c" + std::to_string(k);
        crop.insertion_id = entry.id;
        crop.time_window_index = k;
        crop.label = cls;
        if (k == crops_per_insertion - 1) crop.label.reset();  // one unlabeled crop
        crop.intensity_path = entry.id + "/" + crop.crop_id + ".int.f32";
        crop.phase_path = entry.id + "/" + crop.crop_id + ".phs.f32";
        write_array(toy.dir / crop.intensity_path, intensity, "intensity");
        write_array(toy.dir / crop.phase_path, phase, "phase");
        manifest.crops.push_back(crop);
      }
    }
  }
  save_crop_manifest(manifest, toy.dir / kCropManifestName);
  // one insertion of each class to train, the rest split val/test
  for (const InsertionEntry& e : toy.dataset.insertions) {
    if (e.id.ends_with("_0")) toy.fold.train.push_back(e.id);
    else if (e.id == "pork_1") toy.fold.val.push_back(e.id);
    else toy.fold.test.push_back(e.id);
  }
  // make val/test nonempty for every run: reuse remaining insertions
  if (toy.fold.val.empty()) toy.fold.val.push_back(toy.fold.test.back());
  return toy;
}

EncoderConfig toy_encoder() {
  EncoderConfig cfg;
  cfg.architecture = Architecture::tiny_conv;
  cfg.embed_dim = 16;
  return cfg;
}

RunConfig toy_run(int pre_epochs, int fine_epochs) {
  RunConfig run;
  run.batch_size = 28;
  run.pretrain_epochs = pre_epochs;
  run.finetune_epochs = fine_epochs;
  run.learning_rate = 1e-3;
  run.temperature = 0.1;
  run.seed = 2024;
  return run;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("pretrain: step arithmetic, checkpoint reload, loss decreases") {
  ToyData toy = make_toy_store("train_pretrain", 2, 28, 10);
  CropStore store = open_crop_store(toy.dir);
  // train pool: 3 insertions x 28 crops = 84 -> 3 batches of 28 per epoch
  RunConfig run = toy_run(2, 0);
  const fs::path ckpt = toy.dir / "pre.ckpt";
  PretrainResult result = pretrain(store, toy.fold, run, toy_encoder(), ckpt);
  CHECK(result.steps == 6);  // 3 per epoch, 2 epochs
  REQUIRE(result.epoch_losses.size() == 2);

  // 2 epochs over a 56-crop pool at batch 28 -> 4 optimizer steps
  FoldSpec two_insertions;
  two_insertions.train = {"beef_0", "pork_0"};
  two_insertions.val = toy.fold.val;
  two_insertions.test = {"turkey_0"};
  PretrainResult four = pretrain(store, two_insertions, run, toy_encoder(),
                                 toy.dir / "pre56.ckpt");
  CHECK(four.steps == 4);

  // reloading the checkpoint reproduces the evaluation loss bit for bit
  DualModelF model(toy_encoder(), HeadConfig{});
  InitOptions opt;
  opt.mode = InitMode::contrastive_checkpoint;
  opt.checkpoint_path = ckpt;
  opt.seed = 1;
  init_weights(model, opt);
  std::vector<std::size_t> pool =
      crops_of_insertions(store.manifest(), toy.fold.train, false);
  const double eval_a = pretrain_eval_loss(model, store, pool, 0.1, 28);

  DualModelF model2(toy_encoder(), HeadConfig{});
  init_weights(model2, opt);
  const double eval_b = pretrain_eval_loss(model2, store, pool, 0.1, 28);
  CHECK(eval_a == eval_b);

  // longer run on learnable pairs: loss clearly below the first epoch
  RunConfig longer = toy_run(12, 0);
  PretrainResult trained = pretrain(store, toy.fold, longer, toy_encoder(),
                                    toy.dir / "pre_long.ckpt");
  CHECK(trained.epoch_losses.back() < trained.epoch_losses.front());
}

TEST_CASE("pretrain rejects an empty pool") {
  ToyData toy = make_toy_store("train_empty", 2, 4, 8);
  CropStore store = open_crop_store(toy.dir);
  FoldSpec fold;
  fold.train = {"nonexistent"};
  RunConfig run = toy_run(1, 0);
  CHECK_THROWS_AS(pretrain(store, fold, run, toy_encoder(), toy.dir / "x.ckpt"),
                  ConfigError);
}

TEST_CASE("finetune: loss decreases, best epoch tracked, determinism") {
  ToyData toy = make_toy_store("train_finetune", 2, 20, 10);
  CropStore store = open_crop_store(toy.dir);
  RunConfig run = toy_run(0, 8);
  InitOptions init;
  init.seed = run.seed;
  FinetuneResult a = finetune(store, toy.fold, run, toy_encoder(), init);
  REQUIRE(a.epoch_train_loss.size() == 8);
  CHECK(a.epoch_train_loss.back() < a.epoch_train_loss.front());
  CHECK(a.best_epoch >= 0);
  CHECK(a.epoch_val_f1[static_cast<std::size_t>(a.best_epoch)] ==
        doctest::Approx(a.best_val_f1));

  FinetuneResult b = finetune(store, toy.fold, run, toy_encoder(), init);
  CHECK(params_hash(a.model->all_params()) == params_hash(b.model->all_params()));

  MetricsReport ma = evaluate(*a.model, store, toy.fold, run.batch_size);
  MetricsReport mb = evaluate(*b.model, store, toy.fold, run.batch_size);
  CHECK(ma.weighted_f1 == mb.weighted_f1);
  CHECK(ma.weighted_ap == mb.weighted_ap);
}

TEST_CASE("a single gradient step lowers the loss on its own batch") {
  ToyData toy = make_toy_store("train_descent", 2, 16, 10);
  CropStore store = open_crop_store(toy.dir);
  std::vector<std::size_t> subset =
      crops_of_insertions(store.manifest(), toy.fold.train, true);
  REQUIRE(subset.size() >= 8);
  subset.resize(8);

  DualModelF model(toy_encoder(), HeadConfig{});
  model.init(5);
  std::vector<const MatrixF*> ints, phss;
  std::vector<int> labels;
  for (std::size_t idx : subset) {
    const CropPair& crop = store.get(idx);
    ints.push_back(&crop.intensity);
    phss.push_back(&crop.phase);
    labels.push_back(static_cast<int>(*store.manifest().crops[idx].label));
  }
  auto loss_of = [&](bool training) {
    MatrixF z_int = model.f.encode_batch(ints, Modality::intensity, training);
    MatrixF z_phs = model.g.encode_batch(phss, Modality::phase, training);
    MatrixF joined(z_int.rows() + z_phs.rows(), z_int.cols());
    joined << z_int, z_phs;
    MatrixF logits = model.head.forward(joined);
    return cross_entropy_with_grad<float>(logits.transpose(), labels);
  };

  auto params = model.trainable_params();
  nn::Adam<float> adam(1e-3);
  adam.zero_grad(params);
  CrossEntropyResult<float> before = loss_of(true);
  MatrixF dlogits = before.grad_logits.transpose();
  MatrixF dinput = model.head.backward(dlogits);
  model.f.backward(dinput.topRows(16));
  model.g.backward(dinput.bottomRows(16));
  adam.step(params);
  CrossEntropyResult<float> after = loss_of(true);
  CHECK(after.loss < before.loss);
}

TEST_CASE("intensity_only finetune leaves the phase branch untouched") {
  ToyData toy = make_toy_store("train_isolation", 2, 20, 10);
  CropStore store = open_crop_store(toy.dir);
  RunConfig run = toy_run(0, 3);
  run.modality_mode = HeadMode::intensity_only;
  InitOptions init;
  init.seed = run.seed;
  FinetuneResult result = finetune(store, toy.fold, run, toy_encoder(), init);

  DualModelF reference(toy_encoder(), HeadConfig{HeadMode::intensity_only, 512});
  init_weights(reference, init);
  CHECK(params_hash(result.model->g.params()) == params_hash(reference.g.params()));
  CHECK(params_hash(result.model->f.params()) != params_hash(reference.f.params()));
}

TEST_CASE("degenerate labeled subsets are rejected before training") {
  ToyData toy = make_toy_store("train_degenerate", 2, 8, 8);
  CropStore store = open_crop_store(toy.dir);

  // relabel every crop to gelatin: single-class subset
  CropManifest degenerate = store.manifest();
  for (CropEntry& e : degenerate.crops)
    if (e.label) e.label = TissueClass::gelatin;
  CropStore bad(degenerate, toy.dir);
  RunConfig run = toy_run(0, 1);
  InitOptions init;
  CHECK_THROWS_AS(finetune(bad, toy.fold, run, toy_encoder(), init), ConfigError);
}

TEST_CASE("validation split without labeled crops is an error") {
  ToyData toy = make_toy_store("train_noval", 2, 8, 8);
  CropManifest manifest = load_crop_manifest(toy.dir / kCropManifestName);
  for (CropEntry& e : manifest.crops)
    if (e.insertion_id == toy.fold.val.front()) e.label.reset();
  CropStore store(manifest, toy.dir);
  RunConfig run = toy_run(0, 1);
  InitOptions init;
  CHECK_THROWS_AS(finetune(store, toy.fold, run, toy_encoder(), init), ConfigError);
}

TEST_CASE("train/test leakage is rejected at run start") {
  ToyData toy = make_toy_store("train_leak", 2, 8, 8);
  CropStore store = open_crop_store(toy.dir);
  FoldSpec leaky = toy.fold;
  leaky.test.push_back(leaky.train.front());
  RunConfig run = toy_run(1, 1);
  InitOptions init;
  CHECK_THROWS_AS(finetune(store, leaky, run, toy_encoder(), init), ConfigError);
  CHECK_THROWS_AS(pretrain(store, leaky, run, toy_encoder(), toy.dir / "x.ckpt"),
                  ConfigError);
}

TEST_CASE("resnet18_style runs a full contrastive step and checkpoints") {
  EncoderConfig cfg;
  cfg.architecture = Architecture::resnet18_style;
  cfg.embed_dim = 512;
  DualModelF model(cfg, HeadConfig{});
  model.init(3);
  Rng rng(1);
  MatrixF crop_i(64, 64), crop_p(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      crop_i(y, x) = static_cast<float>(rng.next_normal());
      crop_p(y, x) = static_cast<float>(rng.next_normal());
    }
  std::vector<const MatrixF*> ints = {&crop_i, &crop_i};
  std::vector<const MatrixF*> phss = {&crop_p, &crop_p};

  auto params = model.trainable_params();
  nn::Adam<float> adam(1e-4);
  adam.zero_grad(params);
  MatrixF z_int = model.f.encode_batch(ints, Modality::intensity, true).transpose();
  MatrixF z_phs = model.g.encode_batch(phss, Modality::phase, true).transpose();
  REQUIRE(z_int.cols() == 512);
  ContrastiveBatch batch{z_int, z_phs, 0.1f};
  ContrastiveResult<float> res = contrastive_loss_with_grad(batch);
  CHECK(std::isfinite(res.loss));
  const std::uint64_t before = params_hash(model.f.params());
  model.f.backward(res.grad_int.transpose());
  model.g.backward(res.grad_phs.transpose());
  adam.step(params);
  CHECK(params_hash(model.f.params()) != before);

  const fs::path dir = temp_dir("resnet_ckpt");
  std::vector<nn::Param<float>*> enc = model.f.params();
  auto gp = model.g.params();
  enc.insert(enc.end(), gp.begin(), gp.end());
  CheckpointInfo info;
  info.kind = "pretrain";
  info.architecture = Architecture::resnet18_style;
  info.embed_dim = 512;
  save_checkpoint(dir / "r18.ckpt", info, enc);
  DualModelF restored(cfg, HeadConfig{});
  restored.init(99);
  std::vector<nn::Param<float>*> renc = restored.f.params();
  auto rgp = restored.g.params();
  renc.insert(renc.end(), rgp.begin(), rgp.end());
  load_checkpoint(dir / "r18.ckpt", info, renc);
  CHECK(params_hash(renc) == params_hash(enc));
}

TEST_CASE("classifier save/load reproduces predictions") {
  ToyData toy = make_toy_store("train_clf", 2, 12, 10);
  CropStore store = open_crop_store(toy.dir);
  RunConfig run = toy_run(0, 2);
  InitOptions init;
  init.seed = run.seed;
  FinetuneResult tuned = finetune(store, toy.fold, run, toy_encoder(), init);

  const fs::path path = toy.dir / "clf.ckpt";
  save_classifier(path, *tuned.model, run.seed);
  auto restored = load_classifier(path);
  MetricsReport a = evaluate(*tuned.model, store, toy.fold, run.batch_size);
  MetricsReport b = evaluate(*restored, store, toy.fold, run.batch_size);
  CHECK(a.weighted_f1 == b.weighted_f1);
  CHECK(a.weighted_ap == b.weighted_ap);
}

}  // TEST_SUITE

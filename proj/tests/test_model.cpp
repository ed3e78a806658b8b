#include <doctest.h>

#include <filesystem>

#include "octpair/model.hpp"

using namespace octpair;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  fs::path dir = fs::temp_directory_path() / "octpair_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

EncoderConfig tiny_config(int embed_dim = 16) {
  EncoderConfig cfg;
  cfg.architecture = Architecture::tiny_conv;
  cfg.embed_dim = embed_dim;
  return cfg;
}

MatrixF random_crop(Rng& rng, int h, int w) {
  MatrixF crop(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) crop(y, x) = static_cast<float>(rng.next_normal());
  return crop;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("replicate_channels copies the crop into three identical channels") {
  MatrixF crop = MatrixF::Constant(4, 6, 5.0f);
  nn::FeatureMap<float> fm = replicate_channels(crop);
  CHECK(fm.n == 1);
  CHECK(fm.c == 3);
  CHECK(fm.h == 4);
  CHECK(fm.w == 6);
  CHECK((fm.data.array() == 5.0f).all());
  CHECK(fm.data.row(0) == fm.data.row(1));
  CHECK(fm.data.row(1) == fm.data.row(2));

  Rng rng(3);
  MatrixF real = random_crop(rng, 3, 5);
  nn::FeatureMap<float> fm2 = replicate_channels(real);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 5; ++x)
      CHECK(fm2.data(2, y * 5 + x) == real(y, x));
}

TEST_CASE("tiny_conv embedding dimension follows the config") {
  Rng rng(5);
  for (int embed : {16, 32}) {
    Encoder<float> enc(tiny_config(embed), "f", Modality::intensity);
    enc.init(9);
    MatrixF crop = random_crop(rng, 32, 32);
    std::vector<const MatrixF*> batch = {&crop};
    MatrixF z = enc.encode_batch(batch, Modality::intensity, false);
    CHECK(z.rows() == embed);
    CHECK(z.cols() == 1);
    CHECK(z.array().isFinite().all());
  }
}

TEST_CASE("resnet18_style produces 512-dim embeddings and pins embed_dim") {
  EncoderConfig cfg;
  cfg.architecture = Architecture::resnet18_style;
  cfg.embed_dim = 512;
  Encoder<float> enc(cfg, "f", Modality::intensity);
  enc.init(1);
  Rng rng(6);
  MatrixF crop = random_crop(rng, 64, 64);
  std::vector<const MatrixF*> batch = {&crop};
  MatrixF z = enc.encode_batch(batch, Modality::intensity, false);
  CHECK(z.rows() == 512);
  CHECK(z.array().isFinite().all());

  cfg.embed_dim = 32;
  CHECK_THROWS_AS(validate(cfg), ConfigError);
}

TEST_CASE("encode rejects the wrong modality for a branch") {
  Encoder<float> f(tiny_config(), "f", Modality::intensity);
  f.init(2);
  Rng rng(7);
  MatrixF crop = random_crop(rng, 16, 16);
  std::vector<const MatrixF*> batch = {&crop};
  CHECK_THROWS_AS(f.encode_batch(batch, Modality::phase, false), ConfigError);
}

TEST_CASE("encode yields a tagged embedding of the configured dimension") {
  Encoder<float> f(tiny_config(32), "f", Modality::intensity);
  f.init(12);
  Rng rng(13);
  MatrixF crop = random_crop(rng, 24, 24);
  Embedding e = encode(f, crop, Modality::intensity, 7);
  CHECK(e.vector.size() == 32);
  CHECK(e.source_modality == Modality::intensity);
  CHECK(e.time_window_index == 7);
  CHECK(e.vector.array().isFinite().all());
  CHECK_THROWS_AS(encode(f, crop, Modality::phase), ConfigError);
}

TEST_CASE("inference is deterministic across repeated calls") {
  Encoder<float> enc(tiny_config(), "g", Modality::phase);
  enc.init(4);
  Rng rng(8);
  MatrixF crop = random_crop(rng, 20, 24);
  std::vector<const MatrixF*> batch = {&crop};
  MatrixF a = enc.encode_batch(batch, Modality::phase, false);
  MatrixF b = enc.encode_batch(batch, Modality::phase, false);
  CHECK(a == b);
}

TEST_CASE("head layer dims: 1024/512/4 dual, 512/512/4 single") {
  HeadConfig dual;
  dual.mode = HeadMode::dual;
  CHECK(dual.layer_dims(512) == std::array<int, 3>{1024, 512, 4});
  HeadConfig single;
  single.mode = HeadMode::intensity_only;
  CHECK(single.layer_dims(512) == std::array<int, 3>{512, 512, 4});
}

TEST_CASE("classify: dual takes (intensity, phase); single takes its modality") {
  HeadConfig cfg;
  cfg.mode = HeadMode::dual;
  MlpHead<float> head(cfg, 8);
  head.init(3);

  Embedding ei{VectorF::Ones(8), Modality::intensity, 0};
  Embedding ep{VectorF::Ones(8), Modality::phase, 0};
  VectorF logits = classify(head, {ei, ep});
  CHECK(logits.size() == 4);
  CHECK_THROWS_AS(classify(head, {ep, ei}), ConfigError);  // wrong order
  CHECK_THROWS_AS(classify(head, {ei}), ConfigError);      // wrong count

  HeadConfig single;
  single.mode = HeadMode::phase_only;
  MlpHead<float> phead(single, 8);
  phead.init(3);
  CHECK(classify(phead, {ep}).size() == 4);
  CHECK_THROWS_AS(classify(phead, {ei}), ConfigError);
}

TEST_CASE("zero-weight head returns its bias for any input") {
  HeadConfig cfg;
  cfg.mode = HeadMode::intensity_only;
  MlpHead<float> head(cfg, 6);
  std::vector<nn::Param<float>*> params;
  head.collect(params);
  for (nn::Param<float>* p : params) p->value.setZero();
  // set the output bias; with zero weights the logits equal it exactly
  for (nn::Param<float>* p : params)
    if (p->name == "head.l2.bias") p->value << 0.1f, 0.2f, 0.3f, 0.4f;

  Embedding e{VectorF::Random(6), Modality::intensity, 0};
  VectorF logits = classify(head, {e});
  CHECK(logits(0) == doctest::Approx(0.1f));
  CHECK(logits(3) == doctest::Approx(0.4f));
}

TEST_CASE("branch isolation: f and g never share parameters") {
  DualModelF model(tiny_config(), HeadConfig{});
  model.init(17);
  auto fp = model.f.params();
  auto gp = model.g.params();
  REQUIRE(fp.size() == gp.size());
  for (std::size_t i = 0; i < fp.size(); ++i) {
    CHECK(fp[i] != gp[i]);  // distinct storage
    CHECK(fp[i]->name != gp[i]->name);
  }
  // same architecture, independent initial values
  CHECK(params_hash(fp) != params_hash(gp));
}

TEST_CASE("scratch init is seed-deterministic") {
  DualModelF a(tiny_config(), HeadConfig{});
  DualModelF b(tiny_config(), HeadConfig{});
  InitOptions opt;
  opt.mode = InitMode::scratch;
  opt.seed = 33;
  init_weights(a, opt);
  init_weights(b, opt);
  CHECK(params_hash(a.all_params()) == params_hash(b.all_params()));
  opt.seed = 34;
  init_weights(b, opt);
  CHECK(params_hash(a.all_params()) != params_hash(b.all_params()));
}

TEST_CASE("checkpoint roundtrip restores exact bytes") {
  const fs::path dir = temp_dir("ckpt");
  DualModelF model(tiny_config(), HeadConfig{});
  model.init(5);

  CheckpointInfo info;
  info.kind = "pretrain";
  info.architecture = Architecture::tiny_conv;
  info.embed_dim = 16;
  std::vector<nn::Param<float>*> enc = model.f.params();
  auto gp = model.g.params();
  enc.insert(enc.end(), gp.begin(), gp.end());
  save_checkpoint(dir / "a.ckpt", info, enc);

  DualModelF other(tiny_config(), HeadConfig{});
  other.init(999);
  std::vector<nn::Param<float>*> other_enc = other.f.params();
  auto ogp = other.g.params();
  other_enc.insert(other_enc.end(), ogp.begin(), ogp.end());
  CHECK(params_hash(other_enc) != params_hash(enc));
  load_checkpoint(dir / "a.ckpt", info, other_enc);
  CHECK(params_hash(other_enc) == params_hash(enc));
}

TEST_CASE("contrastive_checkpoint init: encoders restored, head fresh") {
  const fs::path dir = temp_dir("ckpt_init");
  DualModelF pre(tiny_config(), HeadConfig{});
  pre.init(21);
  CheckpointInfo info;
  info.kind = "pretrain";
  info.architecture = Architecture::tiny_conv;
  info.embed_dim = 16;
  std::vector<nn::Param<float>*> enc = pre.f.params();
  auto gp = pre.g.params();
  enc.insert(enc.end(), gp.begin(), gp.end());
  save_checkpoint(dir / "pre.ckpt", info, enc);

  DualModelF tuned(tiny_config(), HeadConfig{});
  InitOptions opt;
  opt.mode = InitMode::contrastive_checkpoint;
  opt.seed = 77;
  opt.checkpoint_path = dir / "pre.ckpt";
  init_weights(tuned, opt);

  std::vector<nn::Param<float>*> tuned_enc = tuned.f.params();
  auto tgp = tuned.g.params();
  tuned_enc.insert(tuned_enc.end(), tgp.begin(), tgp.end());
  CHECK(params_hash(tuned_enc) == params_hash(enc));  // bitwise restore

  // head freshly initialized from the run seed, not from the checkpoint
  DualModelF scratch(tiny_config(), HeadConfig{});
  InitOptions s;
  s.seed = 77;
  init_weights(scratch, s);
  std::vector<nn::Param<float>*> tuned_head, scratch_head;
  tuned.head.collect(tuned_head);
  scratch.head.collect(scratch_head);
  CHECK(params_hash(tuned_head) == params_hash(scratch_head));
}

TEST_CASE("checkpoint config mismatches are rejected") {
  const fs::path dir = temp_dir("ckpt_mismatch");
  DualModelF model(tiny_config(16), HeadConfig{});
  model.init(1);
  CheckpointInfo info;
  info.kind = "pretrain";
  info.architecture = Architecture::tiny_conv;
  info.embed_dim = 16;
  std::vector<nn::Param<float>*> enc = model.f.params();
  auto gp = model.g.params();
  enc.insert(enc.end(), gp.begin(), gp.end());
  save_checkpoint(dir / "d16.ckpt", info, enc);

  DualModelF wrong(tiny_config(32), HeadConfig{});
  InitOptions opt;
  opt.mode = InitMode::contrastive_checkpoint;
  opt.checkpoint_path = dir / "d16.ckpt";
  CHECK_THROWS_AS(init_weights(wrong, opt), IoError);

  // wrong kind
  DualModelF right(tiny_config(16), HeadConfig{});
  CheckpointInfo classifier = info;
  classifier.kind = "classifier";
  save_checkpoint(dir / "cls.ckpt", classifier, enc);
  opt.checkpoint_path = dir / "cls.ckpt";
  CHECK_THROWS_AS(init_weights(right, opt), IoError);
}

TEST_CASE("generic_pretrained init requires a local weights file") {
  DualModelF model(tiny_config(), HeadConfig{});
  InitOptions opt;
  opt.mode = InitMode::generic_pretrained;
  CHECK_THROWS_AS(init_weights(model, opt), ConfigError);

  // a kind-"generic" trunk checkpoint satisfies it
  const fs::path dir = temp_dir("generic");
  DualModelF donor(tiny_config(), HeadConfig{});
  donor.init(88);
  CheckpointInfo info;
  info.kind = "generic";
  info.architecture = Architecture::tiny_conv;
  info.embed_dim = 16;
  std::vector<nn::Param<float>*> enc = donor.f.params();
  auto gp = donor.g.params();
  enc.insert(enc.end(), gp.begin(), gp.end());
  save_checkpoint(dir / "generic.ckpt", info, enc);
  opt.generic_weights_path = dir / "generic.ckpt";
  CHECK_NOTHROW(init_weights(model, opt));
}

}  // TEST_SUITE

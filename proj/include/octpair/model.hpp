#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "octpair/common.hpp"
#include "octpair/nn.hpp"
#include "octpair/preprocess.hpp"

namespace octpair {

enum class Architecture : int { resnet18_style = 0, tiny_conv = 1 };

inline std::string_view to_string(Architecture a) {
  return a == Architecture::resnet18_style ? "resnet18_style" : "tiny_conv";
}
Architecture architecture_from_string(std::string_view s);

struct EncoderConfig {
  Architecture architecture = Architecture::resnet18_style;
  int embed_dim = 512;
  int input_channels = 3;
};

void validate(const EncoderConfig& config);

enum class HeadMode : int { dual = 0, intensity_only = 1, phase_only = 2 };

inline std::string_view to_string(HeadMode m) {
  switch (m) {
    case HeadMode::dual: return "dual";
    case HeadMode::intensity_only: return "intensity_only";
    case HeadMode::phase_only: return "phase_only";
  }
  return "?";
}
HeadMode head_mode_from_string(std::string_view s);

struct HeadConfig {
  HeadMode mode = HeadMode::dual;
  int hidden_dim = 512;

  // [input, hidden, classes]; input doubles in dual mode
  std::array<int, 3> layer_dims(int embed_dim) const {
    return {embed_dim * (mode == HeadMode::dual ? 2 : 1), hidden_dim, kNumClasses};
  }
};

struct Embedding {
  VectorF vector;
  Modality source_modality = Modality::intensity;
  int time_window_index = 0;
};

// Replicates a single-channel crop into the three identical channels the
// encoders expect.
template <typename Scalar>
nn::FeatureMap<Scalar> replicate_channels(const Matrix<Scalar>& crop) {
  nn::FeatureMap<Scalar> fm = nn::FeatureMap<Scalar>::zeros(
      1, 3, static_cast<int>(crop.rows()), static_cast<int>(crop.cols()));
  for (int y = 0; y < fm.h; ++y)
    for (int x = 0; x < fm.w; ++x) {
      const Scalar v = crop(y, x);
      const Eigen::Index col = static_cast<Eigen::Index>(y) * fm.w + x;
      fm.data(0, col) = v;
      fm.data(1, col) = v;
      fm.data(2, col) = v;
    }
  return fm;
}

// Batch variant; all crops must share dims.
template <typename Scalar>
nn::FeatureMap<Scalar> replicate_channels_batch(
    const std::vector<const Matrix<Scalar>*>& crops) {
  if (crops.empty()) throw ConfigError("empty crop batch");
  const int h = static_cast<int>(crops.front()->rows());
  const int w = static_cast<int>(crops.front()->cols());
  nn::FeatureMap<Scalar> fm =
      nn::FeatureMap<Scalar>::zeros(static_cast<int>(crops.size()), 3, h, w);
  for (std::size_t i = 0; i < crops.size(); ++i) {
    const Matrix<Scalar>& crop = *crops[i];
    if (crop.rows() != h || crop.cols() != w)
      throw ConfigError("crop batch dims differ");
    auto dst = fm.item(static_cast<int>(i));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const Scalar v = crop(y, x);
        const Eigen::Index col = static_cast<Eigen::Index>(y) * w + x;
        dst(0, col) = v;
        dst(1, col) = v;
        dst(2, col) = v;
      }
  }
  return fm;
}

// One encoder branch. Branch f consumes intensity, branch g phase; encode()
// rejects the wrong modality.
template <typename Scalar>
class Encoder {
 public:
  Encoder(const EncoderConfig& config, std::string prefix, Modality expected);

  Matrix<Scalar> forward(const nn::FeatureMap<Scalar>& x, bool training);
  void backward(const Matrix<Scalar>& d_embed);

  Matrix<Scalar> encode_batch(const std::vector<const Matrix<Scalar>*>& crops,
                              Modality modality, bool training) {
    if (modality != expected_)
      throw ConfigError(std::string("branch ") + prefix_ + " expects " +
                        std::string(to_string(expected_)) + " crops, got " +
                        std::string(to_string(modality)));
    return forward(replicate_channels_batch<Scalar>(crops), training);
  }

  void init(std::uint64_t seed);
  std::vector<nn::Param<Scalar>*> params();
  int embed_dim() const { return config_.embed_dim; }
  const EncoderConfig& config() const { return config_; }
  Modality expected_modality() const { return expected_; }

 private:
  EncoderConfig config_;
  std::string prefix_;
  Modality expected_;
  std::vector<std::unique_ptr<nn::Layer<Scalar>>> layers_;
  nn::GlobalAvgPool<Scalar> gap_;
  std::unique_ptr<nn::Linear<Scalar>> proj_;  // tiny_conv only
};

// 3-layer MLP classification head with one ReLU.
template <typename Scalar>
class MlpHead {
 public:
  MlpHead(const HeadConfig& config, int embed_dim)
      : config_(config),
        dims_(config.layer_dims(embed_dim)),
        l1_("head.l1", dims_[0], dims_[1]),
        l2_("head.l2", dims_[1], dims_[2]) {}

  Matrix<Scalar> forward(const Matrix<Scalar>& x) {
    if (x.rows() != dims_[0])
      throw ConfigError("head input dim " + std::to_string(x.rows()) + ", expected " +
                        std::to_string(dims_[0]));
    Matrix<Scalar> hidden = l1_.forward(x);
    mask_ = (hidden.array() > Scalar(0)).template cast<Scalar>();
    return l2_.forward(hidden.cwiseProduct(mask_));
  }

  Matrix<Scalar> backward(const Matrix<Scalar>& dlogits) {
    Matrix<Scalar> dhidden = l2_.backward(dlogits).cwiseProduct(mask_);
    return l1_.backward(dhidden);
  }

  void init(std::uint64_t seed) {
    l1_.init(seed);
    l2_.init(seed);
  }
  void collect(std::vector<nn::Param<Scalar>*>& out) {
    l1_.collect(out);
    l2_.collect(out);
  }
  const HeadConfig& config() const { return config_; }

 private:
  HeadConfig config_;
  std::array<int, 3> dims_;
  nn::Linear<Scalar> l1_, l2_;
  Matrix<Scalar> mask_;
};

enum class InitMode : int { scratch = 0, generic_pretrained = 1, contrastive_checkpoint = 2 };

inline std::string_view to_string(InitMode m) {
  switch (m) {
    case InitMode::scratch: return "scratch";
    case InitMode::generic_pretrained: return "generic_pretrained";
    case InitMode::contrastive_checkpoint: return "contrastive_checkpoint";
  }
  return "?";
}
InitMode init_mode_from_string(std::string_view s);

// Both branches plus the classification head. f and g share architecture,
// never parameters.
template <typename Scalar>
struct DualModel {
  DualModel(const EncoderConfig& enc_cfg, const HeadConfig& head_cfg)
      : f(enc_cfg, "f", Modality::intensity),
        g(enc_cfg, "g", Modality::phase),
        head(head_cfg, enc_cfg.embed_dim) {}

  Encoder<Scalar> f;
  Encoder<Scalar> g;
  MlpHead<Scalar> head;

  void init(std::uint64_t seed) {
    f.init(hash_combine(seed, hash_str("f")));
    g.init(hash_combine(seed, hash_str("g")));
    head.init(hash_combine(seed, hash_str("head")));
  }

  std::vector<nn::Param<Scalar>*> all_params() {
    std::vector<nn::Param<Scalar>*> out = f.params();
    auto gp = g.params();
    out.insert(out.end(), gp.begin(), gp.end());
    head.collect(out);
    return out;
  }

  // Parameters the finetune step may update under the given head mode.
  std::vector<nn::Param<Scalar>*> trainable_params() {
    std::vector<nn::Param<Scalar>*> out;
    if (head.config().mode != HeadMode::phase_only) {
      auto fp = f.params();
      out.insert(out.end(), fp.begin(), fp.end());
    }
    if (head.config().mode != HeadMode::intensity_only) {
      auto gp = g.params();
      out.insert(out.end(), gp.begin(), gp.end());
    }
    head.collect(out);
    return out;
  }
};

using DualModelF = DualModel<float>;

// One crop through one branch, inference mode by default.
template <typename Scalar>
Embedding encode(Encoder<Scalar>& branch, const Matrix<Scalar>& crop, Modality modality,
                 int time_window_index = 0, bool training = false) {
  std::vector<const Matrix<Scalar>*> batch = {&crop};
  Matrix<Scalar> z = branch.encode_batch(batch, modality, training);
  Embedding embedding;
  embedding.vector = z.col(0).template cast<float>();
  embedding.source_modality = modality;
  embedding.time_window_index = time_window_index;
  return embedding;
}

// 4 logits for one or two embeddings per head mode; dual order is fixed
// (intensity, phase).
template <typename Scalar>
Vector<Scalar> classify(MlpHead<Scalar>& head, const std::vector<Embedding>& embeddings);

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'O', 'C', 'T', 'P', 'C', 'K', 'P', '1'};

struct CheckpointInfo {
  std::string kind;  // "pretrain", "generic" or "classifier"
  Architecture architecture = Architecture::resnet18_style;
  int embed_dim = 512;
  std::optional<HeadMode> head_mode;
  int hidden_dim = 512;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointInfo& info,
                     const std::vector<nn::Param<float>*>& params);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

// Restores exactly the tensors named by `params`; throws on any missing name,
// shape mismatch, or version/config mismatch against `expect`.
void load_checkpoint(const std::filesystem::path& path, const CheckpointInfo& expect,
                     const std::vector<nn::Param<float>*>& params);

struct InitOptions {
  InitMode mode = InitMode::scratch;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_path;       // contrastive_checkpoint
  std::filesystem::path generic_weights_path;  // generic_pretrained (optional baseline)
};

// scratch: seeded random. generic_pretrained: encoder trunks from a local
// large-corpus weights file, hard error when absent. contrastive_checkpoint:
// f and g restored from pretraining, head freshly seeded.
void init_weights(DualModelF& model, const InitOptions& options);

std::uint64_t params_hash(const std::vector<nn::Param<float>*>& params);

}  // namespace octpair

#include "octpair/model.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace octpair {

Architecture architecture_from_string(std::string_view s) {
  if (s == "resnet18_style") return Architecture::resnet18_style;
  if (s == "tiny_conv") return Architecture::tiny_conv;
  throw ConfigError("unknown architecture: " + std::string(s));
}

HeadMode head_mode_from_string(std::string_view s) {
  if (s == "dual") return HeadMode::dual;
  if (s == "intensity_only") return HeadMode::intensity_only;
  if (s == "phase_only") return HeadMode::phase_only;
  throw ConfigError("unknown modality mode: " + std::string(s));
}

InitMode init_mode_from_string(std::string_view s) {
  if (s == "scratch") return InitMode::scratch;
  if (s == "generic_pretrained") return InitMode::generic_pretrained;
  if (s == "contrastive_checkpoint") return InitMode::contrastive_checkpoint;
  throw ConfigError("unknown init mode: " + std::string(s));
}

void validate(const EncoderConfig& config) {
  if (config.embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
  if (config.architecture == Architecture::resnet18_style && config.embed_dim != 512)
    throw ConfigError("resnet18_style fixes embed_dim = 512");
  if (config.input_channels != 3) throw ConfigError("encoders take 3-channel input");
}

template <typename Scalar>
Encoder<Scalar>::Encoder(const EncoderConfig& config, std::string prefix,
                         Modality expected)
    : config_(config), prefix_(std::move(prefix)), expected_(expected) {
  validate(config);
  using nn::BasicBlock;
  using nn::BatchNorm2d;
  using nn::Conv2d;
  using nn::MaxPool2d;
  using nn::Relu;

  if (config.architecture == Architecture::tiny_conv) {
    const int channels[] = {8, 16, 32, 64};
    int in_c = config.input_channels;
    for (int i = 0; i < 4; ++i) {
      const std::string base = prefix_ + ".block" + std::to_string(i);
      layers_.push_back(std::make_unique<Conv2d<Scalar>>(base + ".conv", in_c,
                                                         channels[i], 3, 2, 1));
      layers_.push_back(std::make_unique<BatchNorm2d<Scalar>>(base + ".bn", channels[i]));
      layers_.push_back(std::make_unique<Relu<Scalar>>());
      in_c = channels[i];
    }
    proj_ = std::make_unique<nn::Linear<Scalar>>(prefix_ + ".proj", 64, config.embed_dim);
    return;
  }

  layers_.push_back(std::make_unique<Conv2d<Scalar>>(prefix_ + ".conv1",
                                                     config.input_channels, 64, 7, 2, 3));
  layers_.push_back(std::make_unique<BatchNorm2d<Scalar>>(prefix_ + ".bn1", 64));
  layers_.push_back(std::make_unique<Relu<Scalar>>());
  layers_.push_back(std::make_unique<MaxPool2d<Scalar>>(3, 2, 1));
  const int stage_channels[] = {64, 128, 256, 512};
  int in_c = 64;
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < 2; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string base =
          prefix_ + ".layer" + std::to_string(s + 1) + "." + std::to_string(b);
      layers_.push_back(std::make_unique<BasicBlock<Scalar>>(base, in_c,
                                                             stage_channels[s], stride));
      in_c = stage_channels[s];
    }
  }
}

template <typename Scalar>
Matrix<Scalar> Encoder<Scalar>::forward(const nn::FeatureMap<Scalar>& x, bool training) {
  nn::FeatureMap<Scalar> cur = x;
  for (auto& layer : layers_) cur = layer->forward(cur, training);
  Matrix<Scalar> pooled = gap_.forward(cur);
  return proj_ ? proj_->forward(pooled) : pooled;
}

template <typename Scalar>
void Encoder<Scalar>::backward(const Matrix<Scalar>& d_embed) {
  Matrix<Scalar> dpooled = proj_ ? proj_->backward(d_embed) : d_embed;
  nn::FeatureMap<Scalar> cur = gap_.backward(dpooled);
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
    cur = (*it)->backward(cur);
}

template <typename Scalar>
void Encoder<Scalar>::init(std::uint64_t seed) {
  for (auto& layer : layers_) layer->init(seed);
  if (proj_) proj_->init(seed);
}

template <typename Scalar>
std::vector<nn::Param<Scalar>*> Encoder<Scalar>::params() {
  std::vector<nn::Param<Scalar>*> out;
  for (auto& layer : layers_) layer->collect(out);
  if (proj_) proj_->collect(out);
  return out;
}

template class Encoder<float>;
template class Encoder<double>;

template <typename Scalar>
Vector<Scalar> classify(MlpHead<Scalar>& head, const std::vector<Embedding>& embeddings) {
  const HeadMode mode = head.config().mode;
  const std::size_t expected = mode == HeadMode::dual ? 2 : 1;
  if (embeddings.size() != expected)
    throw ConfigError("head mode " + std::string(to_string(mode)) + " takes " +
                      std::to_string(expected) + " embeddings");
  if (mode == HeadMode::dual) {
    if (embeddings[0].source_modality != Modality::intensity ||
        embeddings[1].source_modality != Modality::phase)
      throw ConfigError("dual head takes (intensity, phase) in that order");
  } else {
    const Modality want = mode == HeadMode::intensity_only ? Modality::intensity
                                                           : Modality::phase;
    if (embeddings[0].source_modality != want)
      throw ConfigError("embedding modality does not match head mode");
  }
  Eigen::Index total = 0;
  for (const Embedding& e : embeddings) total += e.vector.size();
  Matrix<Scalar> input(total, 1);
  Eigen::Index at = 0;
  for (const Embedding& e : embeddings) {
    input.col(0).segment(at, e.vector.size()) = e.vector.template cast<Scalar>();
    at += e.vector.size();
  }
  return head.forward(input).col(0);
}

template Vector<float> classify(MlpHead<float>&, const std::vector<Embedding>&);

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const CheckpointInfo& info,
                     const std::vector<nn::Param<float>*>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for write: " + path.string());

  nlohmann::json header = {
      {"version", kCheckpointVersion},
      {"kind", info.kind},
      {"architecture", std::string(to_string(info.architecture))},
      {"embed_dim", info.embed_dim},
      {"seed", info.seed},
      {"tensors", nlohmann::json::array()},
  };
  if (info.head_mode) {
    header["head_mode"] = std::string(to_string(*info.head_mode));
    header["hidden_dim"] = info.hidden_dim;
  }
  for (const nn::Param<float>* p : params)
    header["tensors"].push_back(
        {{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});

  const std::string header_line = header.dump();
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  out.write(header_line.data(), static_cast<std::streamsize>(header_line.size()));
  out.put('\n');

  std::vector<float> buf;
  for (const nn::Param<float>* p : params) {
    buf.resize(static_cast<std::size_t>(p->value.size()));
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) buf[k++] = p->value(r, c);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

namespace {

struct TensorLoc {
  Eigen::Index rows = 0, cols = 0;
  std::streamoff offset = 0;
};

struct ParsedCheckpoint {
  CheckpointInfo info;
  std::map<std::string, TensorLoc> tensors;
  std::streamoff payload_start = 0;
};

ParsedCheckpoint parse_checkpoint_header(std::ifstream& in,
                                         const std::filesystem::path& path) {
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw IoError("not a checkpoint file: " + path.string());
  std::string header_line;
  if (!std::getline(in, header_line))
    throw IoError("missing checkpoint header: " + path.string());
  nlohmann::json header = nlohmann::json::parse(header_line, nullptr, false);
  if (header.is_discarded())
    throw IoError("malformed checkpoint header: " + path.string());
  if (header.value("version", -1) != kCheckpointVersion)
    throw IoError("unsupported checkpoint version in " + path.string());

  ParsedCheckpoint parsed;
  parsed.info.kind = header.value("kind", "");
  parsed.info.architecture =
      architecture_from_string(header.at("architecture").get<std::string>());
  parsed.info.embed_dim = header.at("embed_dim").get<int>();
  parsed.info.seed = header.value("seed", std::uint64_t{0});
  if (header.contains("head_mode")) {
    parsed.info.head_mode = head_mode_from_string(header.at("head_mode").get<std::string>());
    parsed.info.hidden_dim = header.value("hidden_dim", 512);
  }

  parsed.payload_start = in.tellg();
  std::streamoff offset = parsed.payload_start;
  for (const auto& t : header.at("tensors")) {
    TensorLoc loc;
    loc.rows = t.at("rows").get<Eigen::Index>();
    loc.cols = t.at("cols").get<Eigen::Index>();
    loc.offset = offset;
    offset += static_cast<std::streamoff>(loc.rows * loc.cols * sizeof(float));
    parsed.tensors[t.at("name").get<std::string>()] = loc;
  }
  return parsed;
}

}  // namespace

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  return parse_checkpoint_header(in, path).info;
}

void load_checkpoint(const std::filesystem::path& path, const CheckpointInfo& expect,
                     const std::vector<nn::Param<float>*>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  ParsedCheckpoint parsed = parse_checkpoint_header(in, path);

  if (!expect.kind.empty() && parsed.info.kind != expect.kind)
    throw IoError("checkpoint kind is '" + parsed.info.kind + "', expected '" +
                  expect.kind + "': " + path.string());
  if (parsed.info.architecture != expect.architecture)
    throw IoError("checkpoint architecture mismatch: " + path.string());
  if (parsed.info.embed_dim != expect.embed_dim)
    throw IoError("checkpoint embed_dim " + std::to_string(parsed.info.embed_dim) +
                  " does not match configured " + std::to_string(expect.embed_dim) +
                  ": " + path.string());
  if (expect.head_mode && parsed.info.head_mode != expect.head_mode)
    throw IoError("checkpoint head mode mismatch: " + path.string());

  std::vector<float> buf;
  for (nn::Param<float>* p : params) {
    auto it = parsed.tensors.find(p->name);
    if (it == parsed.tensors.end())
      throw IoError("checkpoint lacks tensor '" + p->name + "': " + path.string());
    const TensorLoc& loc = it->second;
    if (loc.rows != p->value.rows() || loc.cols != p->value.cols())
      throw IoError("tensor '" + p->name + "' shape mismatch in " + path.string());
    in.seekg(loc.offset);
    buf.resize(static_cast<std::size_t>(loc.rows * loc.cols));
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw IoError("truncated checkpoint: " + path.string());
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < loc.rows; ++r)
      for (Eigen::Index c = 0; c < loc.cols; ++c) p->value(r, c) = buf[k++];
  }
}

void init_weights(DualModelF& model, const InitOptions& options) {
  model.init(options.seed);
  if (options.mode == InitMode::scratch) return;

  if (options.mode == InitMode::contrastive_checkpoint) {
    if (options.checkpoint_path.empty())
      throw ConfigError("contrastive_checkpoint init needs a checkpoint path");
    CheckpointInfo expect;
    expect.kind = "pretrain";
    expect.architecture = model.f.config().architecture;
    expect.embed_dim = model.f.config().embed_dim;
    std::vector<nn::Param<float>*> enc = model.f.params();
    auto gp = model.g.params();
    enc.insert(enc.end(), gp.begin(), gp.end());
    load_checkpoint(options.checkpoint_path, expect, enc);
    return;
  }

  // generic_pretrained: optional baseline backed by locally available weights
  std::filesystem::path path = options.generic_weights_path;
  if (path.empty())
    if (const char* env = std::getenv("OCTPAIR_GENERIC_WEIGHTS")) path = env;
  if (path.empty() || !std::filesystem::exists(path))
    throw ConfigError(
        "generic_pretrained init needs a local weights file: convert "
        "publicly available classification weights into a checkpoint of kind "
        "'generic' holding tensors f.* and g.*, then point "
        "model.generic_weights_path or OCTPAIR_GENERIC_WEIGHTS at it");
  CheckpointInfo expect;
  expect.kind = "generic";
  expect.architecture = model.f.config().architecture;
  expect.embed_dim = model.f.config().embed_dim;
  std::vector<nn::Param<float>*> enc = model.f.params();
  auto gp = model.g.params();
  enc.insert(enc.end(), gp.begin(), gp.end());
  load_checkpoint(path, expect, enc);
}

std::uint64_t params_hash(const std::vector<nn::Param<float>*>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const nn::Param<float>* p : params) {
    feed(p->name.data(), p->name.size());
    for (Eigen::Index c = 0; c < p->value.cols(); ++c)
      feed(p->value.col(c).data(), sizeof(float) * static_cast<std::size_t>(p->value.rows()));
  }
  return h;
}

}  // namespace octpair

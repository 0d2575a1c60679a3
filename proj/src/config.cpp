#include "qscraft/config.hpp"

#include <fstream>

#include "qscraft/error.hpp"

namespace qscraft {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, root, image_size,
                                                train_sequences, test_sequences,
                                                frames_per_sequence, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(
    CodecConfig, downsample_depth, channels, codebook_size, code_dim,
    commitment_beta, perceptual_weight, adversarial_weight, adversarial_start,
    discriminator_channels, dead_code_steps, learning_rate, adam_beta1,
    adam_beta2, lr_halving_steps, batch_size, steps, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ConditionConfig, keypoints,
                                                hidden1, hidden2)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(
    TransformerConfig, layers, heads, width, ff_multiplier, learning_rate,
    adam_beta1, adam_beta2, batch_size, steps, warmup_steps, use_roi,
    roi_weight, roi_pad, top_k, temperature, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ProbeConfig, channels,
                                                feature_dim, steps, batch_size,
                                                learning_rate, seed)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainingIo, work_dir, log_every,
                                                checkpoint_every)

nlohmann::json to_json(const RunConfig& config) {
  return nlohmann::json{{"data", config.data},
                        {"codec", config.codec},
                        {"condition", config.condition},
                        {"transformer", config.transformer},
                        {"probe", config.probe},
                        {"io", config.io}};
}

RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) reject("config must be a JSON object");
  // Unknown keys are rejected so a typo cannot silently fall back to a default.
  const auto known = to_json(RunConfig{});
  for (const auto& [section, body] : j.items()) {
    if (!known.contains(section)) reject("unknown config section '" + section + "'");
    if (!body.is_object()) reject("config section '" + section + "' must be an object");
    for (const auto& [key, value] : body.items()) {
      if (!known[section].contains(key)) reject("unknown config key '" + section + "." + key + "'");
    }
  }
  RunConfig c;
  if (j.contains("data")) c.data = j.at("data").get<DataConfig>();
  if (j.contains("codec")) c.codec = j.at("codec").get<CodecConfig>();
  if (j.contains("condition")) c.condition = j.at("condition").get<ConditionConfig>();
  if (j.contains("transformer")) c.transformer = j.at("transformer").get<TransformerConfig>();
  if (j.contains("probe")) c.probe = j.at("probe").get<ProbeConfig>();
  if (j.contains("io")) c.io = j.at("io").get<TrainingIo>();
  return c;
}

void RunConfig::validate() const {
  const int d = codec.downsample_depth;
  if (d < 0 || d > 5) reject("codec.downsample_depth must be in [0,5]");
  if (data.image_size <= 0 || data.image_size % (1 << d) != 0) {
    reject("data.image_size must be a positive multiple of 2^downsample_depth");
  }
  if (data.image_size > 128) reject("data.image_size above 128 is not supported");
  if (codec.codebook_size < 2) reject("codec.codebook_size must be >= 2");
  if (codec.code_dim < 1) reject("codec.code_dim must be >= 1");
  if (condition.keypoints < 1) reject("condition.keypoints must be >= 1");
  if (transformer.width % transformer.heads != 0) {
    reject("transformer.width must be divisible by transformer.heads");
  }
  if (transformer.top_k < 1) reject("transformer.top_k must be >= 1");
  if (transformer.temperature <= 0) reject("transformer.temperature must be > 0");
  if (transformer.roi_weight <= 0) reject("transformer.roi_weight must be > 0");
  if (data.frames_per_sequence < 2) reject("data.frames_per_sequence must be >= 2");
}

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t RunConfig::hash() const {
  auto j = to_json(*this);
  j.erase("io");
  j["data"].erase("root");
  for (const char* section : {"codec", "transformer", "probe"}) {
    j[section].erase("steps");
  }
  return fnv1a64(j.dump());
}

uint64_t RunConfig::codec_hash() const {
  auto j = nlohmann::json{{"data", to_json(*this)["data"]}, {"codec", to_json(*this)["codec"]}};
  j["data"].erase("root");
  j["codec"].erase("steps");
  return fnv1a64(j.dump());
}

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t x = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  x ^= x >> 31;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  return x;
}

RunConfig RunConfig::acceptance_profile() {
  RunConfig c;
  c.data.image_size = 32;
  c.data.train_sequences = 10;
  c.data.test_sequences = 2;
  c.data.frames_per_sequence = 5;
  c.codec.channels = 64;
  c.codec.codebook_size = 128;
  c.codec.code_dim = 32;
  c.codec.learning_rate = 1e-3;
  c.codec.batch_size = 4;
  c.codec.steps = 3000;
  c.codec.dead_code_steps = 300;
  c.codec.adversarial_start = 2500;
  c.transformer.layers = 2;
  c.transformer.heads = 4;
  c.transformer.width = 64;
  c.transformer.learning_rate = 1e-3;
  c.transformer.batch_size = 16;
  c.transformer.steps = 3000;
  c.transformer.warmup_steps = 100;
  c.probe.steps = 1500;
  c.io.work_dir = "runs/acceptance";
  c.io.log_every = 100;
  c.io.checkpoint_every = 1000;
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    reject("malformed config " + path.string() + ": " + e.what());
  }
  auto c = config_from_json(j);
  c.validate();
  return c;
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write config " + path.string());
  out << to_json(config).dump(2) << "\n";
}

}  // namespace qscraft

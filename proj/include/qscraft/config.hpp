#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

namespace qscraft {

struct DataConfig {
  std::string root = "data";
  int image_size = 64;
  int train_sequences = 60;
  int test_sequences = 10;
  int frames_per_sequence = 16;
  uint64_t seed = 1;
};

struct CodecConfig {
  int downsample_depth = 2;
  int channels = 64;
  int codebook_size = 256;
  int code_dim = 64;
  double commitment_beta = 0.25;
  double perceptual_weight = 0.1;
  double adversarial_weight = 0.1;
  int adversarial_start = 10000;
  int discriminator_channels = 32;
  int dead_code_steps = 2000;
  double learning_rate = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  int lr_halving_steps = 70000;
  int batch_size = 2;
  int steps = 20000;
  uint64_t seed = 7;
};

struct ConditionConfig {
  int keypoints = 8;
  int hidden1 = 64;
  int hidden2 = 128;
};

struct TransformerConfig {
  int layers = 4;
  int heads = 4;
  int width = 128;  // n_c, shared with the pose encoder output
  int ff_multiplier = 4;
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.95;
  int batch_size = 12;
  int steps = 30000;
  int warmup_steps = 1000;
  bool use_roi = true;
  double roi_weight = 5.0;
  int roi_pad = 1;
  int top_k = 5;
  double temperature = 1.0;
  uint64_t seed = 11;
};

struct ProbeConfig {
  int channels = 32;
  int feature_dim = 64;
  int steps = 3000;
  int batch_size = 16;
  double learning_rate = 1e-3;
  uint64_t seed = 3;
};

struct TrainingIo {
  std::string work_dir = "runs/desk";
  int log_every = 50;
  int checkpoint_every = 1000;
};

// All desk-scale hyperparameters; serialized into every checkpoint.
struct RunConfig {
  DataConfig data;
  CodecConfig codec;
  ConditionConfig condition;
  TransformerConfig transformer;
  ProbeConfig probe;
  TrainingIo io;

  int latent_side() const { return data.image_size >> codec.downsample_depth; }
  int sequence_length() const { return latent_side() * latent_side(); }

  // Throws kRejectedInput describing the first inconsistency.
  void validate() const;

  // Hash over everything that defines data and model shape; budgets, paths
  // and logging cadence are excluded so a run can be extended on resume.
  uint64_t hash() const;
  // Hash over the data and codec sections only; stage-1 checkpoints carry it
  // so stage 2 can be reconfigured without invalidating the codec.
  uint64_t codec_hash() const;

  // Desk-scale profile used by the acceptance suite: 32×32 frames, small
  // transformer; everything else as the defaults.
  static RunConfig acceptance_profile();
};

nlohmann::json to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& config);

uint64_t fnv1a64(std::string_view bytes);

// Stateless 64-bit seed mixing for deriving per-item generator seeds.
uint64_t mix_seed(uint64_t a, uint64_t b);

}  // namespace qscraft

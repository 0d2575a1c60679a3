#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "qscraft/codec.hpp"
#include "qscraft/condition.hpp"
#include "qscraft/config.hpp"
#include "qscraft/probe.hpp"
#include "qscraft/synthdata.hpp"
#include "qscraft/transformer.hpp"

namespace qscraft::pipeline {

namespace fs = std::filesystem;

// File names inside a run's work directory.
struct Artifacts {
  fs::path dir;

  fs::path codec() const { return dir / "codec.ckpt"; }
  fs::path transformer() const { return dir / "transformer.ckpt"; }
  fs::path probe() const { return dir / "probe.ckpt"; }
  fs::path config() const { return dir / "config.json"; }
  fs::path stage1_log() const { return dir / "stage1_loss.csv"; }
  fs::path stage2_log() const { return dir / "stage2_loss.csv"; }
};

struct TrainOptions {
  fs::path work_dir;
  bool resume = true;
  std::ostream* log = nullptr;
  // Stop after this global step even if the configured budget is larger.
  std::optional<int64_t> stop_at;
  // Override the checkpoint file name (used by the RoI ablation).
  std::optional<fs::path> checkpoint_path;
  std::optional<fs::path> loss_log_path;
};

struct TrainSummary {
  int64_t first_step = 0;
  int64_t final_step = 0;
  std::vector<double> losses;      // optimized loss per step run
  std::vector<double> accuracies;  // stage 2 only: teacher-forced batch accuracy
};

// ---- stage 1 --------------------------------------------------------------

codec::CodecModel make_codec(const RunConfig& config);

codec::CodecModel train_stage1(const RunConfig& config,
                               const std::vector<synthdata::Sequence>& sequences,
                               metrics::PoseProbe* probe, const TrainOptions& options,
                               TrainSummary* summary = nullptr);

// ---- stage 2 --------------------------------------------------------------

// Latents and code indices of every frame of a sequence under a frozen codec.
struct EncodedSequence {
  torch::Tensor latents;  // T×c_q×h×w
  torch::Tensor indices;  // T×h×w
  std::vector<condition::PoseFrame> poses;
};

std::vector<EncodedSequence> encode_sequences(codec::CodecModel& codec,
                                              const std::vector<synthdata::Sequence>& sequences);

// (sequence, source frame, target frame)
using PairRef = std::array<int64_t, 3>;

struct PairBatch {
  torch::Tensor source;   // B×l
  torch::Tensor poses;    // B×n×2 (driving = target frame pose)
  torch::Tensor target;   // B×l patchwork indices of the target w.r.t. the source bag
  torch::Tensor weights;  // B×l RoI weights (ones when RoI is disabled)
};

PairBatch make_pair_batch(const std::vector<EncodedSequence>& encoded,
                          const std::vector<PairRef>& pairs, const torch::Tensor& codebook,
                          const RunConfig& config);

std::vector<PairRef> all_pairs(const std::vector<EncodedSequence>& encoded);

scrabble_transformer::ScrabbleModel make_scrabble_model(const RunConfig& config);

scrabble_transformer::ScrabbleModel train_stage2(const RunConfig& config, codec::CodecModel& codec,
                                                 const std::vector<synthdata::Sequence>& sequences,
                                                 const TrainOptions& options,
                                                 TrainSummary* summary = nullptr);

// Next-index accuracy with ground-truth prefixes over `pairs`.
double teacher_forced_accuracy(scrabble_transformer::ScrabbleModel& model,
                               const std::vector<EncodedSequence>& encoded,
                               const std::vector<PairRef>& pairs, const torch::Tensor& codebook,
                               const RunConfig& config);

// ---- inference ------------------------------------------------------------

struct AnimationResult {
  std::vector<Image> frames;
  std::vector<torch::Tensor> index_grids;  // h×w per frame
  std::vector<int64_t> source_bag;
  nlohmann::json trace;
};

// x_t = G(T(E(x_s), c)) for every driving pose; frame f samples with seed
// policy.seed + f.
AnimationResult animate(codec::CodecModel& codec, scrabble_transformer::ScrabbleModel& model,
                        const Image& source, const std::vector<condition::PoseFrame>& driving,
                        const scrabble_transformer::SamplingPolicy& policy, bool record_steps = false);

struct TrainedPipeline {
  RunConfig config;
  codec::CodecModel codec{nullptr};
  scrabble_transformer::ScrabbleModel model{nullptr};
};

TrainedPipeline load_pipeline(const fs::path& work_dir);
metrics::PoseProbe load_probe(const fs::path& work_dir);
metrics::PoseProbe make_probe(const RunConfig& config);

// ---- evaluation -----------------------------------------------------------

// AKD/MKR between detector keypoints of reference and generated frames,
// FID surrogate on full frames and on keypoint-box crops, mean PSNR. When
// `ground_truth` is given, AKD against it is reported as "akd_ground_truth".
nlohmann::json evaluate(metrics::PoseProbe& probe, const std::vector<Image>& generated,
                        const std::vector<Image>& reference,
                        const std::vector<condition::PoseFrame>* ground_truth = nullptr);

std::string format_report(const nlohmann::json& report);

// ---- commands -------------------------------------------------------------

nlohmann::json cmd_make_data(const RunConfig& config, bool force);
void cmd_train(int stage, const RunConfig& config, const TrainOptions& options);
nlohmann::json cmd_animate(const fs::path& source_image, const fs::path& poses,
                           const fs::path& work_dir, const fs::path& out_dir,
                           const scrabble_transformer::SamplingPolicy& policy);
nlohmann::json cmd_eval(const fs::path& generated_dir, const fs::path& reference_dir,
                        const fs::path& work_dir);
nlohmann::json cmd_plot_histograms(const fs::path& work_dir, const std::vector<fs::path>& images,
                                   const fs::path& out_dir);

// Sorted frame_*.png paths of a directory.
std::vector<fs::path> list_frames(const fs::path& dir);

}  // namespace qscraft::pipeline

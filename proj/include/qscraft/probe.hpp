#pragma once

#include <ostream>
#include <vector>

#include <torch/torch.h>

#include "qscraft/condition.hpp"
#include "qscraft/config.hpp"
#include "qscraft/image.hpp"
#include "qscraft/synthdata.hpp"

namespace qscraft::metrics {

// Small conv net trained on synthetic sequences. Its penultimate layer gives
// the FID-surrogate embedding, its conv activations the perceptual features,
// and its keypoint/visibility heads stand in for a pose detector.
class PoseProbeImpl : public torch::nn::Module {
 public:
  PoseProbeImpl(int64_t image_size, const ProbeConfig& config, int64_t keypoints);

  struct Output {
    torch::Tensor features;           // B×D
    torch::Tensor class_logits;       // B×kinds
    torch::Tensor keypoints;          // B×n×2, normalized
    torch::Tensor visibility_logits;  // B×n
  };

  Output forward(const torch::Tensor& images);
  std::vector<torch::Tensor> feature_maps(const torch::Tensor& images);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, conv3_{nullptr}, conv4_{nullptr};
  torch::nn::Linear embed_{nullptr}, classify_{nullptr}, locate_{nullptr}, visible_{nullptr};
  int64_t keypoints_;
};
TORCH_MODULE(PoseProbe);

struct ProbeTrainingReport {
  double final_loss = 0;
  double class_accuracy = 0;
  double mean_keypoint_error_px = 0;
};

// Trains on every frame of `sequences` with light noise augmentation.
ProbeTrainingReport train_probe(PoseProbe& probe, const std::vector<synthdata::Sequence>& sequences,
                                const ProbeConfig& config, std::ostream* log = nullptr);

// Keypoints with visibility logit < 0 reported as the (−1,−1) sentinel.
std::vector<condition::PoseFrame> detect_keypoints(PoseProbe& probe, const std::vector<Image>& images);

// N×D penultimate features.
torch::Tensor embed(PoseProbe& probe, const std::vector<Image>& images);

}  // namespace qscraft::metrics

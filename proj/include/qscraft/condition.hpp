#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "qscraft/config.hpp"

namespace qscraft::condition {

inline constexpr double kOccluded = -1.0;

struct Keypoint {
  double x = kOccluded;
  double y = kOccluded;

  bool visible() const { return !(x == kOccluded && y == kOccluded); }
  static Keypoint occluded() { return {}; }
};

// n keypoints in normalized [0,1] coordinates, (−1,−1) when occluded.
struct PoseFrame {
  std::vector<Keypoint> points;

  size_t size() const { return points.size(); }
  int64_t visible_count() const;
  // Throws kRejectedInput if any coordinate is neither in [0,1] nor the sentinel.
  void validate() const;
  // n×2 float tensor (sentinels kept as −1).
  torch::Tensor to_tensor() const;
};

struct RawKeypoint {
  double x = 0;  // pixels
  double y = 0;
  bool occluded = false;
};

PoseFrame normalize_keypoints(std::span<const RawKeypoint> raw, int width, int height);
std::vector<RawKeypoint> denormalize_keypoints(const PoseFrame& pose, int width, int height);

// Three fully-connected layers with ReLU, shared across keypoints:
// 2 -> hidden1 -> hidden2 -> n_c.
class PoseEncoderImpl : public torch::nn::Module {
 public:
  PoseEncoderImpl(int64_t hidden1, int64_t hidden2, int64_t out_dim);
  // B×n×2 -> B×n×n_c
  torch::Tensor forward(const torch::Tensor& points);

 private:
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr}, fc3_{nullptr};
};
TORCH_MODULE(PoseEncoder);

// n×n_c condition tokens c = F(p).
struct ConditionSequence {
  torch::Tensor tokens;
};

ConditionSequence encode_pose(const PoseFrame& pose, PoseEncoder& encoder);

// Driving-pose exchange format: [{"frame": i, "points": [[x,y], ...]}, ...].
nlohmann::json poses_to_json(const std::vector<PoseFrame>& frames);
std::vector<PoseFrame> poses_from_json(const nlohmann::json& j);
void write_poses(const std::filesystem::path& path, const std::vector<PoseFrame>& frames);
std::vector<PoseFrame> read_poses(const std::filesystem::path& path);

}  // namespace qscraft::condition

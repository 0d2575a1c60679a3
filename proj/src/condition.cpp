#include "qscraft/condition.hpp"

#include <algorithm>
#include <fstream>

#include "qscraft/error.hpp"

namespace qscraft::condition {

namespace nn = torch::nn;

int64_t PoseFrame::visible_count() const {
  int64_t count = 0;
  for (const auto& p : points) count += p.visible() ? 1 : 0;
  return count;
}

void PoseFrame::validate() const {
  for (size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!p.visible()) continue;
    if (!(p.x >= 0.0 && p.x <= 1.0 && p.y >= 0.0 && p.y <= 1.0)) {
      reject("keypoint " + std::to_string(i) + " outside [0,1] and not the occlusion sentinel");
    }
  }
}

torch::Tensor PoseFrame::to_tensor() const {
  auto t = torch::empty({static_cast<int64_t>(points.size()), 2}, torch::kFloat32);
  auto a = t.accessor<float, 2>();
  for (size_t i = 0; i < points.size(); ++i) {
    a[static_cast<int64_t>(i)][0] = static_cast<float>(points[i].x);
    a[static_cast<int64_t>(i)][1] = static_cast<float>(points[i].y);
  }
  return t;
}

PoseFrame normalize_keypoints(std::span<const RawKeypoint> raw, int width, int height) {
  if (width <= 0 || height <= 0) reject("image size must be positive");
  PoseFrame pose;
  pose.points.reserve(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    const auto& r = raw[i];
    if (r.occluded) {
      pose.points.push_back(Keypoint::occluded());
      continue;
    }
    if (!(r.x >= 0 && r.x <= width && r.y >= 0 && r.y <= height)) {
      reject("keypoint " + std::to_string(i) + " lies outside the image");
    }
    pose.points.push_back({r.x / width, r.y / height});
  }
  return pose;
}

std::vector<RawKeypoint> denormalize_keypoints(const PoseFrame& pose, int width, int height) {
  std::vector<RawKeypoint> raw;
  raw.reserve(pose.size());
  for (const auto& p : pose.points) {
    if (!p.visible()) {
      raw.push_back({0, 0, true});
    } else {
      raw.push_back({p.x * width, p.y * height, false});
    }
  }
  return raw;
}

PoseEncoderImpl::PoseEncoderImpl(int64_t hidden1, int64_t hidden2, int64_t out_dim) {
  fc1_ = register_module("fc1", nn::Linear(2, hidden1));
  fc2_ = register_module("fc2", nn::Linear(hidden1, hidden2));
  fc3_ = register_module("fc3", nn::Linear(hidden2, out_dim));
}

torch::Tensor PoseEncoderImpl::forward(const torch::Tensor& points) {
  return fc3_(torch::relu(fc2_(torch::relu(fc1_(points)))));
}

ConditionSequence encode_pose(const PoseFrame& pose, PoseEncoder& encoder) {
  pose.validate();
  torch::NoGradGuard no_grad;
  auto dtype = encoder->parameters().front().scalar_type();
  auto tokens = encoder(pose.to_tensor().to(dtype).unsqueeze(0));
  return ConditionSequence{tokens[0]};
}

nlohmann::json poses_to_json(const std::vector<PoseFrame>& frames) {
  auto out = nlohmann::json::array();
  for (size_t f = 0; f < frames.size(); ++f) {
    auto points = nlohmann::json::array();
    for (const auto& p : frames[f].points) points.push_back({p.x, p.y});
    out.push_back({{"frame", f}, {"points", points}});
  }
  return out;
}

std::vector<PoseFrame> poses_from_json(const nlohmann::json& j) {
  if (!j.is_array()) reject("pose file must hold a JSON array");
  std::vector<std::pair<int64_t, PoseFrame>> records;
  for (const auto& rec : j) {
    if (!rec.contains("frame") || !rec.contains("points")) {
      reject("pose record needs \"frame\" and \"points\"");
    }
    if (!rec.at("frame").is_number_integer() || !rec.at("points").is_array()) {
      reject("pose record needs an integer \"frame\" and a \"points\" array");
    }
    PoseFrame pose;
    for (const auto& pt : rec.at("points")) {
      if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number()) {
        reject("pose point must be [x, y]");
      }
      pose.points.push_back({pt[0].get<double>(), pt[1].get<double>()});
    }
    pose.validate();
    if (!records.empty() && records.front().second.size() != pose.size()) {
      reject("pose records disagree on the keypoint count");
    }
    records.emplace_back(rec.at("frame").get<int64_t>(), std::move(pose));
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (size_t i = 1; i < records.size(); ++i) {
    if (records[i].first == records[i - 1].first) {
      reject("duplicate pose record for frame " + std::to_string(records[i].first));
    }
  }
  std::vector<PoseFrame> frames;
  for (auto& [_, pose] : records) frames.push_back(std::move(pose));
  return frames;
}

void write_poses(const std::filesystem::path& path, const std::vector<PoseFrame>& frames) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write poses " + path.string());
  out << poses_to_json(frames).dump() << "\n";
}

std::vector<PoseFrame> read_poses(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "cannot open pose file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    reject("malformed pose file " + path.string() + ": " + e.what());
  }
  return poses_from_json(j);
}

}  // namespace qscraft::condition

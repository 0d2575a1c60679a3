#include "qscraft/probe.hpp"

#include <random>

#include "qscraft/error.hpp"

namespace qscraft::metrics {

namespace nn = torch::nn;

PoseProbeImpl::PoseProbeImpl(int64_t image_size, const ProbeConfig& config, int64_t keypoints)
    : keypoints_(keypoints) {
  if (image_size % 8 != 0) reject("probe needs image size divisible by 8");
  const int64_t c = config.channels;
  conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(3, c, 3).padding(1)));
  conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(c, c, 4).stride(2).padding(1)));
  conv3_ = register_module("conv3", nn::Conv2d(nn::Conv2dOptions(c, 2 * c, 4).stride(2).padding(1)));
  conv4_ = register_module("conv4", nn::Conv2d(nn::Conv2dOptions(2 * c, 2 * c, 4).stride(2).padding(1)));
  const int64_t side = image_size / 8;
  embed_ = register_module("embed", nn::Linear(2 * c * side * side, config.feature_dim));
  classify_ = register_module("classify",
                              nn::Linear(config.feature_dim, static_cast<int64_t>(synthdata::MotionKind::kCount)));
  locate_ = register_module("locate", nn::Linear(config.feature_dim, 2 * keypoints));
  visible_ = register_module("visible", nn::Linear(config.feature_dim, keypoints));
}

std::vector<torch::Tensor> PoseProbeImpl::feature_maps(const torch::Tensor& images) {
  auto h1 = torch::relu(conv1_(images));
  auto h2 = torch::relu(conv2_(h1));
  auto h3 = torch::relu(conv3_(h2));
  auto h4 = torch::relu(conv4_(h3));
  return {h1, h2, h3, h4};
}

PoseProbeImpl::Output PoseProbeImpl::forward(const torch::Tensor& images) {
  auto maps = feature_maps(images);
  Output out;
  out.features = torch::relu(embed_(maps.back().flatten(1)));
  out.class_logits = classify_(out.features);
  out.keypoints = torch::sigmoid(locate_(out.features)).reshape({images.size(0), keypoints_, 2});
  out.visibility_logits = visible_(out.features);
  return out;
}

ProbeTrainingReport train_probe(PoseProbe& probe, const std::vector<synthdata::Sequence>& sequences,
                                const ProbeConfig& config, std::ostream* log) {
  std::vector<torch::Tensor> images, classes, points, visible;
  for (const auto& s : sequences) {
    for (size_t f = 0; f < s.frames.size(); ++f) {
      images.push_back(s.frames[f].pixels.permute({2, 0, 1}));
      classes.push_back(torch::tensor(static_cast<int64_t>(s.kind)));
      auto p = s.poses[f].to_tensor();
      points.push_back(p);
      visible.push_back((p.select(1, 0) >= 0).to(torch::kFloat32));
    }
  }
  if (images.empty()) reject("probe training needs at least one frame");
  auto all_images = torch::stack(images);
  auto all_classes = torch::stack(classes);
  auto all_points = torch::stack(points);
  auto all_visible = torch::stack(visible);
  const int64_t count = all_images.size(0);

  torch::manual_seed(config.seed);
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int64_t> pick(0, count - 1);
  torch::optim::Adam optimizer(probe->parameters(), torch::optim::AdamOptions(config.learning_rate));
  probe->train();
  ProbeTrainingReport report;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<int64_t> ids(static_cast<size_t>(config.batch_size));
    for (auto& id : ids) id = pick(rng);
    auto idx = torch::tensor(ids, torch::kInt64);
    auto x = all_images.index_select(0, idx);
    x = (x + 0.02 * torch::randn_like(x)).clamp(0.0, 1.0);
    auto out = probe->forward(x);
    auto vis = all_visible.index_select(0, idx);
    auto loss_class = torch::cross_entropy_loss(out.class_logits, all_classes.index_select(0, idx));
    auto err = torch::smooth_l1_loss(out.keypoints, all_points.index_select(0, idx),
                                     at::Reduction::None, 0.02)
                   .sum(-1);
    auto loss_points = (err * vis).sum() / vis.sum().clamp_min(1.0);
    auto loss_vis = torch::binary_cross_entropy_with_logits(out.visibility_logits, vis);
    auto loss = loss_class + 50.0 * loss_points + loss_vis;
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
    report.final_loss = loss.item<double>();
    if (log != nullptr && (step % 200 == 0 || step + 1 == config.steps)) {
      *log << "probe step " << step << " loss " << report.final_loss << "\n";
    }
  }

  probe->eval();
  torch::NoGradGuard no_grad;
  auto out = probe->forward(all_images);
  report.class_accuracy = (out.class_logits.argmax(1) == all_classes).to(torch::kFloat64).mean().item<double>();
  const double side = static_cast<double>(all_images.size(2));
  auto dist = ((out.keypoints - all_points) * side).pow(2).sum(-1).sqrt();
  report.mean_keypoint_error_px = ((dist * all_visible).sum() / all_visible.sum().clamp_min(1.0)).item<double>();
  return report;
}

std::vector<condition::PoseFrame> detect_keypoints(PoseProbe& probe, const std::vector<Image>& images) {
  torch::NoGradGuard no_grad;
  probe->eval();
  auto out = probe->forward(to_batch(images));
  auto pts = out.keypoints.to(torch::kFloat64).contiguous();
  auto vis = out.visibility_logits.to(torch::kFloat64).contiguous();
  auto pa = pts.accessor<double, 3>();
  auto va = vis.accessor<double, 2>();
  std::vector<condition::PoseFrame> frames(images.size());
  for (int64_t b = 0; b < pts.size(0); ++b) {
    for (int64_t k = 0; k < pts.size(1); ++k) {
      if (va[b][k] < 0) {
        frames[static_cast<size_t>(b)].points.push_back(condition::Keypoint::occluded());
      } else {
        frames[static_cast<size_t>(b)].points.push_back({pa[b][k][0], pa[b][k][1]});
      }
    }
  }
  return frames;
}

torch::Tensor embed(PoseProbe& probe, const std::vector<Image>& images) {
  torch::NoGradGuard no_grad;
  probe->eval();
  return probe->forward(to_batch(images)).features.to(torch::kFloat64);
}

}  // namespace qscraft::metrics

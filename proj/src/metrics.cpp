#include "qscraft/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "qscraft/error.hpp"

namespace qscraft::metrics {

namespace {

void check_matching(std::span<const KeypointSet> a, std::span<const KeypointSet> b) {
  if (a.size() != b.size()) reject("keypoint sequences differ in frame count");
  for (size_t f = 0; f < a.size(); ++f) {
    if (a[f].size() != b[f].size()) reject("keypoint sets differ in keypoint count");
  }
}

}  // namespace

double akd(std::span<const KeypointSet> ground_truth, std::span<const KeypointSet> predicted,
           int width, int height) {
  check_matching(ground_truth, predicted);
  double total = 0;
  int64_t count = 0;
  for (size_t f = 0; f < ground_truth.size(); ++f) {
    for (size_t k = 0; k < ground_truth[f].size(); ++k) {
      const auto& g = ground_truth[f].points[k];
      const auto& p = predicted[f].points[k];
      if (!g.visible() || !p.visible()) continue;
      total += std::hypot((g.x - p.x) * width, (g.y - p.y) * height);
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorKind::kUndefinedMetric, "AKD undefined: no co-visible keypoints");
  return total / static_cast<double>(count);
}

double mkr(std::span<const KeypointSet> ground_truth, std::span<const KeypointSet> predicted) {
  check_matching(ground_truth, predicted);
  int64_t visible = 0, missing = 0;
  for (size_t f = 0; f < ground_truth.size(); ++f) {
    for (size_t k = 0; k < ground_truth[f].size(); ++k) {
      if (!ground_truth[f].points[k].visible()) continue;
      ++visible;
      if (!predicted[f].points[k].visible()) ++missing;
    }
  }
  if (visible == 0) {
    throw Error(ErrorKind::kUndefinedMetric, "MKR undefined: no visible ground-truth keypoints");
  }
  return static_cast<double>(missing) / static_cast<double>(visible);
}

FeatureStats feature_stats(const torch::Tensor& features) {
  if (features.dim() != 2 || features.size(0) < 2) reject("feature stats need N×D with N >= 2");
  auto f = features.detach().to(torch::kFloat64);
  FeatureStats s;
  s.mean = f.mean(0);
  auto centered = f - s.mean;
  s.covariance = centered.t().matmul(centered) / static_cast<double>(f.size(0) - 1);
  return s;
}

namespace {

// Symmetric square root of a PSD matrix; rejects eigenvalues below −tol.
torch::Tensor psd_sqrt(const torch::Tensor& m, const char* what) {
  auto sym = 0.5 * (m + m.t());
  auto [eigenvalues, eigenvectors] = torch::linalg_eigh(sym);
  const double scale = std::max(1.0, eigenvalues.abs().max().item<double>());
  if (eigenvalues.min().item<double>() < -1e-6 * scale) {
    reject(std::string(what) + " is not positive semidefinite");
  }
  auto root = eigenvalues.clamp_min(0.0).sqrt();
  return eigenvectors.matmul(torch::diag(root)).matmul(eigenvectors.t());
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.mean.sizes() != b.mean.sizes() || a.covariance.sizes() != b.covariance.sizes()) {
    reject("feature stats differ in dimensionality");
  }
  auto s1 = a.covariance.to(torch::kFloat64);
  auto s2 = b.covariance.to(torch::kFloat64);
  for (const auto* s : {&s1, &s2}) {
    if ((*s - s->t()).abs().max().item<double>() > 1e-8 * std::max(1.0, s->abs().max().item<double>())) {
      reject("covariance is not symmetric");
    }
  }
  auto root1 = psd_sqrt(s1, "covariance");
  psd_sqrt(s2, "covariance");
  // Tr((Σ₁Σ₂)^{1/2}) from the eigenvalues of the symmetric Σ₁^{1/2} Σ₂ Σ₁^{1/2}.
  auto inner = root1.matmul(s2).matmul(root1);
  inner = 0.5 * (inner + inner.t());
  auto eig = torch::linalg_eigvalsh(inner);
  const double scale = std::max(1.0, eig.abs().max().item<double>());
  if (eig.min().item<double>() < -1e-6 * scale) reject("covariance product is not PSD");
  const double trace_sqrt = eig.clamp_min(0.0).sqrt().sum().item<double>();
  const double mean_term = (a.mean.to(torch::kFloat64) - b.mean.to(torch::kFloat64)).pow(2).sum().item<double>();
  const double value = mean_term + s1.trace().item<double>() + s2.trace().item<double>() - 2.0 * trace_sqrt;
  return std::max(0.0, value);
}

double psnr(const Image& a, const Image& b) {
  validate_image(a);
  validate_image(b);
  if (a.pixels.sizes() != b.pixels.sizes()) reject("PSNR inputs differ in shape");
  const double mse = (a.pixels.to(torch::kFloat64) - b.pixels.to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr_region(const Image& a, const Image& b, int64_t x0, int64_t y0, int64_t x1, int64_t y1) {
  if (x1 <= x0 || y1 <= y0) reject("empty PSNR region");
  using torch::indexing::Slice;
  return psnr(Image{a.pixels.index({Slice(y0, y1), Slice(x0, x1)})},
              Image{b.pixels.index({Slice(y0, y1), Slice(x0, x1)})});
}

PixelBox keypoint_box(const KeypointSet& pose, int64_t width, int64_t height, double margin) {
  double x0 = 1, y0 = 1, x1 = 0, y1 = 0;
  bool any = false;
  for (const auto& p : pose.points) {
    if (!p.visible()) continue;
    any = true;
    x0 = std::min(x0, p.x);
    y0 = std::min(y0, p.y);
    x1 = std::max(x1, p.x);
    y1 = std::max(y1, p.y);
  }
  if (!any) return {0, 0, width, height};
  PixelBox box;
  box.x0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor((x0 - margin) * width)), 0, width - 1);
  box.y0 = std::clamp<int64_t>(static_cast<int64_t>(std::floor((y0 - margin) * height)), 0, height - 1);
  box.x1 = std::clamp<int64_t>(static_cast<int64_t>(std::ceil((x1 + margin) * width)), box.x0 + 1, width);
  box.y1 = std::clamp<int64_t>(static_cast<int64_t>(std::ceil((y1 + margin) * height)), box.y0 + 1, height);
  return box;
}

Image crop_resize(const Image& image, const PixelBox& box) {
  using torch::indexing::Slice;
  auto crop = image.pixels.index({Slice(box.y0, box.y1), Slice(box.x0, box.x1)});
  auto resized = torch::nn::functional::interpolate(
      crop.permute({2, 0, 1}).unsqueeze(0),
      torch::nn::functional::InterpolateFuncOptions()
          .size(std::vector<int64_t>{image.height(), image.width()})
          .mode(torch::kBilinear)
          .align_corners(false));
  return Image{resized[0].permute({1, 2, 0}).contiguous()};
}

}  // namespace qscraft::metrics

#pragma once

#include <span>
#include <vector>

#include <torch/torch.h>

#include "qscraft/condition.hpp"
#include "qscraft/image.hpp"

namespace qscraft::metrics {

// Keypoints with sentinel-coded visibility, normalized coordinates.
using KeypointSet = condition::PoseFrame;

inline constexpr double kPsnrCap = 99.0;

// Mean Euclidean distance, in pixels of a width×height frame, over keypoints
// visible in both sets. Throws kUndefinedMetric if none are co-visible.
double akd(std::span<const KeypointSet> ground_truth, std::span<const KeypointSet> predicted,
           int width, int height);

// Fraction of keypoints visible in ground truth but missing in the prediction.
double mkr(std::span<const KeypointSet> ground_truth, std::span<const KeypointSet> predicted);

struct FeatureStats {
  torch::Tensor mean;        // D, float64
  torch::Tensor covariance;  // D×D, float64, symmetric PSD
};

// Sample mean and unbiased covariance of N×D features (N ≥ 2).
FeatureStats feature_stats(const torch::Tensor& features);

// Fréchet distance ‖μ₁−μ₂‖² + Tr(Σ₁+Σ₂−2(Σ₁Σ₂)^{1/2}).
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

// 10·log10(1/MSE) for [0,1] images, kPsnrCap when identical.
double psnr(const Image& a, const Image& b);

// PSNR restricted to a pixel rectangle [x0,x1)×[y0,y1).
double psnr_region(const Image& a, const Image& b, int64_t x0, int64_t y0, int64_t x1, int64_t y1);

struct PixelBox {
  int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open
};

// Bounding box of visible keypoints dilated by `margin` (fraction of the
// frame), clipped to the image; the full frame when nothing is visible.
PixelBox keypoint_box(const KeypointSet& pose, int64_t width, int64_t height, double margin);

// Crops `box` and resizes back to the full frame (bilinear).
Image crop_resize(const Image& image, const PixelBox& box);

}  // namespace qscraft::metrics

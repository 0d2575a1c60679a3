#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "qscraft/config.hpp"

namespace qscraft::testing {

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("qscraft_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline double sq_dist(const torch::Tensor& a, const torch::Tensor& b) {
  auto x = a.to(torch::kFloat64).contiguous(), y = b.to(torch::kFloat64).contiguous();
  const double* p = x.data_ptr<double>();
  const double* q = y.data_ptr<double>();
  double d = 0;
  for (int64_t i = 0; i < x.numel(); ++i) d += (p[i] - q[i]) * (p[i] - q[i]);
  return d;
}

// Exhaustive nearest row with lowest-index ties.
inline int64_t brute_nearest(const torch::Tensor& query, const torch::Tensor& table) {
  int64_t arg = 0;
  double best = sq_dist(query, table[0]);
  for (int64_t r = 1; r < table.size(0); ++r) {
    const double d = sq_dist(query, table[r]);
    if (d < best) {
      best = d;
      arg = r;
    }
  }
  return arg;
}

// Relative error between autograd and central differences over every
// coordinate of `param` (float64).
inline double grad_rel_error(const std::function<torch::Tensor()>& loss, torch::Tensor param,
                             double eps = 1e-6) {
  param.mutable_grad() = torch::Tensor();
  loss().backward();
  auto analytic = param.grad().detach().clone().flatten();
  torch::NoGradGuard no_grad;
  auto flat = param.view({-1});
  double diff = 0, scale = 1e-12;
  for (int64_t c = 0; c < flat.numel(); ++c) {
    const double orig = flat[c].item<double>();
    flat[c].fill_(orig + eps);
    const double up = loss().item<double>();
    flat[c].fill_(orig - eps);
    const double down = loss().item<double>();
    flat[c].fill_(orig);
    const double fd = (up - down) / (2 * eps);
    const double a = analytic[c].item<double>();
    diff = std::max(diff, std::abs(a - fd));
    scale = std::max({scale, std::abs(a), std::abs(fd)});
  }
  return diff / scale;
}

// Small, fast configuration: 16×16 frames, depth 2 (4×4 latent grid).
inline RunConfig tiny_config(const std::filesystem::path& dir) {
  RunConfig c;
  c.data.root = (dir / "data").string();
  c.data.image_size = 16;
  c.data.train_sequences = 2;
  c.data.test_sequences = 1;
  c.data.frames_per_sequence = 3;
  c.codec.channels = 16;
  c.codec.codebook_size = 16;
  c.codec.code_dim = 8;
  c.codec.batch_size = 2;
  c.codec.steps = 6;
  c.codec.learning_rate = 1e-3;
  c.codec.adversarial_start = 3;
  c.codec.dead_code_steps = 4;
  c.codec.discriminator_channels = 8;
  c.condition.hidden1 = 8;
  c.condition.hidden2 = 8;
  c.transformer.layers = 1;
  c.transformer.heads = 2;
  c.transformer.width = 16;
  c.transformer.batch_size = 4;
  c.transformer.steps = 6;
  c.transformer.warmup_steps = 2;
  c.probe.channels = 8;
  c.probe.feature_dim = 16;
  c.probe.steps = 5;
  c.probe.batch_size = 4;
  c.io.work_dir = (dir / "run").string();
  c.io.log_every = 0;
  c.io.checkpoint_every = 0;
  return c;
}

}  // namespace qscraft::testing

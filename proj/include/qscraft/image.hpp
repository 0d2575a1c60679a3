#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace qscraft {

// H×W×3 float32 pixels in [0,1].
struct Image {
  torch::Tensor pixels;

  int64_t height() const { return pixels.size(0); }
  int64_t width() const { return pixels.size(1); }

  static Image zeros(int64_t height, int64_t width);
};

// Throws kRejectedInput unless `image` is H×W×3 float.
void validate_image(const Image& image);

// Stacks images into a B×3×H×W batch.
torch::Tensor to_batch(const std::vector<Image>& images);
torch::Tensor to_batch(const Image& image);
// Inverse of to_batch for a single item of a B×3×H×W tensor.
Image from_batch(const torch::Tensor& batch, int64_t item = 0);

// Rounds to the 8-bit grid (k/255); PNG round trips of the result are exact.
Image quantize_to_u8(const Image& image);

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

}  // namespace qscraft

#include "qscraft/image.hpp"

#include <png.h>

#include <cstring>
#include <vector>

#include "qscraft/error.hpp"

namespace qscraft {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kRejectedInput: return "rejected_input";
    case ErrorKind::kTrainingDivergence: return "training_divergence";
    case ErrorKind::kMissingArtifact: return "missing_artifact";
    case ErrorKind::kConfigMismatch: return "config_mismatch";
    case ErrorKind::kUndefinedMetric: return "undefined_metric";
    case ErrorKind::kAlreadyExists: return "already_exists";
    case ErrorKind::kIo: return "io_error";
  }
  return "unknown";
}

Image Image::zeros(int64_t height, int64_t width) {
  return Image{torch::zeros({height, width, 3}, torch::kFloat32)};
}

void validate_image(const Image& image) {
  const auto& p = image.pixels;
  if (!p.defined() || p.dim() != 3 || p.size(2) != 3) {
    reject("image must be H×W×3");
  }
  if (!p.is_floating_point()) reject("image must hold floating-point pixels");
}

torch::Tensor to_batch(const std::vector<Image>& images) {
  std::vector<torch::Tensor> items;
  items.reserve(images.size());
  for (const auto& im : images) {
    validate_image(im);
    items.push_back(im.pixels.permute({2, 0, 1}));
  }
  return torch::stack(items).contiguous();
}

torch::Tensor to_batch(const Image& image) {
  validate_image(image);
  return image.pixels.permute({2, 0, 1}).unsqueeze(0).contiguous();
}

Image from_batch(const torch::Tensor& batch, int64_t item) {
  return Image{batch[item].detach().permute({1, 2, 0}).contiguous().to(torch::kFloat32)};
}

Image quantize_to_u8(const Image& image) {
  validate_image(image);
  auto q = (image.pixels.clamp(0.0, 1.0) * 255.0).round() / 255.0;
  return Image{q.to(torch::kFloat32).contiguous()};
}

void write_png(const std::filesystem::path& path, const Image& image) {
  validate_image(image);
  auto bytes = (image.pixels.clamp(0.0, 1.0) * 255.0)
                   .round()
                   .to(torch::kUInt8)
                   .contiguous();
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width());
  png.height = static_cast<png_uint_32>(image.height());
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data_ptr<uint8_t>(), 0,
                               nullptr)) {
    throw Error(ErrorKind::kIo, "cannot write PNG " + path.string() + ": " + png.message);
  }
}

Image read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw Error(ErrorKind::kIo, "cannot read PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&png);
    throw Error(ErrorKind::kIo, "cannot decode PNG " + path.string() + ": " + png.message);
  }
  auto bytes = torch::from_blob(buffer.data(),
                                {static_cast<int64_t>(png.height),
                                 static_cast<int64_t>(png.width), 3},
                                torch::kUInt8);
  return Image{(bytes.to(torch::kFloat32) / 255.0).contiguous()};
}

}  // namespace qscraft

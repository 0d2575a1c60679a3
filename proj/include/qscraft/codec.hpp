#pragma once

#include <functional>
#include <optional>
#include <random>
#include <vector>

#include <torch/torch.h>

#include "qscraft/config.hpp"
#include "qscraft/image.hpp"

namespace qscraft::codec {

// h×w×c_q continuous latent.
struct LatentGrid {
  torch::Tensor data;

  int64_t height() const { return data.size(0); }
  int64_t width() const { return data.size(1); }
  int64_t channels() const { return data.size(2); }
};

// Latent snapped to codebook entries; data[i,j] == entries[indices[i,j]].
struct QuantizedGrid {
  torch::Tensor data;     // h×w×c_q
  torch::Tensor indices;  // h×w int64

  int64_t height() const { return indices.size(0); }
  int64_t width() const { return indices.size(1); }
};

// Row index of the squared-L2 nearest row of `table` for every row of
// `queries`; ties resolve to the lowest row. Distances accumulate in double
// over channels in order, so results are exact and reproducible.
torch::Tensor nearest_rows(const torch::Tensor& queries, const torch::Tensor& table);

QuantizedGrid quantize(const LatentGrid& z, const torch::Tensor& codebook);

// B×C×h×w latents -> B×h×w indices.
torch::Tensor quantize_indices(const torch::Tensor& latents, const torch::Tensor& codebook);

class ResBlockImpl : public torch::nn::Module {
 public:
  explicit ResBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(ResBlock);

class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(int64_t channels, int64_t depth, int64_t code_dim);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(Encoder);

class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(int64_t channels, int64_t depth, int64_t code_dim);
  torch::Tensor forward(const torch::Tensor& z);

 private:
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(Decoder);

// Patch-level discriminator: one real/fake score per receptive-field patch.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

// Encoder E, decoder G and the learnable codebook q.
class CodecModelImpl : public torch::nn::Module {
 public:
  explicit CodecModelImpl(const CodecConfig& config);

  Encoder encoder{nullptr};
  Decoder decoder{nullptr};
  torch::Tensor codebook;   // m×c_q parameter
  torch::Tensor last_used;  // m int64 buffer: last step each entry was selected

  int64_t depth() const { return depth_; }
  int64_t codebook_size() const { return codebook.size(0); }
  int64_t code_dim() const { return codebook.size(1); }

 private:
  int64_t depth_;
};
TORCH_MODULE(CodecModel);

LatentGrid encode(const Image& image, CodecModel& model);
// Accepts a QuantizedGrid's data or a patchwork; output clamped to [0,1].
Image decode(const torch::Tensor& grid, CodecModel& model);
Image decode(const QuantizedGrid& zq, CodecModel& model);

// Decoder input that evaluates to the selected entries but passes the
// incoming gradient unchanged to the encoder output (straight-through) and to
// the selected codebook rows.
torch::Tensor straight_through(const torch::Tensor& latents, const torch::Tensor& selected);

// Gathers codebook rows for B×h×w indices into a B×c_q×h×w tensor.
torch::Tensor lookup(const torch::Tensor& codebook, const torch::Tensor& indices);

// β·mean over pixels of ‖z − sg(e)‖².
torch::Tensor commitment_loss(const torch::Tensor& latents, const torch::Tensor& selected,
                              double beta);
// mean over pixels of ‖sg(z) − e‖².
torch::Tensor codebook_loss(const torch::Tensor& latents, const torch::Tensor& selected);

struct HingeLosses {
  torch::Tensor discriminator;  // mean relu(1−D(real)) + mean relu(1+D(fake))
  torch::Tensor generator;      // −mean D(fake)
};
HingeLosses hinge_losses(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);

// Maps a B×3×H×W batch to a list of feature maps for the perceptual loss.
using FeatureFn = std::function<std::vector<torch::Tensor>(const torch::Tensor&)>;

struct Stage1Losses {
  torch::Tensor reconstruction;
  torch::Tensor codebook;
  torch::Tensor commitment;
  torch::Tensor perceptual;
  torch::Tensor generator_adversarial;
  torch::Tensor discriminator;
  torch::Tensor generator_total;
  // Indices produced by the direct quantization of both frames, B×h×w each.
  torch::Tensor source_indices, target_indices;
  torch::Tensor source_latents, target_latents;
};

struct Stage1Weights {
  double beta = 0.25;
  double perceptual = 0.0;
  double adversarial = 0.0;
};

// Both generation directions: decode(scrabble(z_t, bag(z_s))) against x_t and
// decode(scrabble(z_s, bag(z_t))) against x_s. `features` and
// `discriminator` are optional; absent terms are zero.
Stage1Losses stage1_loss(const torch::Tensor& x_s, const torch::Tensor& x_t, CodecModel& model,
                         const Stage1Weights& weights, const FeatureFn* features,
                         PatchDiscriminator* discriminator);

// Reseeds codebook entries unused for more than `max_idle` steps with random
// rows of `recent_latents` (N×c_q). Returns the number reseeded.
int64_t reseed_dead_codes(CodecModel& model, int64_t step, int64_t max_idle,
                          const torch::Tensor& recent_latents, std::mt19937_64& rng);

}  // namespace qscraft::codec

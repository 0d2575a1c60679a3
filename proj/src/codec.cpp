#include "qscraft/codec.hpp"

#include <algorithm>

#include "qscraft/error.hpp"
#include "qscraft/scrabble.hpp"

namespace qscraft::codec {

namespace nn = torch::nn;

namespace {

template <typename T>
void nearest_rows_impl(const T* q, const T* t, int64_t n, int64_t k, int64_t c, int64_t* out) {
  for (int64_t i = 0; i < n; ++i) {
    const T* qi = q + i * c;
    double best = 0;
    int64_t best_row = 0;
    for (int64_t r = 0; r < k; ++r) {
      const T* tr = t + r * c;
      double d = 0;
      for (int64_t j = 0; j < c; ++j) {
        const double diff = static_cast<double>(qi[j]) - static_cast<double>(tr[j]);
        d += diff * diff;
      }
      if (r == 0 || d < best) {
        best = d;
        best_row = r;
      }
    }
    out[i] = best_row;
  }
}

int64_t shallow_width(int64_t channels, int64_t depth) {
  return std::max<int64_t>(16, channels >> depth);
}

}  // namespace

torch::Tensor nearest_rows(const torch::Tensor& queries, const torch::Tensor& table) {
  if (queries.dim() != 2 || table.dim() != 2) reject("nearest_rows expects 2-D tensors");
  if (queries.size(1) != table.size(1)) reject("query and table widths differ");
  if (table.size(0) == 0) reject("nearest_rows needs a non-empty table");
  auto q = queries.detach().contiguous();
  auto t = table.detach().to(q.scalar_type()).contiguous();
  auto out = torch::empty({q.size(0)}, torch::kInt64);
  AT_DISPATCH_FLOATING_TYPES(q.scalar_type(), "nearest_rows", [&] {
    nearest_rows_impl<scalar_t>(q.data_ptr<scalar_t>(), t.data_ptr<scalar_t>(), q.size(0),
                                t.size(0), q.size(1), out.data_ptr<int64_t>());
  });
  return out;
}

QuantizedGrid quantize(const LatentGrid& z, const torch::Tensor& codebook) {
  if (!z.data.defined() || z.data.dim() != 3) reject("latent grid must be h×w×c_q");
  if (z.channels() != codebook.size(1)) reject("latent channels do not match codebook");
  const int64_t h = z.height(), w = z.width();
  auto rows = nearest_rows(z.data.reshape({h * w, -1}), codebook);
  QuantizedGrid out;
  out.indices = rows.reshape({h, w});
  out.data = codebook.detach().index_select(0, rows).reshape({h, w, -1}).clone();
  return out;
}

torch::Tensor quantize_indices(const torch::Tensor& latents, const torch::Tensor& codebook) {
  const int64_t b = latents.size(0), h = latents.size(2), w = latents.size(3);
  auto flat = latents.detach().permute({0, 2, 3, 1}).reshape({b * h * w, -1});
  return nearest_rows(flat, codebook).reshape({b, h, w});
}

torch::Tensor lookup(const torch::Tensor& codebook, const torch::Tensor& indices) {
  auto rows = codebook.index_select(0, indices.reshape({-1}));
  auto shape = indices.sizes().vec();
  shape.push_back(codebook.size(1));
  return rows.reshape(shape).permute({0, 3, 1, 2});
}

ResBlockImpl::ResBlockImpl(int64_t channels) {
  conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
  conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  return x + conv2_(torch::relu(conv1_(torch::relu(x))));
}

EncoderImpl::EncoderImpl(int64_t channels, int64_t depth, int64_t code_dim) {
  nn::Sequential seq;
  int64_t width = shallow_width(channels, depth);
  seq->push_back(nn::Conv2d(nn::Conv2dOptions(3, width, 3).padding(1)));
  for (int64_t level = 0; level < depth; ++level) {
    const int64_t next = std::min<int64_t>(channels, width * 2);
    seq->push_back(ResBlock(width));
    seq->push_back(nn::Conv2d(nn::Conv2dOptions(width, next, 4).stride(2).padding(1)));
    width = next;
  }
  if (width != channels) seq->push_back(nn::Conv2d(nn::Conv2dOptions(width, channels, 1)));
  seq->push_back(ResBlock(channels));
  seq->push_back(nn::ReLU());
  seq->push_back(nn::Conv2d(nn::Conv2dOptions(channels, code_dim, 1)));
  net_ = register_module("net", seq);
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) { return net_->forward(x); }

DecoderImpl::DecoderImpl(int64_t channels, int64_t depth, int64_t code_dim) {
  nn::Sequential seq;
  seq->push_back(nn::Conv2d(nn::Conv2dOptions(code_dim, channels, 3).padding(1)));
  seq->push_back(ResBlock(channels));
  // Widths mirror the encoder.
  std::vector<int64_t> widths{shallow_width(channels, depth)};
  for (int64_t level = 0; level < depth; ++level) {
    widths.push_back(std::min<int64_t>(channels, widths.back() * 2));
  }
  int64_t width = channels;
  for (int64_t level = depth - 1; level >= 0; --level) {
    const int64_t next = widths[static_cast<size_t>(level)];
    seq->push_back(nn::Upsample(
        nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
    seq->push_back(nn::Conv2d(nn::Conv2dOptions(width, next, 3).padding(1)));
    seq->push_back(ResBlock(next));
    width = next;
  }
  seq->push_back(nn::ReLU());
  seq->push_back(nn::Conv2d(nn::Conv2dOptions(width, 3, 3).padding(1)));
  net_ = register_module("net", seq);
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& z) { return net_->forward(z); }

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int64_t channels) {
  net_ = register_module(
      "net", nn::Sequential(
                 nn::Conv2d(nn::Conv2dOptions(3, channels, 4).stride(2).padding(1)),
                 nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
                 nn::Conv2d(nn::Conv2dOptions(channels, channels * 2, 4).stride(2).padding(1)),
                 nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
                 nn::Conv2d(nn::Conv2dOptions(channels * 2, 1, 3).padding(1))));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) { return net_->forward(x); }

CodecModelImpl::CodecModelImpl(const CodecConfig& config) : depth_(config.downsample_depth) {
  if (config.codebook_size < 2 || config.code_dim < 1) reject("codebook needs m >= 2 and c_q >= 1");
  encoder = register_module("encoder",
                            Encoder(config.channels, config.downsample_depth, config.code_dim));
  decoder = register_module("decoder",
                            Decoder(config.channels, config.downsample_depth, config.code_dim));
  const double bound = 1.0 / config.codebook_size;
  codebook = register_parameter(
      "codebook", torch::empty({config.codebook_size, config.code_dim}).uniform_(-bound, bound));
  last_used = register_buffer("last_used", torch::zeros({config.codebook_size}, torch::kInt64));
}

LatentGrid encode(const Image& image, CodecModel& model) {
  validate_image(image);
  const int64_t factor = int64_t{1} << model->depth();
  if (image.height() % factor != 0 || image.width() % factor != 0) {
    reject("image sides must be divisible by 2^depth");
  }
  torch::NoGradGuard no_grad;
  auto param = model->codebook;
  auto z = model->encoder(to_batch(image).to(param.scalar_type()));
  return LatentGrid{z[0].permute({1, 2, 0}).contiguous()};
}

Image decode(const torch::Tensor& grid, CodecModel& model) {
  if (!grid.defined() || grid.dim() != 3 || grid.size(2) != model->code_dim()) {
    reject("decoder input must be h×w×c_q");
  }
  torch::NoGradGuard no_grad;
  auto x = model->decoder(grid.permute({2, 0, 1}).unsqueeze(0).to(model->codebook.scalar_type()));
  return Image{x[0].permute({1, 2, 0}).clamp(0.0, 1.0).to(torch::kFloat32).contiguous()};
}

Image decode(const QuantizedGrid& zq, CodecModel& model) { return decode(zq.data, model); }

torch::Tensor straight_through(const torch::Tensor& latents, const torch::Tensor& selected) {
  return selected + (latents - latents.detach());
}

torch::Tensor commitment_loss(const torch::Tensor& latents, const torch::Tensor& selected,
                              double beta) {
  return beta * (latents - selected.detach()).pow(2).sum(1).mean();
}

torch::Tensor codebook_loss(const torch::Tensor& latents, const torch::Tensor& selected) {
  return (latents.detach() - selected).pow(2).sum(1).mean();
}

HingeLosses hinge_losses(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  HingeLosses out;
  out.discriminator =
      torch::relu(1.0 - real_scores).mean() + torch::relu(1.0 + fake_scores).mean();
  out.generator = -fake_scores.mean();
  return out;
}

Stage1Losses stage1_loss(const torch::Tensor& x_s, const torch::Tensor& x_t, CodecModel& model,
                         const Stage1Weights& weights, const FeatureFn* features,
                         PatchDiscriminator* discriminator) {
  if (x_s.sizes() != x_t.sizes()) reject("source and target batches differ in shape");
  const auto& cb = model->codebook;
  Stage1Losses out;
  auto z_s = model->encoder(x_s);
  auto z_t = model->encoder(x_t);
  out.source_latents = z_s;
  out.target_latents = z_t;
  out.source_indices = quantize_indices(z_s, cb);
  out.target_indices = quantize_indices(z_t, cb);
  auto e_s = lookup(cb, out.source_indices);
  auto e_t = lookup(cb, out.target_indices);

  auto patch_t = scrabble::patchwork_indices(z_t, out.source_indices, cb);
  auto patch_s = scrabble::patchwork_indices(z_s, out.target_indices, cb);
  auto rec_t = model->decoder(straight_through(z_t, lookup(cb, patch_t)));
  auto rec_s = model->decoder(straight_through(z_s, lookup(cb, patch_s)));

  out.reconstruction =
      0.5 * (torch::l1_loss(rec_t, x_t) + torch::l1_loss(rec_s, x_s));
  out.codebook = 0.5 * (codebook_loss(z_s, e_s) + codebook_loss(z_t, e_t));
  out.commitment =
      0.5 * (commitment_loss(z_s, e_s, weights.beta) + commitment_loss(z_t, e_t, weights.beta));

  auto zero = torch::zeros({}, x_s.options());
  out.perceptual = zero;
  if (features != nullptr && weights.perceptual > 0) {
    auto fake = (*features)(torch::cat({rec_t, rec_s}));
    auto real = (*features)(torch::cat({x_t, x_s}));
    torch::Tensor sum = zero;
    for (size_t i = 0; i < fake.size(); ++i) sum = sum + torch::l1_loss(fake[i], real[i].detach());
    out.perceptual = sum / static_cast<double>(std::max<size_t>(1, fake.size()));
  }

  out.generator_adversarial = zero;
  out.discriminator = zero;
  if (discriminator != nullptr && weights.adversarial > 0) {
    auto fake = torch::cat({rec_t, rec_s});
    auto real = torch::cat({x_t, x_s});
    out.generator_adversarial = -(*discriminator)(fake).mean();
    out.discriminator =
        hinge_losses((*discriminator)(real), (*discriminator)(fake.detach())).discriminator;
  }

  out.generator_total = out.reconstruction + out.codebook + out.commitment +
                        weights.perceptual * out.perceptual +
                        weights.adversarial * out.generator_adversarial;
  return out;
}

int64_t reseed_dead_codes(CodecModel& model, int64_t step, int64_t max_idle,
                          const torch::Tensor& recent_latents, std::mt19937_64& rng) {
  torch::NoGradGuard no_grad;
  auto idle = (step - model->last_used) > max_idle;
  auto dead = idle.nonzero().reshape({-1});
  const int64_t count = dead.size(0);
  if (count == 0 || recent_latents.size(0) == 0) return 0;
  std::uniform_int_distribution<int64_t> uniform(0, recent_latents.size(0) - 1);
  std::vector<int64_t> rows_picked(static_cast<size_t>(count));
  for (auto& r : rows_picked) r = uniform(rng);
  auto pick = torch::tensor(rows_picked, torch::kInt64);
  auto rows = recent_latents.detach().index_select(0, pick).to(model->codebook.scalar_type());
  model->codebook.index_copy_(0, dead, rows);
  model->last_used.index_fill_(0, dead, step);
  return count;
}

}  // namespace qscraft::codec

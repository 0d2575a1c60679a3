#include "doctest_torch.hpp"

#include "helpers.hpp"
#include "qscraft/codec.hpp"
#include "qscraft/error.hpp"
#include "qscraft/pipeline.hpp"
#include "qscraft/synthdata.hpp"

using namespace qscraft;
using qscraft::testing::brute_nearest;

namespace {

CodecConfig small_codec(int depth = 2, int code_dim = 64) {
  CodecConfig c;
  c.downsample_depth = depth;
  c.channels = 16;
  c.codebook_size = 32;
  c.code_dim = code_dim;
  return c;
}

// Depth-0 codec whose encoder and decoder are exact identities on [0,1]
// images: every conv copies the first channels through its centre tap and
// every residual branch is zeroed.
codec::CodecModel identity_codec() {
  CodecConfig c;
  c.downsample_depth = 0;
  c.channels = 16;
  c.codebook_size = 4;
  c.code_dim = 3;
  codec::CodecModel model(c);
  torch::NoGradGuard no_grad;
  for (auto& item : model->named_modules()) {
    if (auto* conv = dynamic_cast<torch::nn::Conv2dImpl*>(item.value().get())) {
      conv->weight.zero_();
      conv->bias.zero_();
      const int64_t k = conv->weight.size(2) / 2;
      for (int64_t ch = 0; ch < std::min(conv->weight.size(0), conv->weight.size(1)); ++ch) {
        conv->weight[ch][ch][k][k] = 1.0;
      }
    }
  }
  for (auto& item : model->named_modules()) {
    if (dynamic_cast<codec::ResBlockImpl*>(item.value().get())) {
      for (auto& p : item.value()->parameters()) p.zero_();
    }
  }
  return model;
}

}  // namespace

TEST_SUITE("codec") {
  TEST_CASE("encode gives h = H/2^d grids") {
    torch::manual_seed(1);
    codec::CodecModel model(small_codec(2, 64));
    Image img{torch::rand({64, 64, 3})};
    auto z = codec::encode(img, model);
    CHECK(z.height() == 16);
    CHECK(z.width() == 16);
    CHECK(z.channels() == 64);
  }

  TEST_CASE("all-zero image encodes to a finite grid") {
    codec::CodecModel model(small_codec());
    auto z = codec::encode(Image::zeros(32, 32), model);
    CHECK(torch::isfinite(z.data).all().item<bool>());
  }

  TEST_CASE("encode is deterministic") {
    codec::CodecModel model(small_codec());
    Image img{torch::rand({32, 32, 3})};
    Image copy{img.pixels.clone()};
    CHECK(torch::equal(codec::encode(img, model).data, codec::encode(copy, model).data));
  }

  TEST_CASE("encode rejects sides not divisible by 2^d") {
    codec::CodecModel model(small_codec(2));
    CHECK_THROWS_AS(codec::encode(Image{torch::rand({30, 32, 3})}, model), Error);
  }

  TEST_CASE("pixel equal to an entry maps to it with zero residual") {
    auto codebook = torch::randn({8, 4});
    auto z = codec::LatentGrid{codebook[5].reshape({1, 1, 4}).clone()};
    auto q = codec::quantize(z, codebook);
    CHECK(q.indices[0][0].item<int64_t>() == 5);
    CHECK((q.data - z.data).abs().max().item<double>() == 0.0);
  }

  TEST_CASE("equidistant pixel resolves to the lower index") {
    auto codebook = torch::full({8, 2}, 10.0);
    codebook[2] = torch::tensor({1.0, 0.0});
    codebook[7] = torch::tensor({-1.0, 0.0});
    auto q = codec::quantize(codec::LatentGrid{torch::zeros({1, 1, 2})}, codebook);
    CHECK(q.indices[0][0].item<int64_t>() == 2);
  }

  TEST_CASE("random 3x3 grid matches an exhaustive scan") {
    torch::manual_seed(3);
    for (int trial = 0; trial < 20; ++trial) {
      auto codebook = torch::randn({8, 5});
      auto z = torch::randn({3, 3, 5});
      auto q = codec::quantize(codec::LatentGrid{z}, codebook);
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          CHECK(q.indices[i][j].item<int64_t>() == brute_nearest(z[i][j], codebook));
        }
      }
    }
  }

  TEST_CASE("quantized data are exact codebook rows") {
    auto codebook = torch::randn({16, 6});
    auto q = codec::quantize(codec::LatentGrid{torch::randn({4, 5, 6})}, codebook);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 5; ++j) {
        CHECK(torch::equal(q.data[i][j], codebook[q.indices[i][j].item<int64_t>()]));
      }
    }
  }

  TEST_CASE("property: quantization is idempotent and snaps to the nearest entry") {
    std::mt19937_64 rng(11);
    torch::manual_seed(11);
    for (int trial = 0; trial < 30; ++trial) {
      const int64_t m = 2 + static_cast<int64_t>(rng() % 40), c = 1 + static_cast<int64_t>(rng() % 8);
      const int64_t h = 1 + static_cast<int64_t>(rng() % 6), w = 1 + static_cast<int64_t>(rng() % 6);
      auto codebook = torch::randn({m, c});
      auto z = codec::LatentGrid{torch::randn({h, w, c})};
      auto q = codec::quantize(z, codebook);
      auto again = codec::quantize(codec::LatentGrid{q.data}, codebook);
      CHECK(torch::equal(q.indices, again.indices));
      for (int64_t i = 0; i < h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
          const double chosen = testing::sq_dist(z.data[i][j], codebook[q.indices[i][j].item<int64_t>()]);
          for (int64_t k = 0; k < m; ++k) CHECK(chosen <= testing::sq_dist(z.data[i][j], codebook[k]));
        }
      }
    }
  }

  TEST_CASE("quantize rejects a channel mismatch") {
    CHECK_THROWS_AS(codec::quantize(codec::LatentGrid{torch::zeros({2, 2, 3})}, torch::zeros({4, 5})),
                    Error);
  }

  TEST_CASE("decode maps 16x16x64 to a 64x64x3 image, deterministically") {
    codec::CodecModel model(small_codec(2, 64));
    auto grid = torch::randn({16, 16, 64});
    auto a = codec::decode(grid, model);
    auto b = codec::decode(grid, model);
    CHECK(a.height() == 64);
    CHECK(a.width() == 64);
    CHECK(a.pixels.size(2) == 3);
    CHECK(torch::equal(a.pixels, b.pixels));
    CHECK(a.pixels.min().item<double>() >= 0.0);
    CHECK(a.pixels.max().item<double>() <= 1.0);
  }

  TEST_CASE("encode/decode shape round trip for valid sizes") {
    for (int d = 0; d <= 2; ++d) {
      codec::CodecModel model(small_codec(d, 4));
      for (int64_t h : {4, 8, 12}) {
        for (int64_t w : {4, 8, 16}) {
          auto z = codec::encode(Image{torch::rand({h, w, 3})}, model);
          auto out = codec::decode(codec::quantize(z, model->codebook), model);
          CHECK(out.height() == h);
          CHECK(out.width() == w);
        }
      }
    }
  }

  TEST_CASE("x_s = x_t with a perfect model gives zero reconstruction") {
    auto model = identity_codec();
    // Two-colour image; the codebook holds both colours exactly.
    auto pixels = torch::zeros({8, 8, 3});
    pixels.slice(0, 0, 4).fill_(0.25);
    pixels.slice(0, 4).select(2, 1).fill_(0.75);
    {
      torch::NoGradGuard no_grad;
      model->codebook.zero_();
      model->codebook[0].fill_(0.25);
      model->codebook[1] = torch::tensor({0.0, 0.75, 0.0});
      model->codebook[2].fill_(0.9);
    }
    auto x = Image{pixels};
    CHECK(torch::equal(codec::decode(codec::quantize(codec::encode(x, model), model->codebook), model).pixels,
                       pixels));
    auto losses = codec::stage1_loss(to_batch(x), to_batch(x), model, {}, nullptr, nullptr);
    CHECK(losses.reconstruction.item<double>() < 1e-7);
    CHECK(losses.commitment.item<double>() < 1e-12);
  }

  TEST_CASE("commitment term on a hand-set 1x1 grid") {
    auto z = torch::tensor({1.0, 2.0}).reshape({1, 2, 1, 1});
    auto e = torch::tensor({0.0, 0.0}).reshape({1, 2, 1, 1});
    CHECK(codec::commitment_loss(z, e, 0.25).item<double>() == doctest::Approx(0.25 * 5.0));
    auto z2 = torch::tensor({1.0, 2.0, 3.0, -1.0}).reshape({1, 2, 1, 2});
    auto e2 = torch::tensor({0.0, 2.0, 1.0, 0.0}).reshape({1, 2, 1, 2});
    // Pixel (0,0): (1-0)^2+(3-1)^2 = 5; pixel (0,1): 0 + 1 = 1.
    CHECK(codec::commitment_loss(z2, e2, 0.5).item<double>() == doctest::Approx(0.5 * 3.0));
    CHECK(codec::codebook_loss(z2, e2).item<double>() == doctest::Approx(3.0));
  }

  TEST_CASE("hinge losses are nonnegative") {
    torch::manual_seed(5);
    for (int i = 0; i < 10; ++i) {
      auto h = codec::hinge_losses(3 * torch::randn({4, 1, 3, 3}), 3 * torch::randn({4, 1, 3, 3}));
      CHECK(h.discriminator.item<double>() >= 0.0);
    }
  }

  TEST_CASE("straight-through copies the upstream gradient to the encoder output") {
    auto z = torch::tensor({0.3, -0.2, 0.9}).reshape({1, 3, 1, 1}).requires_grad_(true);
    auto selected = torch::tensor({0.0, 0.0, 1.0}).reshape({1, 3, 1, 1});
    auto out = codec::straight_through(z, selected);
    CHECK(torch::equal(out.detach(), selected));
    auto upstream = torch::tensor({1.5, -2.0, 0.25}).reshape({1, 3, 1, 1});
    out.backward(upstream);
    CHECK(torch::equal(z.grad(), upstream));
  }

  TEST_CASE("gradients of codec losses match central differences on a 2x2 grid, m=4") {
    torch::manual_seed(8);
    CodecConfig c;
    c.downsample_depth = 2;
    c.channels = 8;
    c.codebook_size = 4;
    c.code_dim = 3;
    codec::CodecModel model(c);
    model->to(torch::kFloat64);
    {
      torch::NoGradGuard no_grad;
      model->codebook.normal_(0.0, 0.5);
    }
    auto x_s = torch::rand({1, 3, 8, 8}, torch::kFloat64);
    auto x_t = torch::rand({1, 3, 8, 8}, torch::kFloat64);
    codec::Stage1Weights w;
    auto codebook_side = [&] {
      auto l = codec::stage1_loss(x_s, x_t, model, w, nullptr, nullptr);
      return l.reconstruction + l.codebook;
    };
    CHECK(testing::grad_rel_error(codebook_side, model->codebook) <= 1e-3);

    auto z = model->encoder(x_t).detach().requires_grad_(true);
    auto e = codec::lookup(model->codebook.detach(), codec::quantize_indices(z, model->codebook));
    CHECK(testing::grad_rel_error([&] { return codec::commitment_loss(z, e, 0.25); }, z) <= 1e-3);
  }

  TEST_CASE("dead codes are reseeded from recent latents") {
    codec::CodecModel model(small_codec(2, 4));
    auto recent = torch::randn({10, 4});
    {
      torch::NoGradGuard no_grad;
      model->last_used.fill_(0);
      model->last_used[3] = 95;
    }
    std::mt19937_64 rng(1);
    const int64_t count = codec::reseed_dead_codes(model, 100, 10, recent, rng);
    CHECK(count == model->codebook_size() - 1);
    for (int64_t r = 0; r < model->codebook_size(); ++r) {
      if (r == 3) continue;
      bool found = false;
      for (int64_t k = 0; k < 10; ++k) found = found || torch::equal(model->codebook[r], recent[k]);
      CHECK(found);
    }
  }

  TEST_CASE("stage-1 training: decreasing loss, fixed-seed determinism, exact resume") {
    auto dir = testing::scratch_dir("stage1");
    auto config = testing::tiny_config(dir);
    config.codec.steps = 200;
    config.codec.adversarial_start = 1000;
    config.codec.perceptual_weight = 0;
    auto dataset = synthdata::make_dataset(config.data);
    std::vector<synthdata::Sequence> one{dataset.train[0]};
    one[0].frames.resize(2);
    one[0].poses.resize(2);

    pipeline::TrainOptions opts;
    opts.work_dir = dir / "a";
    pipeline::TrainSummary full;
    pipeline::train_stage1(config, one, nullptr, opts, &full);
    REQUIRE(full.losses.size() == 200);
    double head = 0, tail = 0;
    for (int i = 0; i < 20; ++i) {
      head += full.losses[static_cast<size_t>(i)];
      tail += full.losses[static_cast<size_t>(180 + i)];
    }
    CHECK(tail < 0.5 * head);

    auto short_config = config;
    short_config.codec.steps = 12;
    pipeline::TrainSummary first, again, part, rest;
    opts.work_dir = dir / "b";
    pipeline::train_stage1(short_config, one, nullptr, opts, &first);
    opts.work_dir = dir / "c";
    pipeline::train_stage1(short_config, one, nullptr, opts, &again);
    CHECK(first.losses.front() == again.losses.front());
    CHECK(first.losses == again.losses);

    opts.work_dir = dir / "d";
    opts.stop_at = 5;
    pipeline::train_stage1(short_config, one, nullptr, opts, &part);
    opts.stop_at.reset();
    pipeline::train_stage1(short_config, one, nullptr, opts, &rest);
    CHECK(rest.first_step == 5);
    REQUIRE(rest.losses.size() == 7);
    for (size_t i = 0; i < 7; ++i) CHECK(rest.losses[i] == doctest::Approx(first.losses[5 + i]).epsilon(1e-9));
  }
}

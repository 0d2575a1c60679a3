#include "doctest_torch.hpp"

#include <algorithm>
#include <set>

#include "helpers.hpp"
#include "qscraft/scrabble.hpp"

using namespace qscraft;

namespace {

codec::QuantizedGrid grid_from(const torch::Tensor& indices, const torch::Tensor& codebook) {
  const int64_t h = indices.size(0), w = indices.size(1);
  return {codebook.index_select(0, indices.flatten()).reshape({h, w, -1}), indices};
}

}  // namespace

TEST_SUITE("scrabble") {
  TEST_CASE("bag collects distinct indices") {
    auto codebook = torch::randn({12, 3});
    auto bag = scrabble::build_bag(grid_from(torch::tensor({3, 3, 3, 9}).reshape({2, 2}), codebook));
    CHECK(bag.member_indices == std::vector<int64_t>{3, 9});
    CHECK(torch::equal(bag.member_vectors[0], codebook[3]));
    CHECK(torch::equal(bag.member_vectors[1], codebook[9]));
    CHECK(bag.contains(9));
    CHECK_FALSE(bag.contains(4));
  }

  TEST_CASE("all-identical grid gives a singleton bag") {
    auto codebook = torch::randn({5, 2});
    auto bag = scrabble::build_bag(grid_from(torch::full({3, 4}, 2, torch::kInt64), codebook));
    CHECK(bag.size() == 1);
    CHECK(bag.member_indices[0] == 2);
  }

  TEST_CASE("property: bag size equals an exhaustive unique count") {
    std::mt19937_64 rng(21);
    torch::manual_seed(21);
    for (int trial = 0; trial < 50; ++trial) {
      const int64_t m = 2 + static_cast<int64_t>(rng() % 60);
      const int64_t h = 1 + static_cast<int64_t>(rng() % 8), w = 1 + static_cast<int64_t>(rng() % 8);
      auto idx = torch::randint(0, m, {h, w}, torch::kInt64);
      auto bag = scrabble::build_bag(grid_from(idx, torch::randn({m, 3})));
      std::vector<int64_t> seen;
      auto flat = idx.flatten();
      for (int64_t i = 0; i < flat.numel(); ++i) {
        const int64_t v = flat[i].item<int64_t>();
        if (std::find(seen.begin(), seen.end(), v) == seen.end()) seen.push_back(v);
      }
      CHECK(bag.size() == static_cast<int64_t>(seen.size()));
      CHECK(bag.size() >= 1);
      CHECK(bag.size() <= std::min(h * w, m));
      CHECK(std::is_sorted(bag.member_indices.begin(), bag.member_indices.end()));
      auto membership = bag.membership(m);
      CHECK(membership.sum().item<int64_t>() == bag.size());
    }
  }

  TEST_CASE("latent pixel equal to a member picks that member") {
    auto codebook = torch::randn({8, 4});
    auto bag = scrabble::build_bag(grid_from(torch::tensor({1, 5, 6, 1}).reshape({2, 2}), codebook));
    auto z = codec::LatentGrid{codebook[6].reshape({1, 1, 4}).clone()};
    CHECK(scrabble::scrabble_patchwork(z, bag).indices[0][0].item<int64_t>() == 6);
  }

  TEST_CASE("singleton bag gives a constant patchwork") {
    auto codebook = torch::randn({8, 4});
    auto bag = scrabble::build_bag(grid_from(torch::zeros({2, 2}, torch::kInt64), codebook));
    auto pw = scrabble::scrabble_patchwork(codec::LatentGrid{torch::randn({3, 3, 4})}, bag);
    CHECK((pw.indices == 0).all().item<bool>());
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) CHECK(torch::equal(pw.data[i][j], codebook[0]));
    }
  }

  TEST_CASE("random 4x4 reference, 5-member bag: exhaustive per-pixel scan") {
    torch::manual_seed(22);
    for (int trial = 0; trial < 20; ++trial) {
      auto codebook = torch::randn({16, 6});
      auto src = torch::tensor({2, 4, 7, 11, 13, 2, 4, 2, 7}).reshape({3, 3});
      auto bag = scrabble::build_bag(grid_from(src, codebook));
      REQUIRE(bag.size() == 5);
      auto z = torch::randn({4, 4, 6});
      auto pw = scrabble::scrabble_patchwork(codec::LatentGrid{z}, bag);
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
          const int64_t local = testing::brute_nearest(z[i][j], bag.member_vectors);
          CHECK(pw.indices[i][j].item<int64_t>() == bag.member_indices[static_cast<size_t>(local)]);
          CHECK(torch::equal(pw.data[i][j], codebook[pw.indices[i][j].item<int64_t>()]));
        }
      }
    }
  }

  TEST_CASE("property: closure, optimality, determinism") {
    std::mt19937_64 rng(23);
    torch::manual_seed(23);
    for (int trial = 0; trial < 40; ++trial) {
      const int64_t m = 4 + static_cast<int64_t>(rng() % 40), c = 1 + static_cast<int64_t>(rng() % 6);
      const int64_t h = 1 + static_cast<int64_t>(rng() % 5), w = 1 + static_cast<int64_t>(rng() % 5);
      auto codebook = torch::randn({m, c});
      auto bag = scrabble::build_bag(grid_from(torch::randint(0, m, {h, w}, torch::kInt64), codebook));
      auto z = codec::LatentGrid{torch::randn({h + 1, w, c})};
      auto pw = scrabble::scrabble_patchwork(z, bag);
      auto again = scrabble::scrabble_patchwork(z, bag);
      CHECK(torch::equal(pw.indices, again.indices));
      for (int64_t i = 0; i <= h; ++i) {
        for (int64_t j = 0; j < w; ++j) {
          const int64_t chosen = pw.indices[i][j].item<int64_t>();
          CHECK(bag.contains(chosen));
          const double d = testing::sq_dist(z.data[i][j], codebook[chosen]);
          for (auto k : bag.member_indices) CHECK(d <= testing::sq_dist(z.data[i][j], codebook[k]));
        }
      }
      auto hist = scrabble::index_histogram(pw.indices, m);
      for (int64_t k = 0; k < m; ++k) {
        if (hist[static_cast<size_t>(k)] > 0) CHECK(bag.contains(k));
      }
    }
  }

  TEST_CASE("property: permuting the source layout leaves bag and patchwork unchanged") {
    torch::manual_seed(24);
    auto codebook = torch::randn({20, 4});
    auto src = torch::randint(0, 20, {4, 4}, torch::kInt64);
    auto perm = torch::randperm(16);
    auto shuffled = src.flatten().index_select(0, perm).reshape({4, 4});
    auto a = scrabble::build_bag(grid_from(src, codebook));
    auto b = scrabble::build_bag(grid_from(shuffled, codebook));
    CHECK(a.member_indices == b.member_indices);
    auto z = codec::LatentGrid{torch::randn({4, 4, 4})};
    CHECK(torch::equal(scrabble::scrabble_patchwork(z, a).indices, scrabble::scrabble_patchwork(z, b).indices));
  }

  TEST_CASE("batched patchwork indices agree with the per-item form") {
    torch::manual_seed(25);
    auto codebook = torch::randn({12, 3});
    auto src = torch::randint(0, 12, {3, 2, 2}, torch::kInt64);
    auto ref = torch::randn({3, 3, 2, 2});
    auto batched = scrabble::patchwork_indices(ref, src, codebook);
    for (int b = 0; b < 3; ++b) {
      auto bag = scrabble::build_bag(grid_from(src[b], codebook));
      auto single = scrabble::scrabble_patchwork(codec::LatentGrid{ref[b].permute({1, 2, 0}).contiguous()}, bag);
      CHECK(torch::equal(batched[b], single.indices));
    }
  }

  TEST_CASE("index histogram counts") {
    auto hist = scrabble::index_histogram(torch::tensor({1, 1, 2, 1}).reshape({2, 2}), 4);
    CHECK(hist == std::vector<int64_t>{0, 3, 1, 0});
    CHECK(scrabble::histogram_to_json(hist).dump() == "[0,3,1,0]");
  }

  TEST_CASE("cosine similarity of histograms") {
    CHECK(scrabble::cosine_similarity({1, 2, 0}, {2, 4, 0}) == doctest::Approx(1.0));
    CHECK(scrabble::cosine_similarity({1, 0}, {0, 3}) == doctest::Approx(0.0));
    CHECK(scrabble::cosine_similarity({1, 1}, {1, 0}) == doctest::Approx(1.0 / std::sqrt(2.0)));
  }
}

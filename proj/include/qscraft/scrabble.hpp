#pragma once

#include <memory>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "qscraft/codec.hpp"

namespace qscraft::scrabble {

// Distinct codebook entries present in one quantized grid, sorted by index.
struct Bag {
  std::vector<int64_t> member_indices;
  torch::Tensor member_vectors;  // |bag|×c_q, rows equal codebook entries
  int64_t source_height = 0;
  int64_t source_width = 0;

  int64_t size() const { return static_cast<int64_t>(member_indices.size()); }
  bool contains(int64_t index) const;
  // m-long boolean membership mask.
  torch::Tensor membership(int64_t codebook_size) const;
};

// Latent grid assembled only from bag members.
struct Patchwork {
  torch::Tensor data;     // h×w×c_q
  torch::Tensor indices;  // h×w int64, every value a bag member
  std::shared_ptr<const Bag> bag;
};

Bag build_bag(const codec::QuantizedGrid& zq);

// Per pixel of z_ref, the squared-L2 nearest bag member; ties go to the lowest
// codebook index. The reversed flow is the same call with the source latent
// and the target bag.
Patchwork scrabble_patchwork(const codec::LatentGrid& z_ref, std::shared_ptr<const Bag> bag);
Patchwork scrabble_patchwork(const codec::LatentGrid& z_ref, const Bag& bag);

// Batched form used in training: for each item b, the bag is the set of
// distinct values in bag_source_indices[b] (h×w), and each latent pixel of
// reference[b] (C×h×w) picks its nearest member. Returns B×h×w indices.
torch::Tensor patchwork_indices(const torch::Tensor& reference,
                                const torch::Tensor& bag_source_indices,
                                const torch::Tensor& codebook);

// Count of each codebook index in an index grid; length m, sums to h·w.
std::vector<int64_t> index_histogram(const torch::Tensor& indices, int64_t codebook_size);

double cosine_similarity(const std::vector<int64_t>& a, const std::vector<int64_t>& b);

nlohmann::json histogram_to_json(const std::vector<int64_t>& counts);

}  // namespace qscraft::scrabble

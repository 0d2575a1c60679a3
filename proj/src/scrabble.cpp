#include "qscraft/scrabble.hpp"

#include <algorithm>
#include <cmath>

#include "qscraft/error.hpp"

namespace qscraft::scrabble {

bool Bag::contains(int64_t index) const {
  return std::binary_search(member_indices.begin(), member_indices.end(), index);
}

torch::Tensor Bag::membership(int64_t codebook_size) const {
  auto mask = torch::zeros({codebook_size}, torch::kBool);
  auto acc = mask.accessor<bool, 1>();
  for (int64_t k : member_indices) {
    if (k < 0 || k >= codebook_size) reject("bag member outside the codebook");
    acc[k] = true;
  }
  return mask;
}

Bag build_bag(const codec::QuantizedGrid& zq) {
  if (!zq.indices.defined() || zq.indices.dim() != 2) reject("quantized grid must be h×w");
  auto flat_idx = zq.indices.reshape({-1}).to(torch::kInt64).contiguous();
  auto flat_vec = zq.data.reshape({flat_idx.size(0), -1});

  Bag bag;
  bag.source_height = zq.height();
  bag.source_width = zq.width();
  std::vector<std::pair<int64_t, int64_t>> first_seen;  // (index, position)
  const auto* p = flat_idx.data_ptr<int64_t>();
  for (int64_t pos = 0; pos < flat_idx.size(0); ++pos) first_seen.emplace_back(p[pos], pos);
  std::stable_sort(first_seen.begin(), first_seen.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<int64_t> rows;
  for (const auto& [index, pos] : first_seen) {
    if (bag.member_indices.empty() || bag.member_indices.back() != index) {
      bag.member_indices.push_back(index);
      rows.push_back(pos);
    }
  }
  bag.member_vectors = flat_vec.index_select(0, torch::tensor(rows, torch::kInt64)).clone();
  return bag;
}

Patchwork scrabble_patchwork(const codec::LatentGrid& z_ref, std::shared_ptr<const Bag> bag) {
  if (!bag || bag->size() == 0) reject("scrabble needs a non-empty bag");
  if (!z_ref.data.defined() || z_ref.data.dim() != 3) reject("reference latent must be h×w×c_q");
  if (z_ref.channels() != bag->member_vectors.size(1)) {
    reject("reference latent channels do not match bag vectors");
  }
  const int64_t h = z_ref.height(), w = z_ref.width();
  auto queries = z_ref.data.reshape({h * w, -1});
  auto rows = codec::nearest_rows(queries, bag->member_vectors);
  auto members = torch::tensor(bag->member_indices, torch::kInt64);

  Patchwork out;
  out.indices = members.index_select(0, rows).reshape({h, w});
  out.data = bag->member_vectors.index_select(0, rows).reshape({h, w, -1});
  out.bag = std::move(bag);
  return out;
}

Patchwork scrabble_patchwork(const codec::LatentGrid& z_ref, const Bag& bag) {
  return scrabble_patchwork(z_ref, std::make_shared<const Bag>(bag));
}

torch::Tensor patchwork_indices(const torch::Tensor& reference,
                                const torch::Tensor& bag_source_indices,
                                const torch::Tensor& codebook) {
  torch::NoGradGuard no_grad;
  const int64_t batch = reference.size(0);
  const int64_t h = reference.size(2), w = reference.size(3);
  auto table = codebook.detach();
  auto out = torch::empty({batch, h, w}, torch::kInt64);
  for (int64_t b = 0; b < batch; ++b) {
    auto members = std::get<0>(torch::_unique(bag_source_indices[b].reshape({-1}), true));
    auto queries = reference[b].detach().permute({1, 2, 0}).reshape({h * w, -1});
    auto rows = codec::nearest_rows(queries, table.index_select(0, members));
    out[b] = members.index_select(0, rows).reshape({h, w});
  }
  return out;
}

std::vector<int64_t> index_histogram(const torch::Tensor& indices, int64_t codebook_size) {
  std::vector<int64_t> counts(static_cast<size_t>(codebook_size), 0);
  auto flat = indices.reshape({-1}).to(torch::kInt64).contiguous();
  const auto* p = flat.data_ptr<int64_t>();
  for (int64_t i = 0; i < flat.size(0); ++i) {
    if (p[i] < 0 || p[i] >= codebook_size) reject("index outside [0, m-1]");
    ++counts[static_cast<size_t>(p[i])];
  }
  return counts;
}

double cosine_similarity(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  if (a.size() != b.size()) reject("histograms differ in length");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

nlohmann::json histogram_to_json(const std::vector<int64_t>& counts) {
  return nlohmann::json(counts);
}

}  // namespace qscraft::scrabble

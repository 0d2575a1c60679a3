#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "qscraft/condition.hpp"
#include "qscraft/config.hpp"
#include "qscraft/scrabble.hpp"

namespace qscraft::scrabble_transformer {

// (2l+n)×(2l+n) attention permissions; true means row may attend column.
// Layout: [s_1..s_l, c_1..c_n, t_[s], t_1..t_{l−1}].
struct AttentionMask {
  int64_t sequence_length = 0;  // l
  int64_t condition_length = 0; // n
  torch::Tensor allowed;        // bool

  bool at(int64_t row, int64_t col) const;
  int64_t size() const { return allowed.size(0); }
};

// Context rows (sources and condition) see only the context; target rows see
// the full context and every target slot up to and including their own.
AttentionMask build_attention_mask(int64_t l, int64_t n);

struct ModelShape {
  int64_t codebook_size = 256;  // m
  int64_t sequence_length = 256;  // l
  int64_t condition_length = 8;   // n
  int64_t width = 128;            // n_c
  int64_t layers = 4;
  int64_t heads = 4;
  int64_t ff_multiplier = 4;

  static ModelShape from_config(const RunConfig& config);
};

class SelfAttentionImpl : public torch::nn::Module {
 public:
  SelfAttentionImpl(int64_t width, int64_t heads);
  // x: B×L×n_c, allowed: L×L bool
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& allowed);

 private:
  int64_t heads_;
  torch::nn::Linear qkv_{nullptr}, proj_{nullptr};
};
TORCH_MODULE(SelfAttention);

class BlockImpl : public torch::nn::Module {
 public:
  BlockImpl(int64_t width, int64_t heads, int64_t ff_multiplier);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& allowed);

 private:
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  SelfAttention attention_{nullptr};
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(Block);

// Decoder-only transformer over [source tokens, condition tokens, start token,
// target tokens] with separate source and target embedding tables.
class ScrabbleTransformerImpl : public torch::nn::Module {
 public:
  explicit ScrabbleTransformerImpl(const ModelShape& shape);

  // source: B×l indices; condition: B×n×n_c; target_prefix: B×P indices with
  // P ≤ l. Returns B×min(P+1, l)×m logits; row j predicts target j from the
  // start token and target_prefix[0..j).
  torch::Tensor forward(const torch::Tensor& source, const torch::Tensor& condition,
                        const torch::Tensor& target_prefix);

  const ModelShape& shape() const { return shape_; }

  torch::nn::Embedding source_embedding{nullptr};
  torch::nn::Embedding target_embedding{nullptr};
  torch::Tensor start_token;  // 1×n_c
  torch::Tensor positions;    // (2l+n)×n_c

 private:
  ModelShape shape_;
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear head_{nullptr};
  torch::Tensor allowed_;
};
TORCH_MODULE(ScrabbleTransformer);

// Pose encoder F plus the transformer; trained jointly in stage 2.
class ScrabbleModelImpl : public torch::nn::Module {
 public:
  ScrabbleModelImpl(const ModelShape& shape, const ConditionConfig& condition);

  // poses: B×n×2 normalized coordinates with −1 sentinels.
  torch::Tensor forward(const torch::Tensor& source, const torch::Tensor& poses,
                        const torch::Tensor& target_prefix);

  condition::PoseEncoder pose_encoder{nullptr};
  ScrabbleTransformer transformer{nullptr};
};
TORCH_MODULE(ScrabbleModel);

// B×m membership of each row's distinct source indices.
torch::Tensor bag_membership(const torch::Tensor& source, int64_t codebook_size);

// Sets logits of indices outside the bag to −∞. `membership` broadcasts
// against the leading dims of `logits` (…×m).
torch::Tensor constrain_logits(const torch::Tensor& logits, const torch::Tensor& membership);
torch::Tensor constrain_logits(const torch::Tensor& logits, const scrabble::Bag& bag);

struct RoiOptions {
  double foreground_weight = 5.0;
  int64_t pad_cells = 1;
};

// Cells inside the padded bounding box of visible keypoints get the
// foreground weight, others 1.0; all-occluded poses give uniform weights.
std::vector<double> roi_weights(const condition::PoseFrame& pose, int64_t h, int64_t w,
                                const RoiOptions& options);

struct LossBreakdown {
  torch::Tensor loss;          // weighted_sum / weight of included positions
  torch::Tensor weighted_sum;  // Σ w_j · CE_j over included positions
  int64_t included = 0;
  int64_t violations = 0;      // targets outside the bag, excluded
  int64_t correct = 0;         // argmax hits among included positions
};

// Weighted cross-entropy over bag-constrained logits (B×l×m) against targets
// (B×l) with weights (B×l).
LossBreakdown training_loss(const torch::Tensor& logits, const torch::Tensor& targets,
                            const torch::Tensor& membership, const torch::Tensor& weights);

struct SamplingPolicy {
  enum class Kind { kGreedy, kTopK };
  Kind kind = Kind::kTopK;
  int64_t top_k = 5;
  double temperature = 1.0;
  uint64_t seed = 0;

  static SamplingPolicy greedy() { return SamplingPolicy{Kind::kGreedy, 1, 1.0, 0}; }
};

struct TraceStep {
  int64_t position = 0;
  int64_t index = 0;
  std::vector<int64_t> top_indices;
  std::vector<double> top_probabilities;
};

struct GenerationTrace {
  std::vector<TraceStep> steps;
  nlohmann::json to_json() const;
};

// Autoregressive decoding of l target indices; every emitted index belongs to
// the source bag.
std::vector<int64_t> generate(ScrabbleModel& model, const std::vector<int64_t>& source,
                              const condition::PoseFrame& pose, const SamplingPolicy& policy,
                              GenerationTrace* trace = nullptr);

// Greedy decoding for a batch (B×l sources, B×n×2 poses); returns B×l.
torch::Tensor generate_greedy_batch(ScrabbleModel& model, const torch::Tensor& source,
                                    const torch::Tensor& poses);

// Linear warmup to `base` over `warmup` steps, then linear decay to 0 at `total`.
double warmup_linear_decay(int64_t step, int64_t warmup, int64_t total, double base);

}  // namespace qscraft::scrabble_transformer

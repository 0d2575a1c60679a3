#include "qscraft/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "qscraft/error.hpp"

namespace qscraft::scrabble_transformer {

namespace nn = torch::nn;

bool AttentionMask::at(int64_t row, int64_t col) const {
  return allowed.index({row, col}).item<bool>();
}

AttentionMask build_attention_mask(int64_t l, int64_t n) {
  if (l < 1 || n < 1) reject("attention mask needs l >= 1 and n >= 1");
  const int64_t context = l + n;
  const int64_t total = 2 * l + n;
  auto allowed = torch::zeros({total, total}, torch::kBool);
  allowed.index_put_({torch::indexing::Slice(0, context), torch::indexing::Slice(0, context)},
                     true);
  allowed.index_put_({torch::indexing::Slice(context, total), torch::indexing::Slice(0, context)},
                     true);
  allowed.index_put_(
      {torch::indexing::Slice(context, total), torch::indexing::Slice(context, total)},
      torch::ones({l, l}, torch::kBool).tril());
  return AttentionMask{l, n, allowed};
}

ModelShape ModelShape::from_config(const RunConfig& config) {
  ModelShape s;
  s.codebook_size = config.codec.codebook_size;
  s.sequence_length = config.sequence_length();
  s.condition_length = config.condition.keypoints;
  s.width = config.transformer.width;
  s.layers = config.transformer.layers;
  s.heads = config.transformer.heads;
  s.ff_multiplier = config.transformer.ff_multiplier;
  return s;
}

SelfAttentionImpl::SelfAttentionImpl(int64_t width, int64_t heads) : heads_(heads) {
  if (width % heads != 0) reject("width must be divisible by heads");
  qkv_ = register_module("qkv", nn::Linear(width, 3 * width));
  proj_ = register_module("proj", nn::Linear(width, width));
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& allowed) {
  const int64_t b = x.size(0), len = x.size(1), width = x.size(2);
  const int64_t head_dim = width / heads_;
  auto qkv = qkv_(x).reshape({b, len, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
  auto q = qkv[0], k = qkv[1], v = qkv[2];
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
  scores = scores.masked_fill(allowed.logical_not(), -std::numeric_limits<double>::infinity());
  auto attn = torch::softmax(scores, -1);
  auto out = torch::matmul(attn, v).permute({0, 2, 1, 3}).reshape({b, len, width});
  return proj_(out);
}

BlockImpl::BlockImpl(int64_t width, int64_t heads, int64_t ff_multiplier) {
  norm1_ = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({width})));
  norm2_ = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({width})));
  attention_ = register_module("attention", SelfAttention(width, heads));
  fc1_ = register_module("fc1", nn::Linear(width, ff_multiplier * width));
  fc2_ = register_module("fc2", nn::Linear(ff_multiplier * width, width));
}

torch::Tensor BlockImpl::forward(const torch::Tensor& x, const torch::Tensor& allowed) {
  auto h = x + attention_(norm1_(x), allowed);
  return h + fc2_(torch::gelu(fc1_(norm2_(h))));
}

ScrabbleTransformerImpl::ScrabbleTransformerImpl(const ModelShape& shape) : shape_(shape) {
  const int64_t total = 2 * shape.sequence_length + shape.condition_length;
  source_embedding = register_module("source_embedding", nn::Embedding(shape.codebook_size, shape.width));
  target_embedding = register_module("target_embedding", nn::Embedding(shape.codebook_size, shape.width));
  start_token = register_parameter("start_token", torch::randn({1, shape.width}) * 0.02);
  positions = register_parameter("positions", torch::randn({total, shape.width}) * 0.02);
  blocks_ = register_module("blocks", nn::ModuleList());
  for (int64_t i = 0; i < shape.layers; ++i) {
    blocks_->push_back(Block(shape.width, shape.heads, shape.ff_multiplier));
  }
  norm_ = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({shape.width})));
  head_ = register_module("head", nn::Linear(shape.width, shape.codebook_size));
  allowed_ = build_attention_mask(shape.sequence_length, shape.condition_length).allowed;
}

namespace {

void check_indices(const torch::Tensor& t, int64_t m, const char* what) {
  if (t.numel() == 0) return;
  if (t.min().item<int64_t>() < 0 || t.max().item<int64_t>() >= m) {
    reject(std::string(what) + " index outside [0, m-1]");
  }
}

}  // namespace

torch::Tensor ScrabbleTransformerImpl::forward(const torch::Tensor& source,
                                               const torch::Tensor& condition,
                                               const torch::Tensor& target_prefix) {
  const int64_t l = shape_.sequence_length, n = shape_.condition_length;
  if (source.dim() != 2 || source.size(1) != l) reject("source must be B×l");
  if (condition.dim() != 3 || condition.size(1) != n || condition.size(2) != shape_.width) {
    reject("condition must be B×n×n_c");
  }
  if (target_prefix.dim() != 2 || target_prefix.size(1) > l) reject("target prefix must be B×P, P <= l");
  check_indices(source, shape_.codebook_size, "source");
  check_indices(target_prefix, shape_.codebook_size, "target");

  const int64_t batch = source.size(0);
  const int64_t rows = std::min(target_prefix.size(1) + 1, l);
  auto start = start_token.unsqueeze(0).expand({batch, 1, shape_.width});
  std::vector<torch::Tensor> parts{source_embedding(source), condition, start};
  if (rows > 1) {
    parts.push_back(target_embedding(target_prefix.narrow(1, 0, rows - 1)));
  }
  auto x = torch::cat(parts, 1);
  const int64_t len = x.size(1);
  x = x + positions.narrow(0, 0, len).unsqueeze(0);
  auto allowed = allowed_.narrow(0, 0, len).narrow(1, 0, len);
  for (const auto& block : *blocks_) {
    x = block->as<Block>()->forward(x, allowed);
  }
  x = norm_(x.narrow(1, l + n, rows));
  return head_(x);
}

ScrabbleModelImpl::ScrabbleModelImpl(const ModelShape& shape, const ConditionConfig& condition) {
  pose_encoder = register_module(
      "pose_encoder", condition::PoseEncoder(condition.hidden1, condition.hidden2, shape.width));
  transformer = register_module("transformer", ScrabbleTransformer(shape));
}

torch::Tensor ScrabbleModelImpl::forward(const torch::Tensor& source, const torch::Tensor& poses,
                                         const torch::Tensor& target_prefix) {
  return transformer(source, pose_encoder(poses), target_prefix);
}

torch::Tensor bag_membership(const torch::Tensor& source, int64_t codebook_size) {
  auto membership = torch::zeros({source.size(0), codebook_size}, torch::kBool);
  membership.scatter_(1, source.to(torch::kInt64), true);
  return membership;
}

torch::Tensor constrain_logits(const torch::Tensor& logits, const torch::Tensor& membership) {
  if (logits.size(-1) != membership.size(-1)) reject("membership length differs from m");
  auto keep = membership;
  while (keep.dim() < logits.dim()) keep = keep.unsqueeze(-2);
  return logits.masked_fill(keep.logical_not(), -std::numeric_limits<double>::infinity());
}

torch::Tensor constrain_logits(const torch::Tensor& logits, const scrabble::Bag& bag) {
  if (bag.size() == 0) reject("constrained decoding needs a non-empty bag");
  return constrain_logits(logits, bag.membership(logits.size(-1)));
}

std::vector<double> roi_weights(const condition::PoseFrame& pose, int64_t h, int64_t w,
                                const RoiOptions& options) {
  pose.validate();
  std::vector<double> weights(static_cast<size_t>(h * w), 1.0);
  if (pose.visible_count() == 0) return weights;
  auto cell = [](double coord, int64_t extent) {
    return std::clamp<int64_t>(static_cast<int64_t>(std::floor(coord * extent)), 0, extent - 1);
  };
  int64_t r0 = h, r1 = -1, c0 = w, c1 = -1;
  for (const auto& p : pose.points) {
    if (!p.visible()) continue;
    const int64_t r = cell(p.y, h), c = cell(p.x, w);
    r0 = std::min(r0, r);
    r1 = std::max(r1, r);
    c0 = std::min(c0, c);
    c1 = std::max(c1, c);
  }
  r0 = std::max<int64_t>(0, r0 - options.pad_cells);
  c0 = std::max<int64_t>(0, c0 - options.pad_cells);
  r1 = std::min<int64_t>(h - 1, r1 + options.pad_cells);
  c1 = std::min<int64_t>(w - 1, c1 + options.pad_cells);
  for (int64_t r = r0; r <= r1; ++r) {
    for (int64_t c = c0; c <= c1; ++c) weights[static_cast<size_t>(r * w + c)] = options.foreground_weight;
  }
  return weights;
}

LossBreakdown training_loss(const torch::Tensor& logits, const torch::Tensor& targets,
                            const torch::Tensor& membership, const torch::Tensor& weights) {
  auto constrained = constrain_logits(logits, membership);
  auto log_probs = torch::log_softmax(constrained, -1);
  auto tgt = targets.to(torch::kInt64).unsqueeze(-1);
  auto in_bag = membership.unsqueeze(1).expand_as(logits).gather(-1, tgt).squeeze(-1);
  auto nll = -log_probs.gather(-1, tgt).squeeze(-1);
  auto zero = torch::zeros_like(nll);
  auto w = weights.to(logits.scalar_type());

  LossBreakdown out;
  out.weighted_sum = torch::where(in_bag, w * nll, zero).sum();
  auto mass = torch::where(in_bag, w, zero).sum();
  out.included = in_bag.sum().item<int64_t>();
  out.violations = in_bag.numel() - out.included;
  out.loss = out.included > 0 ? out.weighted_sum / mass : out.weighted_sum * 0.0;
  {
    torch::NoGradGuard no_grad;
    auto hits = (constrained.argmax(-1) == targets.to(torch::kInt64)).logical_and(in_bag);
    out.correct = hits.sum().item<int64_t>();
  }
  return out;
}

nlohmann::json GenerationTrace::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& s : steps) {
    arr.push_back({{"position", s.position},
                   {"index", s.index},
                   {"top_indices", s.top_indices},
                   {"top_probabilities", s.top_probabilities}});
  }
  return arr;
}

namespace {

int64_t argmax_lowest(const std::vector<double>& v) {
  int64_t best = 0;
  for (size_t k = 1; k < v.size(); ++k) {
    if (v[k] > v[static_cast<size_t>(best)]) best = static_cast<int64_t>(k);
  }
  return best;
}

// Indices sorted by descending probability, ties by ascending index.
std::vector<int64_t> ranked(const std::vector<double>& probs) {
  std::vector<int64_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return probs[static_cast<size_t>(a)] > probs[static_cast<size_t>(b)];
  });
  return order;
}

}  // namespace

std::vector<int64_t> generate(ScrabbleModel& model, const std::vector<int64_t>& source,
                              const condition::PoseFrame& pose, const SamplingPolicy& policy,
                              GenerationTrace* trace) {
  torch::NoGradGuard no_grad;
  const auto& shape = model->transformer->shape();
  const int64_t l = shape.sequence_length, m = shape.codebook_size;
  if (static_cast<int64_t>(source.size()) != l) reject("source must hold l indices");
  if (static_cast<int64_t>(pose.size()) != shape.condition_length) {
    reject("pose keypoint count does not match the model");
  }
  pose.validate();
  if (policy.kind == SamplingPolicy::Kind::kTopK && (policy.top_k < 1 || policy.temperature <= 0)) {
    reject("top-k sampling needs k >= 1 and temperature > 0");
  }
  const auto dtype = model->transformer->start_token.scalar_type();
  auto src = torch::tensor(source, torch::kInt64).unsqueeze(0);
  auto membership = bag_membership(src, m);
  auto cond = model->pose_encoder(pose.to_tensor().to(dtype).unsqueeze(0));

  std::mt19937_64 rng(policy.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(l));
  const double temperature = policy.kind == SamplingPolicy::Kind::kGreedy ? 1.0 : policy.temperature;
  for (int64_t j = 0; j < l; ++j) {
    auto prefix = torch::tensor(out, torch::kInt64).reshape({1, j});
    auto logits = model->transformer(src, cond, prefix).select(1, j)[0];
    auto constrained = constrain_logits(logits.unsqueeze(0), membership)[0];
    auto probs_t = torch::softmax(constrained.to(torch::kFloat64) / temperature, -1).contiguous();
    std::vector<double> probs(probs_t.data_ptr<double>(), probs_t.data_ptr<double>() + m);

    int64_t chosen = 0;
    const auto order = ranked(probs);
    if (policy.kind == SamplingPolicy::Kind::kGreedy) {
      chosen = argmax_lowest(probs);
    } else {
      int64_t support = 0;
      for (double p : probs) support += p > 0 ? 1 : 0;
      const int64_t k = std::max<int64_t>(1, std::min(policy.top_k, support));
      double mass = 0;
      for (int64_t i = 0; i < k; ++i) mass += probs[static_cast<size_t>(order[static_cast<size_t>(i)])];
      double u = uniform(rng) * mass;
      chosen = order[static_cast<size_t>(k - 1)];
      for (int64_t i = 0; i < k; ++i) {
        const auto idx = order[static_cast<size_t>(i)];
        u -= probs[static_cast<size_t>(idx)];
        if (u < 0) {
          chosen = idx;
          break;
        }
      }
    }
    out.push_back(chosen);
    if (trace != nullptr) {
      TraceStep step;
      step.position = j;
      step.index = chosen;
      for (size_t i = 0; i < std::min<size_t>(5, order.size()); ++i) {
        step.top_indices.push_back(order[i]);
        step.top_probabilities.push_back(probs[static_cast<size_t>(order[i])]);
      }
      trace->steps.push_back(std::move(step));
    }
  }
  return out;
}

torch::Tensor generate_greedy_batch(ScrabbleModel& model, const torch::Tensor& source,
                                    const torch::Tensor& poses) {
  torch::NoGradGuard no_grad;
  const auto& shape = model->transformer->shape();
  const int64_t l = shape.sequence_length, m = shape.codebook_size;
  const auto dtype = model->transformer->start_token.scalar_type();
  auto membership = bag_membership(source, m);
  auto cond = model->pose_encoder(poses.to(dtype));
  auto out = torch::empty({source.size(0), 0}, torch::kInt64);
  for (int64_t j = 0; j < l; ++j) {
    auto logits = model->transformer(source, cond, out).select(1, j);
    auto next = constrain_logits(logits, membership).argmax(-1, true);
    out = torch::cat({out, next}, 1);
  }
  return out;
}

double warmup_linear_decay(int64_t step, int64_t warmup, int64_t total, double base) {
  if (total <= 0) return base;
  if (warmup > 0 && step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const int64_t span = std::max<int64_t>(1, total - warmup);
  const double remaining = static_cast<double>(total - step) / static_cast<double>(span);
  return base * std::clamp(remaining, 0.0, 1.0);
}

}  // namespace qscraft::scrabble_transformer

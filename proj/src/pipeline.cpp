#include "qscraft/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "qscraft/checkpoint.hpp"
#include "qscraft/error.hpp"
#include "qscraft/metrics.hpp"
#include "qscraft/scrabble.hpp"

namespace qscraft::pipeline {

namespace st = scrabble_transformer;

namespace {

constexpr double kCropMargin = 0.08;

bool finite(const torch::Tensor& t) {
  return !t.defined() || std::isfinite(t.detach().item<double>());
}

double value(const torch::Tensor& t) { return t.defined() ? t.detach().item<double>() : 0.0; }

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
}

std::ofstream open_log(const fs::path& path, bool append, const std::string& header) {
  const bool keep = append && fs::exists(path);
  std::ofstream out(path, keep ? std::ios::app : std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write loss log " + path.string());
  if (!keep) out << header << "\n";
  out << std::setprecision(8);
  return out;
}

// T×3×H×W stacks, built once so batches are cheap gathers.
std::vector<torch::Tensor> stack_frames(const std::vector<synthdata::Sequence>& sequences) {
  std::vector<torch::Tensor> out;
  out.reserve(sequences.size());
  for (const auto& s : sequences) {
    if (s.frames.size() < 2) reject("sequence " + s.id + " has fewer than two frames");
    out.push_back(to_batch(s.frames));
  }
  return out;
}

void require_file(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) {
    throw Error(ErrorKind::kMissingArtifact, "missing " + path.string() + "; " + hint);
  }
}

void freeze(torch::nn::Module& module) {
  for (auto& p : module.parameters()) p.set_requires_grad(false);
  module.eval();
}

synthdata::Dataset load_training_data(const RunConfig& config) {
  const fs::path manifest = fs::path(config.data.root) / "manifest.json";
  require_file(manifest, "run `qscraft make-data` first");
  auto dataset = synthdata::import_dataset(config.data.root);
  if (dataset.train.empty()) reject("dataset under " + config.data.root + " has no training sequences");
  if (dataset.image_size != config.data.image_size) {
    throw Error(ErrorKind::kConfigMismatch,
                "dataset image size " + std::to_string(dataset.image_size) +
                    " differs from data.image_size " + std::to_string(config.data.image_size));
  }
  return dataset;
}

}  // namespace

codec::CodecModel make_codec(const RunConfig& config) {
  config.validate();
  torch::manual_seed(config.codec.seed);
  return codec::CodecModel(config.codec);
}

metrics::PoseProbe make_probe(const RunConfig& config) {
  torch::manual_seed(config.probe.seed);
  return metrics::PoseProbe(config.data.image_size, config.probe, config.condition.keypoints);
}

codec::CodecModel train_stage1(const RunConfig& config,
                               const std::vector<synthdata::Sequence>& sequences,
                               metrics::PoseProbe* probe, const TrainOptions& options,
                               TrainSummary* summary) {
  config.validate();
  if (sequences.empty()) reject("stage 1 needs at least one training sequence");
  const auto& cc = config.codec;
  Artifacts art{options.work_dir};
  const fs::path ckpt = options.checkpoint_path.value_or(art.codec());
  const fs::path log_path = options.loss_log_path.value_or(art.stage1_log());
  DirectoryLock lock(options.work_dir);

  auto model = make_codec(config);
  codec::PatchDiscriminator disc(cc.discriminator_channels);
  torch::optim::Adam g_opt(model->parameters(),
                           torch::optim::AdamOptions(cc.learning_rate).betas({cc.adam_beta1, cc.adam_beta2}));
  torch::optim::Adam d_opt(disc->parameters(),
                           torch::optim::AdamOptions(cc.learning_rate).betas({cc.adam_beta1, cc.adam_beta2}));

  int64_t step = 0;
  if (options.resume && fs::exists(ckpt)) {
    step = load_checkpoint(ckpt, "codec", {{"codec", model.get()}, {"discriminator", disc.get()}},
                           {{"generator", &g_opt}, {"discriminator", &d_opt}}, config.codec_hash())
               .step;
  }
  save_config(art.config(), config);
  auto log = open_log(log_path, step > 0,
                      "step,lr,total,reconstruction,codebook,commitment,perceptual,adversarial,"
                      "discriminator,reseeded");

  codec::FeatureFn features;
  if (probe && cc.perceptual_weight > 0) {
    freeze(**probe);
    features = [probe](const torch::Tensor& x) { return (*probe)->feature_maps(x); };
  }
  const auto frames = stack_frames(sequences);
  const int64_t end = std::min<int64_t>(cc.steps, options.stop_at.value_or(cc.steps));
  if (summary) summary->first_step = step;
  auto save = [&](int64_t at) {
    save_checkpoint(ckpt, "codec", config, config.codec_hash(), at,
                    {{"codec", model.get()}, {"discriminator", disc.get()}},
                    {{"generator", &g_opt}, {"discriminator", &d_opt}});
  };

  model->train();
  disc->train();
  for (; step < end; ++step) {
    std::mt19937_64 rng(mix_seed(cc.seed, static_cast<uint64_t>(step)));
    std::vector<torch::Tensor> xs, xt;
    for (int b = 0; b < cc.batch_size; ++b) {
      const auto& seq = frames[std::uniform_int_distribution<size_t>(0, frames.size() - 1)(rng)];
      std::uniform_int_distribution<int64_t> pick(0, seq.size(0) - 1);
      xs.push_back(seq[pick(rng)]);
      xt.push_back(seq[pick(rng)]);
    }
    const auto x_s = torch::stack(xs), x_t = torch::stack(xt);
    const double lr = cc.learning_rate * std::pow(0.5, step / std::max(1, cc.lr_halving_steps));
    set_lr(g_opt, lr);
    set_lr(d_opt, lr);
    const bool adversarial = cc.adversarial_weight > 0 && step >= cc.adversarial_start;
    codec::Stage1Weights weights{cc.commitment_beta, features ? cc.perceptual_weight : 0.0,
                                 adversarial ? cc.adversarial_weight : 0.0};
    auto losses = codec::stage1_loss(x_s, x_t, model, weights, features ? &features : nullptr,
                                     adversarial ? &disc : nullptr);
    for (const auto* t : {&losses.generator_total, &losses.reconstruction, &losses.discriminator}) {
      if (!finite(*t)) {
        std::ostringstream msg;
        msg << "non-finite stage-1 loss at step " << step << " (total " << value(losses.generator_total)
            << ", reconstruction " << value(losses.reconstruction) << ")";
        if (fs::exists(ckpt)) msg << "; last good checkpoint " << ckpt.string();
        throw Error(ErrorKind::kTrainingDivergence, msg.str());
      }
    }
    g_opt.zero_grad();
    losses.generator_total.backward();
    g_opt.step();
    if (adversarial) {
      d_opt.zero_grad();
      losses.discriminator.backward();
      d_opt.step();
    }

    int64_t reseeded = 0;
    {
      torch::NoGradGuard no_grad;
      auto used = std::get<0>(torch::_unique(
          torch::cat({losses.source_indices.flatten(), losses.target_indices.flatten()})));
      model->last_used.index_fill_(0, used, step);
      if (cc.dead_code_steps > 0) {
        auto recent = torch::cat({losses.source_latents, losses.target_latents})
                          .detach()
                          .permute({0, 2, 3, 1})
                          .reshape({-1, cc.code_dim});
        reseeded = codec::reseed_dead_codes(model, step, cc.dead_code_steps, recent, rng);
      }
    }

    const double total = value(losses.generator_total);
    if (summary) summary->losses.push_back(total);
    log << step << ',' << lr << ',' << total << ',' << value(losses.reconstruction) << ','
        << value(losses.codebook) << ',' << value(losses.commitment) << ','
        << value(losses.perceptual) << ',' << value(losses.generator_adversarial) << ','
        << value(losses.discriminator) << ',' << reseeded << '\n';
    if (options.log && config.io.log_every > 0 && (step + 1) % config.io.log_every == 0) {
      *options.log << "stage1 step " << step + 1 << "/" << end << " loss " << total << " recon "
                   << value(losses.reconstruction) << std::endl;
    }
    if (config.io.checkpoint_every > 0 && (step + 1) % config.io.checkpoint_every == 0) save(step + 1);
  }
  log.flush();
  save(step);
  if (summary) summary->final_step = step;
  model->eval();
  return model;
}

std::vector<EncodedSequence> encode_sequences(codec::CodecModel& codec,
                                              const std::vector<synthdata::Sequence>& sequences) {
  torch::NoGradGuard no_grad;
  std::vector<EncodedSequence> out;
  out.reserve(sequences.size());
  for (const auto& s : sequences) {
    EncodedSequence e;
    e.latents = codec->encoder(to_batch(s.frames));
    e.indices = codec::quantize_indices(e.latents, codec->codebook);
    e.poses = s.poses;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<PairRef> all_pairs(const std::vector<EncodedSequence>& encoded) {
  std::vector<PairRef> pairs;
  for (size_t s = 0; s < encoded.size(); ++s) {
    const int64_t t = encoded[s].indices.size(0);
    for (int64_t a = 0; a < t; ++a) {
      for (int64_t b = 0; b < t; ++b) pairs.push_back({static_cast<int64_t>(s), a, b});
    }
  }
  return pairs;
}

PairBatch make_pair_batch(const std::vector<EncodedSequence>& encoded,
                          const std::vector<PairRef>& pairs, const torch::Tensor& codebook,
                          const RunConfig& config) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> src, ref, poses, weights;
  const auto& tc = config.transformer;
  for (const auto& [s, a, t] : pairs) {
    const auto& e = encoded.at(static_cast<size_t>(s));
    src.push_back(e.indices[a]);
    ref.push_back(e.latents[t]);
    const auto& pose = e.poses.at(static_cast<size_t>(t));
    poses.push_back(pose.to_tensor());
    const int64_t h = e.indices.size(1), w = e.indices.size(2);
    if (tc.use_roi) {
      weights.push_back(torch::tensor(
          st::roi_weights(pose, h, w, st::RoiOptions{tc.roi_weight, tc.roi_pad}), torch::kFloat32));
    } else {
      weights.push_back(torch::ones({h * w}));
    }
  }
  PairBatch batch;
  auto source = torch::stack(src);
  batch.target = scrabble::patchwork_indices(torch::stack(ref), source, codebook.detach())
                     .reshape({source.size(0), -1});
  batch.source = source.reshape({source.size(0), -1});
  batch.poses = torch::stack(poses);
  batch.weights = torch::stack(weights);
  return batch;
}

st::ScrabbleModel make_scrabble_model(const RunConfig& config) {
  config.validate();
  torch::manual_seed(config.transformer.seed);
  return st::ScrabbleModel(st::ModelShape::from_config(config), config.condition);
}

st::ScrabbleModel train_stage2(const RunConfig& config, codec::CodecModel& codec,
                               const std::vector<synthdata::Sequence>& sequences,
                               const TrainOptions& options, TrainSummary* summary) {
  config.validate();
  if (sequences.empty()) reject("stage 2 needs at least one training sequence");
  const auto& tc = config.transformer;
  Artifacts art{options.work_dir};
  const fs::path ckpt = options.checkpoint_path.value_or(art.transformer());
  const fs::path log_path = options.loss_log_path.value_or(art.stage2_log());
  DirectoryLock lock(options.work_dir);

  freeze(*codec);
  const auto encoded = encode_sequences(codec, sequences);
  const auto codebook = codec->codebook.detach();
  const int64_t m = codec->codebook_size();

  auto model = make_scrabble_model(config);
  torch::optim::Adam opt(model->parameters(),
                         torch::optim::AdamOptions(tc.learning_rate).betas({tc.adam_beta1, tc.adam_beta2}));
  int64_t step = 0;
  if (options.resume && fs::exists(ckpt)) {
    step = load_checkpoint(ckpt, "transformer", {{"scrabble", model.get()}}, {{"adam", &opt}},
                           config.hash())
               .step;
  }
  save_config(art.config(), config);
  auto log = open_log(log_path, step > 0, "step,lr,loss,accuracy,violations");
  const int64_t end = std::min<int64_t>(tc.steps, options.stop_at.value_or(tc.steps));
  if (summary) summary->first_step = step;
  auto save = [&](int64_t at) {
    save_checkpoint(ckpt, "transformer", config, config.hash(), at, {{"scrabble", model.get()}},
                    {{"adam", &opt}});
  };

  model->train();
  for (; step < end; ++step) {
    std::mt19937_64 rng(mix_seed(tc.seed, static_cast<uint64_t>(step)));
    std::vector<PairRef> pairs;
    for (int b = 0; b < tc.batch_size; ++b) {
      const auto s = std::uniform_int_distribution<int64_t>(0, encoded.size() - 1)(rng);
      std::uniform_int_distribution<int64_t> pick(0, encoded[s].indices.size(0) - 1);
      const int64_t a = pick(rng);
      pairs.push_back({s, a, pick(rng)});
    }
    auto batch = make_pair_batch(encoded, pairs, codebook, config);
    const double lr = st::warmup_linear_decay(step, tc.warmup_steps, tc.steps, tc.learning_rate);
    set_lr(opt, lr);
    auto logits = model(batch.source, batch.poses, batch.target);
    auto lb = st::training_loss(logits, batch.target, st::bag_membership(batch.source, m),
                                batch.weights);
    if (!finite(lb.loss)) {
      std::ostringstream msg;
      msg << "non-finite stage-2 loss at step " << step;
      if (fs::exists(ckpt)) msg << "; last good checkpoint " << ckpt.string();
      throw Error(ErrorKind::kTrainingDivergence, msg.str());
    }
    opt.zero_grad();
    lb.loss.backward();
    torch::nn::utils::clip_grad_norm_(model->parameters(), 1.0);
    opt.step();

    const double loss = value(lb.loss);
    const double acc = lb.included ? static_cast<double>(lb.correct) / lb.included : 0.0;
    if (summary) {
      summary->losses.push_back(loss);
      summary->accuracies.push_back(acc);
    }
    log << step << ',' << lr << ',' << loss << ',' << acc << ',' << lb.violations << '\n';
    if (options.log && config.io.log_every > 0 && (step + 1) % config.io.log_every == 0) {
      *options.log << "stage2 step " << step + 1 << "/" << end << " loss " << loss << " acc " << acc
                   << std::endl;
    }
    if (config.io.checkpoint_every > 0 && (step + 1) % config.io.checkpoint_every == 0) save(step + 1);
  }
  log.flush();
  save(step);
  if (summary) summary->final_step = step;
  model->eval();
  return model;
}

double teacher_forced_accuracy(st::ScrabbleModel& model, const std::vector<EncodedSequence>& encoded,
                               const std::vector<PairRef>& pairs, const torch::Tensor& codebook,
                               const RunConfig& config) {
  torch::NoGradGuard no_grad;
  model->eval();
  int64_t correct = 0, included = 0;
  constexpr size_t kChunk = 32;
  for (size_t i = 0; i < pairs.size(); i += kChunk) {
    std::vector<PairRef> chunk(pairs.begin() + i, pairs.begin() + std::min(pairs.size(), i + kChunk));
    auto batch = make_pair_batch(encoded, chunk, codebook, config);
    auto logits = model(batch.source, batch.poses, batch.target);
    auto lb = st::training_loss(logits, batch.target, st::bag_membership(batch.source, codebook.size(0)),
                                torch::ones_like(batch.weights));
    correct += lb.correct;
    included += lb.included + lb.violations;
  }
  return included ? static_cast<double>(correct) / included : 0.0;
}

AnimationResult animate(codec::CodecModel& codec, st::ScrabbleModel& model, const Image& source,
                        const std::vector<condition::PoseFrame>& driving, const st::SamplingPolicy& policy,
                        bool record_steps) {
  torch::NoGradGuard no_grad;
  model->eval();
  const int64_t n = model->transformer->shape().condition_length;
  for (size_t f = 0; f < driving.size(); ++f) {
    if (static_cast<int64_t>(driving[f].size()) != n) {
      reject("driving pose " + std::to_string(f) + " has " + std::to_string(driving[f].size()) +
             " keypoints, the model expects " + std::to_string(n));
    }
    driving[f].validate();
  }
  auto zq = codec::quantize(codec::encode(source, codec), codec->codebook);
  auto bag = scrabble::build_bag(zq);
  const int64_t h = zq.height(), w = zq.width();
  auto flat = zq.indices.flatten().contiguous();
  std::vector<int64_t> src(flat.data_ptr<int64_t>(), flat.data_ptr<int64_t>() + flat.numel());

  AnimationResult result;
  result.source_bag = bag.member_indices;
  nlohmann::json frames = nlohmann::json::array();
  const auto codebook = codec->codebook.detach();
  for (size_t f = 0; f < driving.size(); ++f) {
    auto frame_policy = policy;
    frame_policy.seed = policy.seed + f;
    st::GenerationTrace trace;
    auto idx = st::generate(model, src, driving[f], frame_policy, &trace);
    auto grid = torch::tensor(idx, torch::kInt64).reshape({h, w});
    auto data = codebook.index_select(0, grid.flatten()).reshape({h, w, -1});
    result.frames.push_back(codec::decode(data, codec));
    result.index_grids.push_back(grid);
    nlohmann::json entry{{"frame", f}, {"seed", frame_policy.seed}, {"indices", idx}};
    if (record_steps) entry["steps"] = trace.to_json();
    frames.push_back(std::move(entry));
  }
  result.trace = {{"source_bag", bag.member_indices},
                  {"grid", {h, w}},
                  {"policy",
                   {{"kind", policy.kind == st::SamplingPolicy::Kind::kGreedy ? "greedy" : "top_k"},
                    {"top_k", policy.top_k},
                    {"temperature", policy.temperature},
                    {"seed", policy.seed}}},
                  {"frames", std::move(frames)}};
  return result;
}

TrainedPipeline load_pipeline(const fs::path& work_dir) {
  Artifacts art{work_dir};
  require_file(art.codec(), "run `qscraft train --stage 1` first");
  require_file(art.transformer(), "run `qscraft train --stage 2` first");
  TrainedPipeline p;
  p.config = read_checkpoint_meta(art.transformer()).config;
  p.codec = codec::CodecModel(p.config.codec);
  load_checkpoint(art.codec(), "codec", {{"codec", p.codec.get()}}, {}, p.config.codec_hash());
  p.model = st::ScrabbleModel(st::ModelShape::from_config(p.config), p.config.condition);
  load_checkpoint(art.transformer(), "transformer", {{"scrabble", p.model.get()}}, {}, p.config.hash());
  p.codec->eval();
  p.model->eval();
  return p;
}

metrics::PoseProbe load_probe(const fs::path& work_dir) {
  Artifacts art{work_dir};
  require_file(art.probe(), "run `qscraft train --stage 1` first");
  auto meta = read_checkpoint_meta(art.probe());
  auto probe = metrics::PoseProbe(meta.config.data.image_size, meta.config.probe,
                                  meta.config.condition.keypoints);
  load_checkpoint(art.probe(), "probe", {{"probe", probe.get()}});
  probe->eval();
  return probe;
}

nlohmann::json evaluate(metrics::PoseProbe& probe, const std::vector<Image>& generated,
                        const std::vector<Image>& reference,
                        const std::vector<condition::PoseFrame>* ground_truth) {
  if (generated.size() != reference.size()) {
    reject("generated and reference frame counts differ (" + std::to_string(generated.size()) +
           " vs " + std::to_string(reference.size()) + ")");
  }
  if (generated.empty()) reject("nothing to evaluate");
  if (ground_truth && ground_truth->size() != generated.size()) {
    reject("ground-truth pose count differs from the frame count");
  }
  const int width = static_cast<int>(reference[0].width());
  const int height = static_cast<int>(reference[0].height());
  for (size_t i = 0; i < generated.size(); ++i) {
    if (generated[i].width() != width || generated[i].height() != height ||
        reference[i].width() != width || reference[i].height() != height) {
      reject("frame " + std::to_string(i) + " has a different size");
    }
  }
  const auto det_ref = metrics::detect_keypoints(probe, reference);
  const auto det_gen = metrics::detect_keypoints(probe, generated);
  nlohmann::json report;
  report["frames"] = generated.size();
  try {
    report["akd"] = metrics::akd(det_ref, det_gen, width, height);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kUndefinedMetric) throw;
    report["akd"] = nullptr;
  }
  report["mkr"] = metrics::mkr(det_ref, det_gen);
  if (ground_truth) {
    try {
      report["akd_ground_truth"] = metrics::akd(*ground_truth, det_gen, width, height);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kUndefinedMetric) throw;
      report["akd_ground_truth"] = nullptr;
    }
    report["mkr_ground_truth"] = metrics::mkr(*ground_truth, det_gen);
  }

  double psnr_sum = 0;
  for (size_t i = 0; i < generated.size(); ++i) psnr_sum += metrics::psnr(generated[i], reference[i]);
  report["psnr"] = psnr_sum / static_cast<double>(generated.size());

  if (generated.size() >= 2) {
    report["fid"] = metrics::frechet_distance(metrics::feature_stats(metrics::embed(probe, generated)),
                                              metrics::feature_stats(metrics::embed(probe, reference)));
    std::vector<Image> crop_gen, crop_ref;
    for (size_t i = 0; i < generated.size(); ++i) {
      const auto& pose = ground_truth ? (*ground_truth)[i] : det_ref[i];
      const auto box = metrics::keypoint_box(pose, width, height, kCropMargin);
      crop_gen.push_back(metrics::crop_resize(generated[i], box));
      crop_ref.push_back(metrics::crop_resize(reference[i], box));
    }
    report["fid_foreground"] =
        metrics::frechet_distance(metrics::feature_stats(metrics::embed(probe, crop_gen)),
                                  metrics::feature_stats(metrics::embed(probe, crop_ref)));
  } else {
    report["fid"] = nullptr;
    report["fid_foreground"] = nullptr;
  }
  return report;
}

std::string format_report(const nlohmann::json& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  for (const char* key : {"frames", "akd", "mkr", "akd_ground_truth", "mkr_ground_truth", "fid",
                          "fid_foreground", "psnr"}) {
    if (!report.contains(key)) continue;
    out << std::left << std::setw(18) << key;
    const auto& v = report.at(key);
    if (v.is_null()) {
      out << "undefined";
    } else if (v.is_number_integer()) {
      out << v.get<int64_t>();
    } else {
      out << v.get<double>();
    }
    out << "\n";
  }
  return out.str();
}

std::vector<fs::path> list_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::kMissingArtifact, "no such directory " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name.starts_with("frame_") && entry.path().extension() == ".png") {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

nlohmann::json cmd_make_data(const RunConfig& config, bool force) {
  config.validate();
  return synthdata::export_dataset(synthdata::make_dataset(config.data), config.data.root, force);
}

void cmd_train(int stage, const RunConfig& config, const TrainOptions& options) {
  config.validate();
  Artifacts art{options.work_dir};
  if (stage == 1) {
    const auto dataset = load_training_data(config);
    metrics::PoseProbe probe{nullptr};
    if (fs::exists(art.probe())) {
      probe = load_probe(options.work_dir);
    } else {
      probe = make_probe(config);
      auto report = metrics::train_probe(probe, dataset.train, config.probe, options.log);
      fs::create_directories(options.work_dir);
      save_checkpoint(art.probe(), "probe", config, config.hash(), config.probe.steps,
                      {{"probe", probe.get()}});
      if (options.log) {
        *options.log << "probe: class accuracy " << report.class_accuracy << ", keypoint error "
                     << report.mean_keypoint_error_px << " px" << std::endl;
      }
    }
    train_stage1(config, dataset.train, &probe, options);
  } else if (stage == 2) {
    require_file(art.codec(), "stage 2 needs the stage-1 checkpoint; run `qscraft train --stage 1` first");
    const auto dataset = load_training_data(config);
    auto codec = codec::CodecModel(config.codec);
    load_checkpoint(art.codec(), "codec", {{"codec", codec.get()}}, {}, config.codec_hash());
    train_stage2(config, codec, dataset.train, options);
  } else {
    reject("--stage must be 1 or 2");
  }
}

nlohmann::json cmd_animate(const fs::path& source_image, const fs::path& poses,
                           const fs::path& work_dir, const fs::path& out_dir,
                           const st::SamplingPolicy& policy) {
  auto p = load_pipeline(work_dir);
  auto source = read_png(source_image);
  if (source.height() != p.config.data.image_size || source.width() != p.config.data.image_size) {
    reject("source image must be " + std::to_string(p.config.data.image_size) + "x" +
           std::to_string(p.config.data.image_size));
  }
  const auto driving = condition::read_poses(poses);
  if (driving.empty()) reject("no driving poses in " + poses.string());
  auto result = animate(p.codec, p.model, source, driving, policy, true);
  fs::create_directories(out_dir);
  nlohmann::json written = nlohmann::json::array();
  for (size_t f = 0; f < result.frames.size(); ++f) {
    const auto path = out_dir / synthdata::frame_name(static_cast<int64_t>(f));
    write_png(path, result.frames[f]);
    written.push_back(path.string());
  }
  std::ofstream(out_dir / "trace.json") << result.trace.dump(1) << "\n";
  return {{"frames", written}, {"trace", (out_dir / "trace.json").string()},
          {"source_bag_size", result.source_bag.size()}};
}

nlohmann::json cmd_eval(const fs::path& generated_dir, const fs::path& reference_dir,
                        const fs::path& work_dir) {
  const auto gen_paths = list_frames(generated_dir);
  const auto ref_paths = list_frames(reference_dir);
  if (gen_paths.size() != ref_paths.size()) {
    reject("frame count mismatch: " + std::to_string(gen_paths.size()) + " generated vs " +
           std::to_string(ref_paths.size()) + " reference");
  }
  if (gen_paths.empty()) reject("no frame_*.png files in " + generated_dir.string());
  std::vector<Image> gen, ref;
  for (const auto& p : gen_paths) gen.push_back(read_png(p));
  for (const auto& p : ref_paths) ref.push_back(read_png(p));
  auto probe = load_probe(work_dir);
  std::vector<condition::PoseFrame> truth;
  const bool have_truth = fs::exists(reference_dir / "poses.json");
  if (have_truth) {
    truth = condition::read_poses(reference_dir / "poses.json");
    if (truth.size() != ref.size()) reject("reference poses.json does not match the frame count");
  }
  return evaluate(probe, gen, ref, have_truth ? &truth : nullptr);
}

nlohmann::json cmd_plot_histograms(const fs::path& work_dir, const std::vector<fs::path>& images,
                                   const fs::path& out_dir) {
  if (images.empty()) reject("plot-histograms needs at least one image");
  Artifacts art{work_dir};
  require_file(art.codec(), "run `qscraft train --stage 1` first");
  const auto meta = read_checkpoint_meta(art.codec());
  auto codec = codec::CodecModel(meta.config.codec);
  load_checkpoint(art.codec(), "codec", {{"codec", codec.get()}});
  codec->eval();
  const int64_t m = codec->codebook_size();

  std::vector<std::vector<int64_t>> hists;
  nlohmann::json files = nlohmann::json::array(), counts = nlohmann::json::array();
  for (const auto& path : images) {
    auto zq = codec::quantize(codec::encode(read_png(path), codec), codec->codebook);
    hists.push_back(scrabble::index_histogram(zq.indices, m));
    files.push_back(path.string());
    counts.push_back(scrabble::histogram_to_json(hists.back()));
  }
  nlohmann::json cosine = nlohmann::json::array();
  for (const auto& a : hists) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& b : hists) row.push_back(scrabble::cosine_similarity(a, b));
    cosine.push_back(row);
  }
  fs::create_directories(out_dir);
  nlohmann::json out{{"files", files}, {"codebook_size", m}, {"histograms", counts}, {"cosine", cosine}};
  std::ofstream(out_dir / "histograms.json") << out.dump(1) << "\n";

  // One panel per image: a bar per codebook index, height relative to the
  // panel's tallest bar.
  constexpr int64_t kPanel = 64, kGap = 4, kBar = 2;
  const int64_t width = m * kBar, height = static_cast<int64_t>(hists.size()) * (kPanel + kGap);
  auto pixels = torch::ones({height, width, 3});
  const float palette[][3] = {{0.20f, 0.35f, 0.75f}, {0.80f, 0.35f, 0.15f}, {0.15f, 0.60f, 0.30f},
                              {0.55f, 0.25f, 0.65f}};
  for (size_t k = 0; k < hists.size(); ++k) {
    const double peak = static_cast<double>(*std::max_element(hists[k].begin(), hists[k].end()));
    const int64_t base = static_cast<int64_t>(k) * (kPanel + kGap) + kPanel;
    const auto& colour = palette[k % 4];
    for (int64_t i = 0; i < m; ++i) {
      const int64_t bar = peak > 0 ? std::llround(kPanel * hists[k][static_cast<size_t>(i)] / peak) : 0;
      if (bar == 0) continue;
      auto region = pixels.slice(0, base - bar, base).slice(1, i * kBar, (i + 1) * kBar);
      for (int c = 0; c < 3; ++c) region.select(2, c).fill_(colour[c]);
    }
    pixels.slice(0, base, base + 1).fill_(0.0);
  }
  write_png(out_dir / "histograms.png", Image{pixels});
  out["json"] = (out_dir / "histograms.json").string();
  out["png"] = (out_dir / "histograms.png").string();
  return out;
}

}  // namespace qscraft::pipeline

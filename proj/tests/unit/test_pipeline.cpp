#include "doctest_torch.hpp"

#include <fstream>
#include <set>

#include "helpers.hpp"
#include "qscraft/checkpoint.hpp"
#include "qscraft/error.hpp"
#include "qscraft/pipeline.hpp"
#include "qscraft/scrabble.hpp"

using namespace qscraft;
namespace fs = std::filesystem;
namespace st = qscraft::scrabble_transformer;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::kIo;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

// make-data, stage 1, stage 2 on the tiny profile; returns the config.
RunConfig trained_tiny(const fs::path& dir) {
  auto config = testing::tiny_config(dir);
  pipeline::cmd_make_data(config, false);
  pipeline::TrainOptions opts;
  opts.work_dir = config.io.work_dir;
  pipeline::cmd_train(1, config, opts);
  pipeline::cmd_train(2, config, opts);
  return config;
}

std::vector<uint8_t> file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("config: JSON round trip and hash scope") {
    auto dir = testing::scratch_dir("config");
    auto config = testing::tiny_config(dir);
    save_config(dir / "c.json", config);
    auto back = load_config(dir / "c.json");
    CHECK(to_json(back) == to_json(config));
    CHECK(back.hash() == config.hash());

    auto longer = config;
    longer.codec.steps *= 10;
    longer.transformer.steps *= 10;
    longer.io.work_dir = "/elsewhere";
    longer.data.root = "/elsewhere/data";
    CHECK(longer.hash() == config.hash());
    CHECK(longer.codec_hash() == config.codec_hash());

    auto wider = config;
    wider.codec.codebook_size = 32;
    CHECK(wider.hash() != config.hash());
    CHECK(wider.codec_hash() != config.codec_hash());

    auto deeper = config;
    deeper.transformer.layers = 2;
    CHECK(deeper.hash() != config.hash());
    CHECK(deeper.codec_hash() == config.codec_hash());
  }

  TEST_CASE("config: validation rejects inconsistent values") {
    auto config = testing::tiny_config(testing::scratch_dir("validate"));
    CHECK_NOTHROW(config.validate());
    auto bad = config;
    bad.codec.codebook_size = 0;
    CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::kRejectedInput);
    bad = config;
    bad.data.image_size = 15;
    CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::kRejectedInput);
    bad = config;
    bad.transformer.width = 15;  // not divisible by heads
    CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::kRejectedInput);
    CHECK(kind_of([&] { config_from_json(nlohmann::json{{"codec", {{"no_such_key", 1}}}}); }) ==
          ErrorKind::kRejectedInput);
  }

  TEST_CASE("checkpoint: round trip, kind and hash checks, lock") {
    auto dir = testing::scratch_dir("checkpoint");
    auto config = testing::tiny_config(dir);
    torch::manual_seed(5);
    torch::nn::Linear a(3, 2), b(3, 2);
    save_checkpoint(dir / "x.ckpt", "probe", config, 42, 7, {{"m", a.get()}});
    auto meta = load_checkpoint(dir / "x.ckpt", "probe", {{"m", b.get()}}, {}, 42);
    CHECK(meta.step == 7);
    CHECK(meta.config_hash == 42);
    CHECK(to_json(meta.config) == to_json(config));
    CHECK(torch::equal(a->weight, b->weight));
    CHECK(torch::equal(a->bias, b->bias));

    CHECK(kind_of([&] { load_checkpoint(dir / "x.ckpt", "probe", {{"m", b.get()}}, {}, 43); }) ==
          ErrorKind::kConfigMismatch);
    CHECK(kind_of([&] { load_checkpoint(dir / "x.ckpt", "codec", {{"m", b.get()}}); }) ==
          ErrorKind::kRejectedInput);
    CHECK(kind_of([&] { load_checkpoint(dir / "nope.ckpt", "probe", {{"m", b.get()}}); }) ==
          ErrorKind::kMissingArtifact);

    {
      DirectoryLock lock(dir);
      CHECK_THROWS_AS(DirectoryLock{dir}, Error);
    }
    CHECK_NOTHROW(DirectoryLock{dir});
  }

  TEST_CASE("stage 2 without a stage-1 checkpoint names the missing artifact") {
    auto dir = testing::scratch_dir("no_stage1");
    auto config = testing::tiny_config(dir);
    pipeline::cmd_make_data(config, false);
    pipeline::TrainOptions opts;
    opts.work_dir = config.io.work_dir;
    auto run = [&] { pipeline::cmd_train(2, config, opts); };
    CHECK(kind_of(run) == ErrorKind::kMissingArtifact);
    CHECK(message_of(run).find("codec.ckpt") != std::string::npos);
    CHECK(kind_of([&] { pipeline::cmd_train(3, config, opts); }) == ErrorKind::kRejectedInput);
  }

  TEST_CASE("training before make-data is refused") {
    auto dir = testing::scratch_dir("no_data");
    auto config = testing::tiny_config(dir);
    pipeline::TrainOptions opts;
    opts.work_dir = config.io.work_dir;
    CHECK(kind_of([&] { pipeline::cmd_train(1, config, opts); }) == ErrorKind::kMissingArtifact);
  }

  TEST_CASE("resume with a different model shape is refused") {
    auto dir = testing::scratch_dir("resume_mismatch");
    auto config = testing::tiny_config(dir);
    pipeline::cmd_make_data(config, false);
    pipeline::TrainOptions opts;
    opts.work_dir = config.io.work_dir;
    pipeline::cmd_train(1, config, opts);
    auto changed = config;
    changed.codec.code_dim = 4;
    CHECK(kind_of([&] { pipeline::cmd_train(1, changed, opts); }) == ErrorKind::kConfigMismatch);
    // Stage 2 against a codec trained under another shape is refused too.
    CHECK(kind_of([&] { pipeline::cmd_train(2, changed, opts); }) == ErrorKind::kConfigMismatch);
  }

  TEST_CASE("end to end: make-data, train, animate, eval, histograms") {
    auto dir = testing::scratch_dir("end_to_end");
    auto config = trained_tiny(dir);
    const fs::path work = config.io.work_dir;
    pipeline::Artifacts art{work};
    CHECK(fs::exists(art.codec()));
    CHECK(fs::exists(art.transformer()));
    CHECK(fs::exists(art.probe()));
    CHECK(fs::exists(art.stage1_log()));
    CHECK(fs::exists(art.stage2_log()));

    const auto seq_dir = fs::path(config.data.root) / "test" / "seq_0000";
    const auto poses = condition::read_poses(seq_dir / "poses.json");
    const auto source = seq_dir / "frame_0000.png";
    auto policy = st::SamplingPolicy{st::SamplingPolicy::Kind::kTopK, 3, 1.0, 17};
    auto out = pipeline::cmd_animate(source, seq_dir / "poses.json", work, dir / "anim", policy);
    REQUIRE(out["frames"].size() == poses.size());
    auto frames = pipeline::list_frames(dir / "anim");
    REQUIRE(frames.size() == poses.size());

    // Every emitted index lies in the source bag.
    nlohmann::json trace;
    std::ifstream(dir / "anim" / "trace.json") >> trace;
    std::set<int64_t> bag;
    for (const auto& v : trace["source_bag"]) bag.insert(v.get<int64_t>());
    CHECK(bag.size() == out["source_bag_size"].get<size_t>());
    for (const auto& f : trace["frames"]) {
      for (const auto& v : f["indices"]) CHECK(bag.count(v.get<int64_t>()) == 1);
    }

    // Same seed, same bytes; the library chain reproduces the command.
    pipeline::cmd_animate(source, seq_dir / "poses.json", work, dir / "anim2", policy);
    for (size_t f = 0; f < frames.size(); ++f) {
      CHECK(file_bytes(frames[f]) == file_bytes(pipeline::list_frames(dir / "anim2")[f]));
    }
    auto loaded = pipeline::load_pipeline(work);
    auto manual = pipeline::animate(loaded.codec, loaded.model, read_png(source), poses, policy);
    for (size_t f = 0; f < frames.size(); ++f) {
      auto ref = read_png(frames[f]);
      CHECK(torch::equal(quantize_to_u8(manual.frames[f]).pixels, ref.pixels));
    }

    // eval(x, x) is the identity report.
    auto same = pipeline::cmd_eval(seq_dir, seq_dir, work);
    CHECK(same["mkr"].get<double>() == 0.0);
    if (!same["akd"].is_null()) CHECK(same["akd"].get<double>() == 0.0);
    CHECK(same["psnr"].get<double>() == 99.0);
    CHECK(same.contains("akd_ground_truth"));
    auto report = pipeline::cmd_eval(dir / "anim", seq_dir, work);
    CHECK(report["psnr"].get<double>() < 99.0);
    CHECK(pipeline::cmd_eval(dir / "anim", seq_dir, work) == report);

    // Count mismatch between directories.
    fs::create_directories(dir / "short");
    fs::copy_file(frames[0], dir / "short" / "frame_0000.png");
    CHECK(kind_of([&] { pipeline::cmd_eval(dir / "short", seq_dir, work); }) == ErrorKind::kRejectedInput);

    // Driving poses with the wrong keypoint count.
    std::vector<condition::PoseFrame> wrong(1);
    wrong[0].points.assign(3, condition::Keypoint{0.5, 0.5});
    condition::write_poses(dir / "wrong.json", wrong);
    CHECK(kind_of([&] { pipeline::cmd_animate(source, dir / "wrong.json", work, dir / "bad", policy); }) ==
          ErrorKind::kRejectedInput);

    auto hist = pipeline::cmd_plot_histograms(work, {source, seq_dir / "frame_0001.png"}, dir / "hist");
    CHECK(fs::exists(dir / "hist" / "histograms.json"));
    CHECK(fs::exists(dir / "hist" / "histograms.png"));
    nlohmann::json h;
    std::ifstream(dir / "hist" / "histograms.json") >> h;
    REQUIRE(h["histograms"].size() == 2);
    CHECK(h["cosine"][0][0].get<double>() == doctest::Approx(1.0));
    int64_t total = 0;
    for (const auto& c : h["histograms"][0]) total += c.get<int64_t>();
    CHECK(total == config.sequence_length());
  }
}

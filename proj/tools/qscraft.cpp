#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "qscraft/error.hpp"
#include "qscraft/pipeline.hpp"

namespace fs = std::filesystem;
using qscraft::Error;
using qscraft::ErrorKind;

namespace {

void emit_error(std::string_view kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kRejectedInput: return 2;
    case ErrorKind::kMissingArtifact: return 3;
    case ErrorKind::kConfigMismatch: return 4;
    case ErrorKind::kAlreadyExists: return 5;
    case ErrorKind::kTrainingDivergence: return 6;
    case ErrorKind::kUndefinedMetric: return 7;
    case ErrorKind::kIo: return 8;
  }
  return 1;
}

struct Common {
  std::string config_path;
  std::string profile = "desk";
  std::string work_dir;

  qscraft::RunConfig load() const {
    auto config = config_path.empty()
                      ? (profile == "acceptance" ? qscraft::RunConfig::acceptance_profile()
                                                 : qscraft::RunConfig{})
                      : qscraft::load_config(config_path);
    if (!work_dir.empty()) config.io.work_dir = work_dir;
    config.validate();
    return config;
  }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--profile", common.profile, "built-in profile when --config is absent")
      ->check(CLI::IsMember({"desk", "acceptance"}));
  cmd->add_option("--work-dir", common.work_dir, "run directory (overrides io.work_dir)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qscraft: pose-guided animation by rearranging quantized codes"};
  app.require_subcommand(1);

  Common common;
  bool force = false;

  auto* make_data = app.add_subcommand("make-data", "render the synthetic dataset");
  add_common(make_data, common);
  make_data->add_flag("--force", force, "overwrite an existing dataset");

  int stage = 0;
  bool fresh = false;
  std::optional<int64_t> stop_at;
  auto* train = app.add_subcommand("train", "train stage 1 (codec) or stage 2 (transformer)");
  add_common(train, common);
  train->add_option("--stage", stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  train->add_flag("--fresh", fresh, "ignore an existing checkpoint instead of resuming");
  train->add_option("--stop-at", stop_at, "stop after this global step");

  std::string source, poses, out_dir = "animation";
  std::string sampling = "top-k";
  int64_t top_k = -1;
  double temperature = -1;
  uint64_t seed = 0;
  auto* animate = app.add_subcommand("animate", "animate a source image with driving poses");
  add_common(animate, common);
  animate->add_option("--source", source, "source PNG")->required()->check(CLI::ExistingFile);
  animate->add_option("--poses", poses, "driving pose JSON")->required()->check(CLI::ExistingFile);
  animate->add_option("--out", out_dir, "output directory");
  animate->add_option("--sampling", sampling, "greedy or top-k")
      ->check(CLI::IsMember({"greedy", "top-k"}));
  animate->add_option("--top-k", top_k, "candidates kept when sampling");
  animate->add_option("--temperature", temperature, "softmax temperature");
  animate->add_option("--seed", seed, "seed of the first frame; frame f uses seed + f");

  std::string generated, reference, json_out;
  auto* eval = app.add_subcommand("eval", "score generated frames against reference frames");
  add_common(eval, common);
  eval->add_option("--generated", generated, "directory of frame_*.png")->required();
  eval->add_option("--reference", reference, "directory of frame_*.png (+ poses.json)")->required();
  eval->add_option("--json", json_out, "also write the report to this file");

  std::vector<std::string> images;
  std::string hist_out = "histograms";
  auto* plot = app.add_subcommand("plot-histograms", "codebook index histograms of images");
  add_common(plot, common);
  plot->add_option("images", images, "PNG files")->required()->check(CLI::ExistingFile);
  plot->add_option("--out", hist_out, "output directory");

  auto* dump = app.add_subcommand("dump-config", "print the configuration as JSON");
  add_common(dump, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("rejected_input", e.what());
    return 2;
  }

  try {
    const auto config = common.load();
    const fs::path work = config.io.work_dir;
    nlohmann::json result;
    if (*make_data) {
      result = qscraft::pipeline::cmd_make_data(config, force);
    } else if (*train) {
      qscraft::pipeline::TrainOptions options;
      options.work_dir = work;
      options.resume = !fresh;
      options.log = &std::cerr;
      options.stop_at = stop_at;
      qscraft::pipeline::cmd_train(stage, config, options);
      qscraft::pipeline::Artifacts art{work};
      result = {{"checkpoint", (stage == 1 ? art.codec() : art.transformer()).string()},
                {"loss_log", (stage == 1 ? art.stage1_log() : art.stage2_log()).string()}};
    } else if (*animate) {
      qscraft::scrabble_transformer::SamplingPolicy policy;
      if (sampling == "greedy") {
        policy = qscraft::scrabble_transformer::SamplingPolicy::greedy();
      } else {
        policy.top_k = top_k > 0 ? top_k : config.transformer.top_k;
        policy.temperature = temperature > 0 ? temperature : config.transformer.temperature;
      }
      policy.seed = seed;
      result = qscraft::pipeline::cmd_animate(source, poses, work, out_dir, policy);
    } else if (*eval) {
      result = qscraft::pipeline::cmd_eval(generated, reference, work);
      std::cerr << qscraft::pipeline::format_report(result);
      if (!json_out.empty()) std::ofstream(json_out) << result.dump(2) << "\n";
    } else if (*plot) {
      std::vector<fs::path> paths(images.begin(), images.end());
      result = qscraft::pipeline::cmd_plot_histograms(work, paths, hist_out);
    } else if (*dump) {
      result = qscraft::to_json(config);
    }
    std::cout << result.dump(2) << std::endl;
    return 0;
  } catch (const Error& e) {
    emit_error(qscraft::to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    emit_error("internal", e.what());
    return 1;
  }
}

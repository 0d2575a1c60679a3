#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "qscraft/config.hpp"

namespace qscraft {

struct CheckpointMeta {
  std::string kind;  // "codec", "transformer", "probe"
  int64_t step = 0;
  uint64_t config_hash = 0;
  RunConfig config;
};

using NamedModules = std::vector<std::pair<std::string, torch::nn::Module*>>;
using NamedOptimizers = std::vector<std::pair<std::string, torch::optim::Optimizer*>>;

// One binary file with every parameter and buffer, optimizer state, step,
// config and config hash. Written to a temporary name and renamed.
void save_checkpoint(const std::filesystem::path& path, const std::string& kind,
                     const RunConfig& config, uint64_t config_hash, int64_t step, const NamedModules& modules,
                     const NamedOptimizers& optimizers = {});

// Restores into `modules`/`optimizers`. Throws kMissingArtifact if absent and
// kConfigMismatch if `expected_hash` is given and differs.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, const std::string& kind,
                               const NamedModules& modules, const NamedOptimizers& optimizers = {},
                               std::optional<uint64_t> expected_hash = std::nullopt);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

// Exclusive ownership of a training directory for the lifetime of the object.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir);
  ~DirectoryLock();
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;

 private:
  std::filesystem::path lock_path_;
};

}  // namespace qscraft

#include "qscraft/checkpoint.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstring>

#include "qscraft/error.hpp"

namespace qscraft {

namespace fs = std::filesystem;

namespace {

torch::Tensor string_tensor(const std::string& s) {
  auto t = torch::empty({static_cast<int64_t>(s.size())}, torch::kUInt8);
  if (!s.empty()) std::memcpy(t.data_ptr<uint8_t>(), s.data(), s.size());
  return t;
}

std::string tensor_string(const torch::Tensor& t) {
  auto c = t.contiguous();
  return std::string(reinterpret_cast<const char*>(c.data_ptr<uint8_t>()),
                     static_cast<size_t>(c.numel()));
}

CheckpointMeta read_meta(torch::serialize::InputArchive& archive) {
  torch::Tensor kind, step, hash, config;
  archive.read("meta/kind", kind);
  archive.read("meta/step", step);
  archive.read("meta/config_hash", hash);
  archive.read("meta/config", config);
  CheckpointMeta meta;
  meta.kind = tensor_string(kind);
  meta.step = step.item<int64_t>();
  meta.config_hash = static_cast<uint64_t>(hash.item<int64_t>());
  meta.config = config_from_json(nlohmann::json::parse(tensor_string(config)));
  return meta;
}

void load_archive(torch::serialize::InputArchive& archive, const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::kMissingArtifact, "missing checkpoint " + path.string());
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw Error(ErrorKind::kIo, "unreadable checkpoint " + path.string());
  }
}

}  // namespace

void save_checkpoint(const fs::path& path, const std::string& kind, const RunConfig& config,
                     uint64_t config_hash, int64_t step, const NamedModules& modules, const NamedOptimizers& optimizers) {
  torch::serialize::OutputArchive archive;
  archive.write("meta/kind", string_tensor(kind));
  archive.write("meta/step", torch::tensor(step, torch::kInt64));
  archive.write("meta/config_hash", torch::tensor(static_cast<int64_t>(config_hash), torch::kInt64));
  archive.write("meta/config", string_tensor(to_json(config).dump()));
  for (const auto& [name, module] : modules) {
    torch::serialize::OutputArchive sub;
    module->save(sub);
    archive.write("module/" + name, sub);
  }
  for (const auto& [name, optimizer] : optimizers) {
    torch::serialize::OutputArchive sub;
    optimizer->save(sub);
    archive.write("optimizer/" + name, sub);
  }
  std::error_code ec;
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path(), ec);
  const auto tmp = fs::path(path.string() + ".tmp");
  try {
    archive.save_to(tmp.string());
  } catch (const c10::Error& e) {
    throw Error(ErrorKind::kIo, "cannot write checkpoint " + path.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot move checkpoint into " + path.string() + ": " + ec.message());
}

CheckpointMeta load_checkpoint(const fs::path& path, const std::string& kind,
                               const NamedModules& modules, const NamedOptimizers& optimizers,
                               std::optional<uint64_t> expected_hash) {
  torch::serialize::InputArchive archive;
  load_archive(archive, path);
  auto meta = read_meta(archive);
  if (meta.kind != kind) {
    reject("checkpoint " + path.string() + " holds a " + meta.kind + " model, expected " + kind);
  }
  if (expected_hash && *expected_hash != meta.config_hash) {
    throw Error(ErrorKind::kConfigMismatch,
                "config hash of " + path.string() + " does not match the current config");
  }
  for (const auto& [name, module] : modules) {
    torch::serialize::InputArchive sub;
    archive.read("module/" + name, sub);
    module->load(sub);
  }
  for (const auto& [name, optimizer] : optimizers) {
    torch::serialize::InputArchive sub;
    archive.read("optimizer/" + name, sub);
    optimizer->load(sub);
  }
  return meta;
}

CheckpointMeta read_checkpoint_meta(const fs::path& path) {
  torch::serialize::InputArchive archive;
  load_archive(archive, path);
  return read_meta(archive);
}

DirectoryLock::DirectoryLock(const fs::path& dir) : lock_path_(dir / "train.lock") {
  std::error_code ec;
  fs::create_directories(dir, ec);
  const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw Error(ErrorKind::kAlreadyExists,
                "training directory is locked by another run: " + lock_path_.string());
  }
  const auto pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(lock_path_, ec);
}

}  // namespace qscraft

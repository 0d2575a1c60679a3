#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qscraft {

enum class ErrorKind {
  kRejectedInput,
  kTrainingDivergence,
  kMissingArtifact,
  kConfigMismatch,
  kUndefinedMetric,
  kAlreadyExists,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// Every failure the library reports is an Error; the CLI serializes kind and
// message as JSON on stderr.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void reject(const std::string& message) {
  throw Error(ErrorKind::kRejectedInput, message);
}

}  // namespace qscraft

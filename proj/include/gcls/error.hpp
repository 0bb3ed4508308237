#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gcls {

/// Broad failure class. Maps onto the CLI exit codes.
enum class ErrorKind : std::uint8_t { Config = 2, Data = 3, Numeric = 4 };

enum class ErrorCode : std::uint8_t {
  // trace_model
  MalformedLine,
  EmptyTrace,
  MissingFile,
  DuplicateLaunchId,
  // trace_synth
  InvalidSpec,
  // diff_core
  ShapeMismatch,
  NonFiniteValue,
  DetachedLoss,
  // rgcn_encoder
  EmptyGraph,
  NoWarps,
  // contrastive_trainer
  ZeroRow,
  TooFewKernels,
  // cluster_sampler
  SingleCluster,
  // evaluator
  MissingMetric,
  ZeroFull,
  ZeroSampledTime,
  // cli / serialization
  BadConfig,
  BadArtifact,
  HashMismatch,
};

std::string_view to_string(ErrorCode code);
ErrorKind kind_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorKind kind() const noexcept { return kind_of(code_); }
  const std::string& detail() const noexcept { return detail_; }

  /// Same error with extra leading context.
  Error with_context(const std::string& context) const { return Error(code_, context + ": " + detail_); }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace gcls

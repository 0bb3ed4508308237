#include "gcls/error.hpp"

namespace gcls {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::EmptyTrace: return "EmptyTrace";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::DuplicateLaunchId: return "DuplicateLaunchId";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::DetachedLoss: return "DetachedLoss";
    case ErrorCode::EmptyGraph: return "EmptyGraph";
    case ErrorCode::NoWarps: return "NoWarps";
    case ErrorCode::ZeroRow: return "ZeroRow";
    case ErrorCode::TooFewKernels: return "TooFewKernels";
    case ErrorCode::SingleCluster: return "SingleCluster";
    case ErrorCode::MissingMetric: return "MissingMetric";
    case ErrorCode::ZeroFull: return "ZeroFull";
    case ErrorCode::ZeroSampledTime: return "ZeroSampledTime";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::BadArtifact: return "BadArtifact";
    case ErrorCode::HashMismatch: return "HashMismatch";
  }
  return "Unknown";
}

ErrorKind kind_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidSpec:
    case ErrorCode::BadConfig:
    case ErrorCode::HashMismatch:
      return ErrorKind::Config;
    case ErrorCode::ShapeMismatch:
    case ErrorCode::NonFiniteValue:
    case ErrorCode::DetachedLoss:
    case ErrorCode::ZeroRow:
    case ErrorCode::ZeroFull:
    case ErrorCode::ZeroSampledTime:
      return ErrorKind::Numeric;
    default:
      return ErrorKind::Data;
  }
}

}  // namespace gcls

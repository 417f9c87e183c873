#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fewview {

enum class ErrorCode {
  NonPositiveDepth,
  TooFewGaussians,
  StateMismatch,
  ParseError,
  UnknownViewIndex,
  EmptyAfterFiltering,
  TooFewKeypoints,
  NoSurvivingMatches,
  ShapeMismatch,
  EmptyScene,
  StaleNeighbors,
  DimensionMismatch,
  NonFiniteGradient,
  MissingImage,
  DegenerateIntrinsics,
  ConfigError,
  IoError,
};

std::string_view error_name(ErrorCode code);

// All library failures are reported through this type; `code()` is the
// machine-readable part, `what()` carries the human-readable detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fewview

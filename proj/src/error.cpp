#include "fewview/error.hpp"

namespace fewview {

std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::TooFewGaussians: return "TooFewGaussians";
    case ErrorCode::StateMismatch: return "StateMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::UnknownViewIndex: return "UnknownViewIndex";
    case ErrorCode::EmptyAfterFiltering: return "EmptyAfterFiltering";
    case ErrorCode::TooFewKeypoints: return "TooFewKeypoints";
    case ErrorCode::NoSurvivingMatches: return "NoSurvivingMatches";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyScene: return "EmptyScene";
    case ErrorCode::StaleNeighbors: return "StaleNeighbors";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::MissingImage: return "MissingImage";
    case ErrorCode::DegenerateIntrinsics: return "DegenerateIntrinsics";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace fewview

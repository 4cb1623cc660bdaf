// SPDX-License-Identifier: Apache-2.0
#include "sattn/error.hpp"

namespace sattn {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::AllMasked: return "AllMasked";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::NoStochasticLayers: return "NoStochasticLayers";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::MissingTarget: return "MissingTarget";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::DegenerateDesign: return "DegenerateDesign";
    case ErrorCode::NonPositiveScale: return "NonPositiveScale";
    case ErrorCode::ZeroExponent: return "ZeroExponent";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::Empty: return "Empty";
    case ErrorCode::EmptyCalibration: return "EmptyCalibration";
    case ErrorCode::TooFewSnapshots: return "TooFewSnapshots";
    case ErrorCode::InvalidRange: return "InvalidRange";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace sattn

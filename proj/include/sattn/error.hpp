// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sattn {

enum class ErrorCode {
  AllMasked,
  NonFinite,
  DimensionMismatch,
  InvalidArgument,
  InvalidConfig,
  NoStochasticLayers,
  SingularSystem,
  MissingTarget,
  EmptyBatch,
  TooFewSamples,
  DegenerateDesign,
  NonPositiveScale,
  ZeroExponent,
  LengthMismatch,
  Empty,
  EmptyCalibration,
  TooFewSnapshots,
  InvalidRange,
  ParseError,
  MissingColumn,
  EmptySplit,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every failure raised by the library carries one of the codes above so the
// CLI can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t row, std::string column, const std::string& what)
      : Error(ErrorCode::ParseError, what + " (row " + std::to_string(row) + ", column '" + column + "')"),
        row_(row),
        column_(std::move(column)) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

}  // namespace sattn

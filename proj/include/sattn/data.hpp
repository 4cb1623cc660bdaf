// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sattn/backbone.hpp"

namespace sattn {

struct Dataset {
  std::vector<InputCase> cases;
  std::string name;
  double noise_sigma = 0.0;  // synthetic data only
  bool standardize = false;  // applied by split() from training statistics
};

struct SinusoidSpec {
  std::size_t n = 1000;
  double x_lo = -3.0;
  double x_hi = 3.0;
  double amplitude = 1.0;
  double frequency = 1.0;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
};

/// x ~ U[x_lo, x_hi], y = amplitude sin(frequency x) + N(0, noise_sigma^2).
/// Throws InvalidRange when x_lo >= x_hi or n == 0.
Dataset make_sinusoid(const SinusoidSpec& spec);

/// Header row, comma separated, no quoting. An empty feature list selects
/// every column other than the target. Throws MissingColumn, or ParseError
/// carrying the 1-based data row (header excluded) and column name.
Dataset load_csv(const std::filesystem::path& path, const std::string& target_column,
                 const std::vector<std::string>& feature_columns, bool standardize);

struct SplitSpec {
  double train_frac = 0.8;
  double cal_frac = 0.1;
  double test_frac = 0.1;
  std::uint64_t seed = 0;

  /// Throws InvalidConfig unless each fraction is in (0,1) and they sum to 1.
  void validate() const;
};

struct DataSplits {
  Dataset train, cal, test;
};

/// Seeded shuffle then contiguous partition; train and cal sizes are floored,
/// test takes the remainder. Throws EmptySplit if any part would be empty.
DataSplits split(const Dataset& dataset, const SplitSpec& spec);

}  // namespace sattn

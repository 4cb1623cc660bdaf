// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sattn/backbone.hpp"

namespace sattn {

struct EnsembleMeta {
  std::string method;
  std::map<std::string, double> params;  // nu, dropout rate, variance scale, ...
  std::uint64_t master_seed = 0;
};

/// M predictive samples for one input plus the deterministic prediction.
struct PredictiveEnsemble {
  std::vector<double> samples;
  double deterministic_value = 0.0;
  EnsembleMeta meta;

  std::size_t size() const noexcept { return samples.size(); }
  double mean() const;
  /// Throws TooFewSamples when M < 2, NonFinite on a non-finite sample.
  void validate() const;
};

/// samples[m] = forward_stochastic(model, input, nu, m, master_seed).
PredictiveEnsemble draw_ensemble(const ModelBundle& model, const InputCase& input, Concentration nu, std::size_t M,
                                 std::uint64_t master_seed);

/// Mid-distribution CDF: (#{x < point} + #{x == point} / 2) / M.
double empirical_cdf(const PredictiveEnsemble& ensemble, double point);

/// Type-7 quantile (linear interpolation between order statistics) of a
/// sorted sample, p in [0, 1].
double sorted_quantile(std::span<const double> sorted, double p);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
  bool contains(double y) const { return lo <= y && y <= hi; }
};

/// [(1-level)/2, 1-(1-level)/2] type-7 quantiles; level in (0, 1).
Interval central_interval(const PredictiveEnsemble& ensemble, double level);

/// Long-format dump: case_id,sample_index,value.
std::string ensemble_csv(std::span<const PredictiveEnsemble> ensembles);
/// Sidecar with the shared meta and per-case deterministic values.
nlohmann::json ensemble_sidecar(std::span<const PredictiveEnsemble> ensembles);

}  // namespace sattn

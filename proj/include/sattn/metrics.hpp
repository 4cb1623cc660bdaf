// SPDX-License-Identifier: Apache-2.0
//
// Verification of sample-based predictive distributions for scalar targets.
#pragma once

#include <json.hpp>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sattn/ensemble.hpp"

namespace sattn {

struct PITSample {
  std::vector<double> values;  // each in [0, 1]
};

/// values[i] = empirical_cdf(ensembles[i], targets[i]). Throws LengthMismatch.
PITSample pit(std::span<const PredictiveEnsemble> ensembles, std::span<const double> targets);

/// Exact W1 distance between the empirical PIT distribution and U[0, 1],
/// i.e. the integral of |F(t) - t| over [0, 1]. Throws Empty.
double w1_to_uniform(const PITSample& pit);

/// Counts per equal-width bin over [0, 1]; a value of exactly 1 lands in the
/// last bin.
std::vector<std::size_t> pit_histogram(const PITSample& pit, std::size_t bins);

struct CoverageSharpness {
  double coverage = 0.0;
  double mean_width = 0.0;
};

/// Fraction of targets inside the closed central interval, and mean width.
CoverageSharpness coverage_and_sharpness(std::span<const PredictiveEnsemble> ensembles,
                                         std::span<const double> targets, double level);

struct CrpsTerms {
  double crps = 0.0;
  double error_term = 0.0;   // E|X - y|
  double spread_term = 0.0;  // E|X - X'| / 2, all M^2 pairs
};

/// All-pairs estimator with divisor M^2 (self-pairs included), computed from
/// order statistics. Throws TooFewSamples.
CrpsTerms crps_decomposed(const PredictiveEnsemble& ensemble, double target);

/// E||X - y|| - E||X - X'|| / 2 by direct pair enumeration.
double energy_score(const PredictiveEnsemble& ensemble, double target);

struct PointAccuracy {
  double rmse = 0.0;
  double mae = 0.0;
};

PointAccuracy point_accuracy(std::span<const double> predictions, std::span<const double> targets);

/// Each sample moved to mean + tau (sample - mean). tau == 1 returns the
/// input unchanged.
PredictiveEnsemble scale_ensemble(const PredictiveEnsemble& ensemble, double tau);
std::vector<PredictiveEnsemble> scale_ensembles(std::span<const PredictiveEnsemble> ensembles, double tau);

enum class TemperatureCriterion {
  MinimizeW1,     // golden-section search on log tau over [1e-2, 1e3]
  MatchCoverage,  // bisection on tau until coverage reaches a target
};

struct TemperatureOptions {
  TemperatureCriterion criterion = TemperatureCriterion::MinimizeW1;
  double coverage_level = 0.95;   // MatchCoverage only
  double target_coverage = 0.95;  // MatchCoverage only
};

struct TemperatureFit {
  double tau = 1.0;
  double calibration_w1_before = 0.0;
  double calibration_w1_after = 0.0;
};

/// Fits tau on calibration ensembles. Throws EmptyCalibration.
TemperatureFit fit_temperature(std::span<const PredictiveEnsemble> calibration_ensembles,
                               std::span<const double> calibration_targets, const TemperatureOptions& options = {});

struct TemperatureScaled {
  double tau = 1.0;
  std::vector<PredictiveEnsemble> ensembles;
};

/// fit_temperature on the calibration split, then the same tau applied to
/// `evaluation`.
TemperatureScaled temperature_scale(std::span<const PredictiveEnsemble> calibration_ensembles,
                                    std::span<const double> calibration_targets,
                                    std::span<const PredictiveEnsemble> evaluation,
                                    const TemperatureOptions& options = {});

struct MetricReport {
  std::string method;
  std::string variant;  // "native" or "scaled"
  std::string dataset;
  std::uint64_t seed = 0;
  double rmse = 0.0;
  double mae = 0.0;
  double pit_w1 = 0.0;
  std::map<double, double> coverage;   // level -> fraction covered
  std::map<double, double> sharpness;  // level -> mean interval width
  double crps = 0.0;
  double crps_error_term = 0.0;
  double crps_spread_term = 0.0;
  double energy_score = 0.0;
  std::optional<double> tau;
};

/// Full metric suite over a split. Point accuracy uses ensemble means.
MetricReport evaluate_ensembles(std::span<const PredictiveEnsemble> ensembles, std::span<const double> targets,
                                std::span<const double> levels);

nlohmann::json report_to_json(const MetricReport& report);

}  // namespace sattn

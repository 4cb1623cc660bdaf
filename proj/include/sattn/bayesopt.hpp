// SPDX-License-Identifier: Apache-2.0
//
// One-dimensional Bayesian optimization over the integer concentration nu.
//
// The surrogate models the observed deviation scale as
//   ln s(nu) = a ln nu + ln b + eps z,   z ~ N(0, 1),
// fit by conjugate normal-inverse-gamma regression. Each suggestion draws
// (a, ln b, eps^2) from the posterior and minimizes the expected squared
// discrepancy E[(s(nu) - s0)^2]. With u = b nu^a and lognormal noise this is
//   u^2 e^{2 eps^2} - 2 s0 u e^{eps^2 / 2} + s0^2,
// minimized at u* = s0 e^{-3 eps^2 / 2}, i.e. nu* = (u* / b)^{1/a}.
#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sattn/calibration.hpp"
#include "sattn/rng.hpp"

namespace sattn {

struct SearchDomain {
  std::int64_t nu_min = 1;
  std::int64_t nu_max = 1;

  /// Throws InvalidConfig unless 1 <= nu_min <= nu_max.
  void validate() const;
  bool contains(std::int64_t nu) const { return nu >= nu_min && nu <= nu_max; }
  std::int64_t size() const { return nu_max - nu_min + 1; }
};

/// Normal-inverse-gamma prior on the regression of ln s on (ln nu, 1):
/// coefficients | eps^2 ~ N(coef_mean, eps^2 / coef_precision I),
/// eps^2 ~ InvGamma(noise_shape, noise_scale).
struct SurrogatePrior {
  Eigen::Vector2d coef_mean{-1.0, 0.0};
  double coef_precision = 1e-8;
  double noise_shape = 1.0;
  double noise_scale = 1e-4;
};

struct SurrogatePosterior {
  Eigen::Vector2d coef_mean;   // (a, ln b)
  Eigen::Matrix2d coef_scale;  // Lambda_n^{-1}; coefficient covariance given eps^2 is eps^2 * coef_scale
  double noise_shape = 1.0;
  double noise_scale = 1.0;
  std::size_t n_obs = 0;

  /// E[eps^2]; infinite when noise_shape <= 1.
  double noise_mean() const;
  /// Marginal (Student-t) covariance of (a, ln b): E[eps^2] * coef_scale.
  Eigen::Matrix2d coef_covariance() const;
};

struct SurrogateDraw {
  double a = 0.0;
  double ln_b = 0.0;
  double eps2 = 0.0;
};

/// Throws DegenerateDesign with fewer than two distinct nu, NonPositiveScale
/// if any record has scale_estimate <= 0.
SurrogatePosterior fit_surrogate(std::span<const CalibrationRecord> history, const SurrogatePrior& prior = {});

/// eps^2 from the inverse gamma, then (a, ln b) from the conditional normal.
SurrogateDraw thompson_draw(const SurrogatePosterior& posterior, RandomStream& rng);

/// Expected squared discrepancy of the sampled surrogate at a (real) nu.
double surrogate_objective(double nu, double a, double ln_b, double eps2, double s0);

/// ln of the continuous minimizer. Throws ZeroExponent when a == 0.
double continuous_minimizer_log(double a, double ln_b, double eps2, double s0);

/// Nearest integer to the continuous minimizer (ties toward smaller nu),
/// clamped to the domain. Throws ZeroExponent when a == 0.
std::int64_t acquisition_minimizer(double a, double ln_b, double eps2, double s0, const SearchDomain& domain);

/// Geometric midpoint of the widest log-gap not yet explored.
std::int64_t space_filling_point(std::span<const CalibrationRecord> history, const SearchDomain& domain);

struct Suggestion {
  std::int64_t nu = 1;
  std::string source;  // "space_filling", "initial_design", "thompson", "random"
  double continuous_nu = 0.0;
  std::optional<SurrogatePosterior> posterior;
  std::optional<SurrogateDraw> draw;
};

Suggestion suggest(std::span<const CalibrationRecord> history, const SearchDomain& domain, double s0_estimate,
                   RandomStream& rng, const SurrogatePrior& prior = {});

/// Fit, draw, minimize, project; never repeats an evaluated nu while
/// unevaluated ones remain.
std::int64_t suggest_next(std::span<const CalibrationRecord> history, const SearchDomain& domain, double s0_estimate,
                          RandomStream& rng);

/// nu of the smallest loss_estimate, ties toward smaller nu.
std::int64_t history_argmin(std::span<const CalibrationRecord> history);

struct TraceEntry {
  std::size_t iteration = 0;
  Suggestion suggestion;
  CalibrationRecord record;
};

struct CalibrationResult {
  std::int64_t nu_star = 1;
  double s0 = 0.0;
  std::vector<CalibrationRecord> history;
  std::vector<TraceEntry> trace;
  std::size_t stochastic_passes = 0;
  std::size_t reference_passes = 0;
};

/// Evaluates nu at BO iteration k (0-based).
using LossOracle = std::function<LossEvaluation(std::int64_t nu, std::size_t iteration)>;

/// K iterations of suggest -> evaluate -> append. The first two iterations
/// evaluate the geometric 1/3 and 2/3 points of the log-domain.
CalibrationResult run_bayesopt(const LossOracle& oracle, const SearchDomain& domain, std::size_t K, double s0,
                               std::uint64_t seed, const SurrogatePrior& prior = {});

/// Calibrates nu on held-out cases. s0 is fixed to the mean residual over
/// all of batch.cases; pass seeds are shared across iterations and the batch
/// is redrawn per iteration.
CalibrationResult calibrate_nu(const ModelBundle& model, const CalibrationBatch& batch, const SearchDomain& domain,
                               std::size_t K, std::uint64_t master_seed);

nlohmann::json posterior_to_json(const SurrogatePosterior& posterior);
nlohmann::json trace_entry_to_json(const TraceEntry& entry);
std::string trace_jsonl(std::span<const TraceEntry> trace);

}  // namespace sattn

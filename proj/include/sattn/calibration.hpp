// SPDX-License-Identifier: Apache-2.0
//
// Monte Carlo estimate of the calibration loss
//   L(nu) = E_{(x,y)} E[(|f_nu(x) - f(x)| - |y - f(x)|)^2 | x]
// together with the mean deviation scale s(nu) and residual scale s0 that
// drive the Bayesian-optimization surrogate.
#pragma once

#include <json.hpp>

#include <cstdint>
#include <span>
#include <vector>

#include "sattn/backbone.hpp"

namespace sattn {

/// Held-out cases; each evaluation draws B of them without replacement and
/// runs M stochastic passes per drawn case.
struct CalibrationBatch {
  std::vector<InputCase> cases;
  std::size_t B = 1;
  std::size_t M = 1;

  /// Throws EmptyBatch or MissingTarget.
  void validate() const;
};

struct CalibrationRecord {
  std::int64_t nu = 1;
  double loss_estimate = 0.0;   // squared target units
  double scale_estimate = 0.0;  // s(nu), target units
  double target_scale = 0.0;    // s0, target units
};

/// Population-variance split of mean((delta - r)^2).
struct LossTerms {
  double variance_term = 0.0;
  double squared_bias_term = 0.0;
  double total() const { return variance_term + squared_bias_term; }
};

struct LossEvaluation {
  CalibrationRecord record;
  LossTerms terms;  // averaged over the B drawn cases
  std::vector<std::size_t> batch;
  std::vector<double> case_losses;  // (1/M) sum_m (delta - r)^2 per drawn case
  std::size_t stochastic_passes = 0;
  std::size_t reference_passes = 0;
};

/// |f_nu(x) - f(x)| for one pass.
double deviation_magnitude(const ModelBundle& model, const InputCase& input, Concentration nu,
                           std::uint64_t pass_index, std::uint64_t master_seed);

/// |y - f(x)|. Throws MissingTarget.
double residual_magnitude(const ModelBundle& model, const InputCase& input);

/// B distinct indices out of n, drawn by a seeded partial shuffle.
std::vector<std::size_t> sample_batch(std::size_t n, std::size_t B, std::uint64_t seed);

/// Seed of the stochastic passes for case `case_index` of the calibration pool.
std::uint64_t case_seed(std::uint64_t master_seed, std::size_t case_index);

/// Loss estimate exactly as the batch/pass double loop:
///   (1/B) sum_b (1/M) sum_m (delta_bm - r_b)^2
/// plus s(nu) = mean delta and s0 = mean r over the drawn cases. Pass m of
/// pool case i uses master seed case_seed(master_seed, i), so the passes
/// for a case do not depend on the batch draw (common random numbers
/// across nu). The batch is drawn from batch_seed.
LossEvaluation eval_loss_detailed(const ModelBundle& model, const CalibrationBatch& batch, Concentration nu,
                                  std::uint64_t master_seed, std::uint64_t batch_seed);

CalibrationRecord eval_loss(const ModelBundle& model, const CalibrationBatch& batch, Concentration nu,
                            std::uint64_t master_seed);

/// (Var_pop(delta), (mean(delta) - r)^2). Throws TooFewSamples below 2 samples.
LossTerms loss_decomposition(std::span<const double> deviations, double residual);

/// s0 over a full split: mean |y - f(x)|.
double residual_scale(const ModelBundle& model, std::span<const InputCase> cases);

nlohmann::json record_to_json(const CalibrationRecord& record);
CalibrationRecord record_from_json(const nlohmann::json& j);
/// One compact JSON object per line.
std::string history_jsonl(std::span<const CalibrationRecord> history);
std::vector<CalibrationRecord> history_from_jsonl(const std::string& text);

}  // namespace sattn

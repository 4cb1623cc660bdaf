// SPDX-License-Identifier: Apache-2.0
//
// Comparison baselines built on the same frozen encoder: MC dropout on the
// readout inputs, a diagonal SWAG posterior over the readout, and bootstrap
// readout ensembles. All of them emit PredictiveEnsemble so the metrics
// code path is shared with stochastic attention.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

#include "sattn/backbone.hpp"
#include "sattn/ensemble.hpp"

namespace sattn {

enum class DropoutLocation {
  PooledFeatures,  // mask the mean-pooled feature vector
  ReadoutInputs,   // mask every token feature before pooling
};

struct DropoutSpec {
  double rate = 0.1;
  DropoutLocation location = DropoutLocation::PooledFeatures;

  /// Throws InvalidArgument unless 0 <= rate < 1.
  void validate() const;
};

/// Inverted dropout: survivors are scaled by 1 / (1 - rate). Pass m uses the
/// substream (seed, m).
PredictiveEnsemble mc_dropout_ensemble(const ModelBundle& model, const InputCase& input, const DropoutSpec& spec,
                                       std::size_t M, std::uint64_t seed);

/// Gaussian over the readout parameters (weights followed by the bias).
struct ReadoutPosterior {
  Eigen::VectorXd mean;
  Eigen::VectorXd diag_variance;
};

struct SwagSchedule {
  std::size_t steps = 2000;
  double learning_rate = 0.01;
  std::size_t batch_size = 16;
  std::size_t burn_in = 500;
  std::size_t snapshot_every = 50;
  double ridge = 1.0;
};

/// SWA mean and clamped diagonal second-moment variance of the snapshots.
/// Throws TooFewSnapshots below 2 snapshots.
ReadoutPosterior swag_diag_from_snapshots(std::span<const Eigen::VectorXd> snapshots);

struct SwagFit {
  ReadoutPosterior posterior;
  std::vector<Eigen::VectorXd> snapshots;
  std::size_t sgd_steps = 0;
};

/// Constant-rate minibatch SGD on the ridge objective, started from the
/// model's fitted readout; snapshots after burn-in every snapshot_every steps.
SwagFit swag_diag_readout(const ModelBundle& model, std::span<const InputCase> train, const SwagSchedule& schedule,
                          std::uint64_t seed);

/// Readout draws theta = mean + sqrt(variance_scale * diag / 2) z evaluated on
/// the frozen pooled features.
PredictiveEnsemble swag_diag_ensemble(const ModelBundle& model, const ReadoutPosterior& posterior,
                                      const InputCase& input, std::size_t M, std::uint64_t seed,
                                      double variance_scale = 1.0);

/// Resample indices for bootstrap member `member`.
std::vector<std::size_t> bootstrap_indices(std::size_t n, std::uint64_t seed, std::size_t member);

/// L readouts, each ridge-fit on a bootstrap resample (or on the full data
/// when bootstrap is false).
std::vector<ModelBundle> deep_ensemble_readout(const ModelBundle& model, std::span<const InputCase> train,
                                               std::size_t L, std::uint64_t seed, double ridge,
                                               bool bootstrap = true);

/// One sample per member.
PredictiveEnsemble deep_ensemble_predict(std::span<const ModelBundle> members, const InputCase& input);

}  // namespace sattn

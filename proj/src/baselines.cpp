// SPDX-License-Identifier: Apache-2.0
#include "sattn/baselines.hpp"

#include <cmath>
#include <random>

#include "sattn/error.hpp"

namespace sattn {

void DropoutSpec::validate() const {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(ErrorCode::InvalidArgument, "dropout rate must lie in [0, 1)");
}

PredictiveEnsemble mc_dropout_ensemble(const ModelBundle& model, const InputCase& input, const DropoutSpec& spec,
                                       std::size_t M, std::uint64_t seed) {
  spec.validate();
  if (M < 2) throw Error(ErrorCode::TooFewSamples, "ensemble size must be >= 2");
  PredictiveEnsemble ens;
  ens.meta.method = "mc_dropout";
  ens.meta.params["rate"] = spec.rate;
  ens.meta.master_seed = seed;

  const Eigen::MatrixXd tokens = token_features(model, input);
  const Eigen::VectorXd pooled = tokens.colwise().mean().transpose();
  ens.deterministic_value = apply_readout(model.readout, pooled);
  const double keep_scale = 1.0 / (1.0 - spec.rate);

  ens.samples.resize(M);
  for (std::size_t m = 0; m < M; ++m) {
    if (spec.rate == 0.0) {
      ens.samples[m] = ens.deterministic_value;
      continue;
    }
    RandomStream rng = make_stream(seed, {stream_tag::kDropout, m});
    Eigen::VectorXd features;
    if (spec.location == DropoutLocation::PooledFeatures) {
      features = pooled;
      for (Eigen::Index k = 0; k < features.size(); ++k) features[k] = rng.uniform() < spec.rate ? 0.0 : features[k] * keep_scale;
    } else {
      Eigen::MatrixXd masked = tokens;
      for (Eigen::Index r = 0; r < masked.rows(); ++r)
        for (Eigen::Index c = 0; c < masked.cols(); ++c)
          masked(r, c) = rng.uniform() < spec.rate ? 0.0 : masked(r, c) * keep_scale;
      features = masked.colwise().mean().transpose();
    }
    ens.samples[m] = apply_readout(model.readout, features);
  }
  return ens;
}

ReadoutPosterior swag_diag_from_snapshots(std::span<const Eigen::VectorXd> snapshots) {
  if (snapshots.size() < 2) throw Error(ErrorCode::TooFewSnapshots, "SWAG needs at least 2 snapshots");
  const Eigen::Index d = snapshots.front().size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd second = Eigen::VectorXd::Zero(d);
  for (const auto& s : snapshots) {
    if (s.size() != d) throw Error(ErrorCode::DimensionMismatch, "snapshot dimensions differ");
    mean += s;
    second += s.array().square().matrix();
  }
  const double t = static_cast<double>(snapshots.size());
  mean /= t;
  second /= t;
  ReadoutPosterior post;
  post.diag_variance = (second.array() - mean.array().square()).max(0.0).matrix();
  post.mean = std::move(mean);
  return post;
}

SwagFit swag_diag_readout(const ModelBundle& model, std::span<const InputCase> train, const SwagSchedule& schedule,
                          std::uint64_t seed) {
  if (train.size() < 2) throw Error(ErrorCode::TooFewSamples, "SWAG needs at least 2 training cases");
  if (schedule.batch_size == 0 || schedule.snapshot_every == 0) {
    throw Error(ErrorCode::InvalidArgument, "SWAG batch size and snapshot interval must be positive");
  }
  const Eigen::MatrixXd phi = pooled_feature_matrix(model, train);
  const Eigen::Index n = phi.rows(), d = phi.cols();
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = train[static_cast<std::size_t>(i)].target;
    if (!t) throw Error(ErrorCode::MissingTarget, "training case has no target");
    y[i] = *t;
  }

  Eigen::VectorXd theta(d + 1);
  theta.head(d) = model.readout.weights;
  theta[d] = model.readout.bias;

  RandomStream rng = make_stream(seed, {stream_tag::kSwagSgd});
  const double penalty = schedule.ridge / static_cast<double>(n);
  SwagFit fit;
  Eigen::VectorXd grad(d + 1);
  for (std::size_t step = 1; step <= schedule.steps; ++step) {
    grad.setZero();
    for (std::size_t k = 0; k < schedule.batch_size; ++k) {
      const auto i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
      const double err = phi.row(i).dot(theta.head(d)) + theta[d] - y[i];
      grad.head(d) += err * phi.row(i).transpose();
      grad[d] += err;
    }
    grad *= 2.0 / static_cast<double>(schedule.batch_size);
    grad.head(d) += 2.0 * penalty * theta.head(d);
    theta -= schedule.learning_rate * grad;
    if (step > schedule.burn_in && (step - schedule.burn_in) % schedule.snapshot_every == 0) {
      fit.snapshots.push_back(theta);
    }
  }
  fit.sgd_steps = schedule.steps;
  fit.posterior = swag_diag_from_snapshots(fit.snapshots);
  return fit;
}

PredictiveEnsemble swag_diag_ensemble(const ModelBundle& model, const ReadoutPosterior& posterior,
                                      const InputCase& input, std::size_t M, std::uint64_t seed,
                                      double variance_scale) {
  if (M < 2) throw Error(ErrorCode::TooFewSamples, "ensemble size must be >= 2");
  const Eigen::Index d = model.config.d_model;
  if (posterior.mean.size() != d + 1 || posterior.diag_variance.size() != d + 1) {
    throw Error(ErrorCode::DimensionMismatch, "posterior dimension differs from readout");
  }
  if ((posterior.diag_variance.array() < 0.0).any() || !(variance_scale >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "variances must be nonnegative");
  }
  const Eigen::VectorXd phi = pooled_features(model, input);
  const Eigen::VectorXd stddev = (0.5 * variance_scale * posterior.diag_variance.array()).sqrt().matrix();

  PredictiveEnsemble ens;
  ens.meta.method = "swag_diag";
  ens.meta.params["variance_scale"] = variance_scale;
  ens.meta.master_seed = seed;
  ens.deterministic_value = phi.dot(posterior.mean.head(d)) + posterior.mean[d];
  ens.samples.resize(M);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t m = 0; m < M; ++m) {
    RandomStream rng = make_stream(seed, {stream_tag::kSwagSample, m});
    double value = ens.deterministic_value;
    for (Eigen::Index k = 0; k <= d; ++k) {
      const double z = normal(rng);
      value += stddev[k] * z * (k < d ? phi[k] : 1.0);
    }
    ens.samples[m] = value;
  }
  return ens;
}

std::vector<std::size_t> bootstrap_indices(std::size_t n, std::uint64_t seed, std::size_t member) {
  RandomStream rng = make_stream(seed, {stream_tag::kBootstrap, member});
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = static_cast<std::size_t>(rng() % n);
  return idx;
}

std::vector<ModelBundle> deep_ensemble_readout(const ModelBundle& model, std::span<const InputCase> train,
                                               std::size_t L, std::uint64_t seed, double ridge, bool bootstrap) {
  if (L < 2) throw Error(ErrorCode::TooFewSamples, "ensemble size L must be >= 2");
  if (train.size() < 2) throw Error(ErrorCode::TooFewSamples, "need at least 2 training cases");
  const Eigen::MatrixXd phi = pooled_feature_matrix(model, train);
  Eigen::VectorXd y(phi.rows());
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    const auto& t = train[static_cast<std::size_t>(i)].target;
    if (!t) throw Error(ErrorCode::MissingTarget, "training case has no target");
    y[i] = *t;
  }
  std::vector<ModelBundle> members;
  members.reserve(L);
  for (std::size_t l = 0; l < L; ++l) {
    ModelBundle member = model;
    if (bootstrap) {
      const auto idx = bootstrap_indices(train.size(), seed, l);
      Eigen::MatrixXd phi_b(phi.rows(), phi.cols());
      Eigen::VectorXd y_b(phi.rows());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        phi_b.row(static_cast<Eigen::Index>(r)) = phi.row(static_cast<Eigen::Index>(idx[r]));
        y_b[static_cast<Eigen::Index>(r)] = y[static_cast<Eigen::Index>(idx[r])];
      }
      member.readout = fit_ridge(phi_b, y_b, ridge);
    } else {
      member.readout = fit_ridge(phi, y, ridge);
    }
    members.push_back(std::move(member));
  }
  return members;
}

PredictiveEnsemble deep_ensemble_predict(std::span<const ModelBundle> members, const InputCase& input) {
  if (members.size() < 2) throw Error(ErrorCode::TooFewSamples, "need at least 2 ensemble members");
  PredictiveEnsemble ens;
  ens.meta.method = "deep_ensemble";
  ens.meta.params["members"] = static_cast<double>(members.size());
  // Members share the frozen encoder, so pooled features are computed once.
  const Eigen::VectorXd phi = pooled_features(members.front(), input);
  for (const auto& m : members) ens.samples.push_back(apply_readout(m.readout, phi));
  ens.deterministic_value = ens.mean();
  return ens;
}

}  // namespace sattn

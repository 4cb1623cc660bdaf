// SPDX-License-Identifier: Apache-2.0
#include "sattn/attention.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "sattn/error.hpp"

namespace sattn {

SimplexVector::SimplexVector(Eigen::VectorXd weights) : weights_(std::move(weights)) {
  if (weights_.size() == 0) throw Error(ErrorCode::InvalidArgument, "simplex vector is empty");
  double sum = 0.0;
  for (Eigen::Index j = 0; j < weights_.size(); ++j) {
    const double w = weights_[j];
    if (!std::isfinite(w) || w < 0.0) {
      throw Error(ErrorCode::InvalidArgument, "simplex entry " + std::to_string(j) + " is negative or non-finite");
    }
    sum += w;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw Error(ErrorCode::InvalidArgument, "simplex entries sum to " + std::to_string(sum));
  }
}

Concentration::Concentration(std::int64_t nu) : nu_(nu) {
  if (nu < 1) throw Error(ErrorCode::InvalidArgument, "concentration must be >= 1, got " + std::to_string(nu));
}

SimplexVector softmax_weights(const ScoreVector& scores) {
  const Eigen::Index n = scores.values.size();
  if (!scores.mask.empty() && scores.mask.size() != static_cast<std::size_t>(n)) {
    throw Error(ErrorCode::DimensionMismatch, "mask length differs from score length");
  }
  double max_score = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!scores.attendable(j)) continue;
    const double s = scores.values[j];
    if (std::isnan(s) || s == std::numeric_limits<double>::infinity()) {
      throw Error(ErrorCode::NonFinite, "score " + std::to_string(j) + " is not finite");
    }
    max_score = std::max(max_score, s);
  }
  if (max_score == -std::numeric_limits<double>::infinity()) {
    throw Error(ErrorCode::AllMasked, "no attendable position");
  }

  Eigen::VectorXd w = Eigen::VectorXd::Zero(n);
  double total = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (!scores.attendable(j) || scores.values[j] == -std::numeric_limits<double>::infinity()) continue;
    w[j] = std::exp(scores.values[j] - max_score);
    total += w[j];
  }
  w /= total;
  return SimplexVector(std::move(w));
}

Eigen::VectorXd deterministic_output(const SimplexVector& weights, const ValueMatrix& values) {
  if (weights.size() != values.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "weights have " + std::to_string(weights.size()) +
                                                  " entries but value matrix has " + std::to_string(values.rows()) +
                                                  " rows");
  }
  return values.transpose() * weights.weights();
}

void sample_multinomial_counts(std::span<const double> probs, std::int64_t nu, RandomStream& rng,
                               std::span<std::int64_t> counts) {
  if (counts.size() != probs.size()) throw Error(ErrorCode::DimensionMismatch, "count buffer length");
  std::size_t last = probs.size();
  double mass = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    counts[j] = 0;
    if (probs[j] >= kZeroProbability) {
      mass += probs[j];
      last = j;
    }
  }
  if (last == probs.size()) throw Error(ErrorCode::InvalidArgument, "distribution has no positive entry");

  std::int64_t remaining = nu;
  for (std::size_t j = 0; j <= last && remaining > 0; ++j) {
    const double p = probs[j];
    if (p < kZeroProbability) continue;
    if (j == last) {
      counts[j] = remaining;
      break;
    }
    const double conditional = std::min(1.0, p / mass);
    std::int64_t k = remaining;
    if (conditional < 1.0) {
      std::binomial_distribution<std::int64_t> binomial(remaining, conditional);
      k = binomial(rng);
    }
    counts[j] = k;
    remaining -= k;
    mass -= p;
  }
}

SimplexVector sample_stochastic_weights(const SimplexVector& weights, Concentration nu, RandomStream& rng) {
  const auto& pi = weights.weights();
  std::vector<std::int64_t> counts(static_cast<std::size_t>(pi.size()));
  sample_multinomial_counts(std::span<const double>(pi.data(), static_cast<std::size_t>(pi.size())), nu.value(),
                            rng, counts);
  Eigen::VectorXd sampled(pi.size());
  const double inv_nu = 1.0 / static_cast<double>(nu.value());
  for (Eigen::Index j = 0; j < pi.size(); ++j) sampled[j] = static_cast<double>(counts[static_cast<std::size_t>(j)]) * inv_nu;
  // Summing k_j / nu can drift from 1 by a few ulps; counts are exact.
  return SimplexVector(std::move(sampled));
}

Eigen::VectorXd stochastic_output(const SimplexVector& weights, const ValueMatrix& values, Concentration nu,
                                  RandomStream& rng) {
  if (weights.size() != values.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "weights length differs from value rows");
  }
  return deterministic_output(sample_stochastic_weights(weights, nu, rng), values);
}

Eigen::MatrixXd stochastic_weight_covariance(const SimplexVector& weights, Concentration nu) {
  const auto& pi = weights.weights();
  Eigen::MatrixXd cov = Eigen::MatrixXd(pi.asDiagonal()) - pi * pi.transpose();
  return cov / static_cast<double>(nu.value());
}

}  // namespace sattn

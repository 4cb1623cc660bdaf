// SPDX-License-Identifier: Apache-2.0
//
// Single-head attention rows: masked softmax, the weighted value average, and
// the stochastic replacement that swaps the softmax weights for normalized
// multinomial counts W / nu with W ~ Multinomial(nu, pi).
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

#include "sattn/rng.hpp"

namespace sattn {

/// Attention logits for one query row. The 1/sqrt(d) scaling is the caller's
/// job. An empty mask means every position is attendable; otherwise
/// mask[j] == false excludes position j from the softmax.
struct ScoreVector {
  Eigen::VectorXd values;
  std::vector<bool> mask;

  bool attendable(Eigen::Index j) const { return mask.empty() || mask[static_cast<std::size_t>(j)]; }
};

/// Point on the probability simplex: nonnegative entries summing to one
/// within 1e-12.
class SimplexVector {
 public:
  static constexpr double kSumTolerance = 1e-12;

  /// Validates; throws InvalidArgument if the entries are not a distribution.
  explicit SimplexVector(Eigen::VectorXd weights);

  const Eigen::VectorXd& weights() const noexcept { return weights_; }
  Eigen::Index size() const noexcept { return weights_.size(); }
  double operator[](Eigen::Index j) const { return weights_[j]; }

 private:
  Eigen::VectorXd weights_;
};

/// Multinomial sample count nu >= 1.
class Concentration {
 public:
  explicit Concentration(std::int64_t nu);
  std::int64_t value() const noexcept { return nu_; }
  friend bool operator==(Concentration, Concentration) = default;

 private:
  std::int64_t nu_;
};

/// n_k rows of d_v values.
using ValueMatrix = Eigen::MatrixXd;

/// Probabilities below this are zeroed before multinomial sampling so that
/// masked positions stay at exactly zero under rounding noise.
inline constexpr double kZeroProbability = 1e-15;

/// Masked softmax with max-subtraction. Masked and -inf positions get weight
/// exactly 0. Throws AllMasked when nothing is attendable, NonFinite on a NaN
/// or +inf unmasked score.
SimplexVector softmax_weights(const ScoreVector& scores);

/// sum_j pi_j v_j. Throws DimensionMismatch when the lengths disagree.
Eigen::VectorXd deterministic_output(const SimplexVector& weights, const ValueMatrix& values);

/// Multinomial(nu, probs) counts by sequential conditional binomials.
/// Entries below kZeroProbability receive zero counts; the last positive
/// entry absorbs the remainder so counts always sum to nu.
void sample_multinomial_counts(std::span<const double> probs, std::int64_t nu, RandomStream& rng,
                               std::span<std::int64_t> counts);

/// pi~ = W / nu with W ~ Multinomial(nu, pi). Entries lie in {0, 1/nu, ..., 1}.
SimplexVector sample_stochastic_weights(const SimplexVector& weights, Concentration nu, RandomStream& rng);

/// deterministic_output(sample_stochastic_weights(pi, nu, rng), V).
Eigen::VectorXd stochastic_output(const SimplexVector& weights, const ValueMatrix& values, Concentration nu,
                                  RandomStream& rng);

/// Cov(pi~) = (diag(pi) - pi pi^T) / nu.
Eigen::MatrixXd stochastic_weight_covariance(const SimplexVector& weights, Concentration nu);

}  // namespace sattn

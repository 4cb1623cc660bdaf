// SPDX-License-Identifier: Apache-2.0
#include "sattn/bayesopt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "sattn/error.hpp"
#include "sattn/json_io.hpp"

namespace sattn {
namespace {

std::set<std::int64_t> evaluated_set(std::span<const CalibrationRecord> history) {
  std::set<std::int64_t> seen;
  for (const auto& r : history) seen.insert(r.nu);
  return seen;
}

std::int64_t round_half_down(double x) {
  const double floor_x = std::floor(x);
  return static_cast<std::int64_t>(x - floor_x > 0.5 ? floor_x + 1.0 : floor_x);
}

std::int64_t project(double log_nu, const SearchDomain& domain) {
  if (log_nu >= std::log(static_cast<double>(domain.nu_max))) return domain.nu_max;
  if (log_nu <= std::log(static_cast<double>(domain.nu_min))) return domain.nu_min;
  return std::clamp(round_half_down(std::exp(log_nu)), domain.nu_min, domain.nu_max);
}

// Walks from `start` in `direction` (then the other way) to the first value
// not yet evaluated. Returns `start` when the domain is exhausted.
std::int64_t avoid_repeat(std::int64_t start, int direction, const SearchDomain& domain,
                          const std::set<std::int64_t>& seen) {
  if (!seen.contains(start)) return start;
  for (int dir : {direction, -direction}) {
    for (std::int64_t nu = start + dir; domain.contains(nu); nu += dir) {
      if (!seen.contains(nu)) return nu;
    }
  }
  return start;
}

std::int64_t log_fraction_point(const SearchDomain& domain, double fraction) {
  const double lo = std::log(static_cast<double>(domain.nu_min));
  const double hi = std::log(static_cast<double>(domain.nu_max));
  return std::clamp(round_half_down(std::exp(lo + fraction * (hi - lo))), domain.nu_min, domain.nu_max);
}

std::int64_t random_unevaluated(const SearchDomain& domain, const std::set<std::int64_t>& seen, RandomStream& rng) {
  std::vector<std::int64_t> open;
  for (std::int64_t nu = domain.nu_min; nu <= domain.nu_max && open.size() < 100000; ++nu)
    if (!seen.contains(nu)) open.push_back(nu);
  if (open.empty()) return domain.nu_min + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(domain.size()));
  return open[static_cast<std::size_t>(rng() % open.size())];
}

}  // namespace

void SearchDomain::validate() const {
  if (nu_min < 1 || nu_min > nu_max) {
    throw Error(ErrorCode::InvalidConfig, "search domain [" + std::to_string(nu_min) + ", " + std::to_string(nu_max) +
                                              "] is empty or below 1");
  }
}

double SurrogatePosterior::noise_mean() const {
  return noise_shape > 1.0 ? noise_scale / (noise_shape - 1.0) : std::numeric_limits<double>::infinity();
}

Eigen::Matrix2d SurrogatePosterior::coef_covariance() const { return noise_mean() * coef_scale; }

SurrogatePosterior fit_surrogate(std::span<const CalibrationRecord> history, const SurrogatePrior& prior) {
  for (const auto& r : history) {
    if (!(r.scale_estimate > 0.0)) {
      throw Error(ErrorCode::NonPositiveScale, "scale estimate at nu=" + std::to_string(r.nu) + " is not positive");
    }
  }
  if (evaluated_set(history).size() < 2) {
    throw Error(ErrorCode::DegenerateDesign, "surrogate needs at least two distinct nu values");
  }
  const auto n = static_cast<Eigen::Index>(history.size());
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = history[static_cast<std::size_t>(i)];
    X(i, 0) = std::log(static_cast<double>(r.nu));
    X(i, 1) = 1.0;
    y[i] = std::log(r.scale_estimate);
  }
  const Eigen::Matrix2d prior_precision = prior.coef_precision * Eigen::Matrix2d::Identity();
  const Eigen::Matrix2d precision = X.transpose() * X + prior_precision;
  const Eigen::Matrix2d scale = precision.inverse();
  const Eigen::Vector2d mean = scale * (prior_precision * prior.coef_mean + X.transpose() * y);

  const Eigen::VectorXd residual = y - X * mean;
  const Eigen::Vector2d shift = mean - prior.coef_mean;
  SurrogatePosterior post;
  post.coef_mean = mean;
  post.coef_scale = 0.5 * (scale + scale.transpose());
  post.noise_shape = prior.noise_shape + 0.5 * static_cast<double>(n);
  post.noise_scale = prior.noise_scale + 0.5 * (residual.squaredNorm() + shift.dot(prior_precision * shift));
  post.n_obs = static_cast<std::size_t>(n);
  return post;
}

SurrogateDraw thompson_draw(const SurrogatePosterior& posterior, RandomStream& rng) {
  std::gamma_distribution<double> gamma(posterior.noise_shape, 1.0 / posterior.noise_scale);
  std::normal_distribution<double> normal(0.0, 1.0);
  SurrogateDraw draw;
  draw.eps2 = 1.0 / gamma(rng);
  const Eigen::Matrix2d chol = Eigen::LLT<Eigen::Matrix2d>(posterior.coef_scale).matrixL();
  Eigen::Vector2d z;
  z[0] = normal(rng);
  z[1] = normal(rng);
  const Eigen::Vector2d coef = posterior.coef_mean + std::sqrt(draw.eps2) * (chol * z);
  draw.a = coef[0];
  draw.ln_b = coef[1];
  return draw;
}

double surrogate_objective(double nu, double a, double ln_b, double eps2, double s0) {
  const double u = std::exp(ln_b + a * std::log(nu));
  return u * u * std::exp(2.0 * eps2) - 2.0 * s0 * u * std::exp(0.5 * eps2) + s0 * s0;
}

double continuous_minimizer_log(double a, double ln_b, double eps2, double s0) {
  if (a == 0.0) throw Error(ErrorCode::ZeroExponent, "surrogate exponent is zero; objective is flat in nu");
  if (!(s0 > 0.0)) throw Error(ErrorCode::NonPositiveScale, "target scale must be positive");
  return (std::log(s0) - 1.5 * eps2 - ln_b) / a;
}

std::int64_t acquisition_minimizer(double a, double ln_b, double eps2, double s0, const SearchDomain& domain) {
  domain.validate();
  return project(continuous_minimizer_log(a, ln_b, eps2, s0), domain);
}

std::int64_t space_filling_point(std::span<const CalibrationRecord> history, const SearchDomain& domain) {
  domain.validate();
  const std::set<std::int64_t> seen = evaluated_set(history);
  std::vector<double> edges{std::log(static_cast<double>(domain.nu_min))};
  for (std::int64_t nu : seen)
    if (domain.contains(nu)) edges.push_back(std::log(static_cast<double>(nu)));
  edges.push_back(std::log(static_cast<double>(domain.nu_max)));
  std::sort(edges.begin(), edges.end());

  std::size_t widest = 0;
  for (std::size_t i = 1; i + 1 < edges.size(); ++i)
    if (edges[i + 1] - edges[i] > edges[widest + 1] - edges[widest]) widest = i;
  const double mid = 0.5 * (edges[widest] + edges[widest + 1]);
  const std::int64_t nu = project(mid, domain);
  return avoid_repeat(nu, std::exp(mid) >= static_cast<double>(nu) ? 1 : -1, domain, seen);
}

Suggestion suggest(std::span<const CalibrationRecord> history, const SearchDomain& domain, double s0_estimate,
                   RandomStream& rng, const SurrogatePrior& prior) {
  domain.validate();
  const std::set<std::int64_t> seen = evaluated_set(history);
  std::vector<CalibrationRecord> usable;
  for (const auto& r : history)
    if (r.scale_estimate > 0.0) usable.push_back(r);

  Suggestion s;
  if (evaluated_set(usable).size() < 2 || !(s0_estimate > 0.0)) {
    s.source = "space_filling";
    s.nu = space_filling_point(history, domain);
    s.continuous_nu = static_cast<double>(s.nu);
    return s;
  }
  s.posterior = fit_surrogate(usable, prior);
  s.draw = thompson_draw(*s.posterior, rng);
  try {
    const double log_nu = continuous_minimizer_log(s.draw->a, s.draw->ln_b, s.draw->eps2, s0_estimate);
    const std::int64_t projected = project(log_nu, domain);
    s.continuous_nu = std::exp(log_nu);
    s.source = "thompson";
    s.nu = avoid_repeat(projected, log_nu >= std::log(static_cast<double>(projected)) ? 1 : -1, domain, seen);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ZeroExponent) throw;
    s.source = "random";
    s.nu = random_unevaluated(domain, seen, rng);
    s.continuous_nu = static_cast<double>(s.nu);
  }
  return s;
}

std::int64_t suggest_next(std::span<const CalibrationRecord> history, const SearchDomain& domain, double s0_estimate,
                          RandomStream& rng) {
  return suggest(history, domain, s0_estimate, rng).nu;
}

std::int64_t history_argmin(std::span<const CalibrationRecord> history) {
  if (history.empty()) throw Error(ErrorCode::Empty, "empty calibration history");
  const CalibrationRecord* best = &history.front();
  for (const auto& r : history) {
    if (r.loss_estimate < best->loss_estimate || (r.loss_estimate == best->loss_estimate && r.nu < best->nu)) best = &r;
  }
  return best->nu;
}

CalibrationResult run_bayesopt(const LossOracle& oracle, const SearchDomain& domain, std::size_t K, double s0,
                               std::uint64_t seed, const SurrogatePrior& prior) {
  domain.validate();
  if (K == 0) throw Error(ErrorCode::InvalidArgument, "BO budget K must be >= 1");
  CalibrationResult result;
  result.s0 = s0;
  for (std::size_t k = 0; k < K; ++k) {
    RandomStream rng = make_stream(seed, {stream_tag::kBayesOpt, k});
    Suggestion s;
    if (k < 2) {
      const std::set<std::int64_t> seen = evaluated_set(result.history);
      s.source = "initial_design";
      s.nu = avoid_repeat(log_fraction_point(domain, static_cast<double>(k + 1) / 3.0), 1, domain, seen);
      s.continuous_nu = static_cast<double>(s.nu);
    } else {
      s = suggest(result.history, domain, s0, rng, prior);
    }
    const LossEvaluation eval = oracle(s.nu, k);
    result.history.push_back(eval.record);
    result.stochastic_passes += eval.stochastic_passes;
    result.reference_passes += eval.reference_passes;
    result.trace.push_back({k, std::move(s), eval.record});
  }
  result.nu_star = history_argmin(result.history);
  return result;
}

CalibrationResult calibrate_nu(const ModelBundle& model, const CalibrationBatch& batch, const SearchDomain& domain,
                               std::size_t K, std::uint64_t master_seed) {
  batch.validate();
  const double s0 = residual_scale(model, batch.cases);
  auto oracle = [&](std::int64_t nu, std::size_t k) {
    const std::uint64_t batch_seed = derive_key(master_seed, {stream_tag::kBatch, k});
    return eval_loss_detailed(model, batch, Concentration(nu), master_seed, batch_seed);
  };
  return run_bayesopt(oracle, domain, K, s0, master_seed);
}

nlohmann::json posterior_to_json(const SurrogatePosterior& p) {
  return {{"a_mean", p.coef_mean[0]},
          {"ln_b_mean", p.coef_mean[1]},
          {"coef_scale", {p.coef_scale(0, 0), p.coef_scale(0, 1), p.coef_scale(1, 0), p.coef_scale(1, 1)}},
          {"noise_shape", p.noise_shape},
          {"noise_scale", p.noise_scale},
          {"n_obs", p.n_obs}};
}

nlohmann::json trace_entry_to_json(const TraceEntry& e) {
  nlohmann::json j;
  j["iteration"] = e.iteration;
  j["suggested_nu"] = e.suggestion.nu;
  j["source"] = e.suggestion.source;
  j["continuous_nu"] = e.suggestion.continuous_nu;
  j["record"] = record_to_json(e.record);
  j["posterior"] = e.suggestion.posterior ? posterior_to_json(*e.suggestion.posterior) : nlohmann::json(nullptr);
  j["draw"] = e.suggestion.draw
                  ? nlohmann::json{{"a", e.suggestion.draw->a}, {"ln_b", e.suggestion.draw->ln_b}, {"eps2", e.suggestion.draw->eps2}}
                  : nlohmann::json(nullptr);
  return j;
}

std::string trace_jsonl(std::span<const TraceEntry> trace) {
  std::string out;
  for (const auto& e : trace) out += dump_json(trace_entry_to_json(e), -1) + '\n';
  return out;
}

}  // namespace sattn

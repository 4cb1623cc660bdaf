// SPDX-License-Identifier: Apache-2.0
#include "sattn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "sattn/error.hpp"

namespace sattn {
namespace {

void require_same_length(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(a) + " ensembles/predictions vs " + std::to_string(b) + " targets");
  }
}

// Integral of |c - t| for t in [lo, hi].
double abs_gap_integral(double c, double lo, double hi) {
  if (c <= lo) return 0.5 * ((hi - c) * (hi - c) - (lo - c) * (lo - c));
  if (c >= hi) return 0.5 * ((c - lo) * (c - lo) - (c - hi) * (c - hi));
  return 0.5 * ((c - lo) * (c - lo) + (hi - c) * (hi - c));
}

double scaled_w1(std::span<const PredictiveEnsemble> ensembles, std::span<const double> targets, double tau) {
  const auto scaled = scale_ensembles(ensembles, tau);
  return w1_to_uniform(pit(scaled, targets));
}

double scaled_coverage(std::span<const PredictiveEnsemble> ensembles, std::span<const double> targets, double tau,
                       double level) {
  const auto scaled = scale_ensembles(ensembles, tau);
  return coverage_and_sharpness(scaled, targets, level).coverage;
}

std::string format_level(double level) { return fmt::format("{:g}", level); }

constexpr double kTauMin = 1e-2;
constexpr double kTauMax = 1e3;

}  // namespace

PITSample pit(std::span<const PredictiveEnsemble> ensembles, std::span<const double> targets) {
  require_same_length(ensembles.size(), targets.size());
  PITSample out;
  out.values.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) out.values.push_back(empirical_cdf(ensembles[i], targets[i]));
  return out;
}

double w1_to_uniform(const PITSample& pit) {
  if (pit.values.empty()) throw Error(ErrorCode::Empty, "PIT sample is empty");
  std::vector<double> sorted = pit.values;
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double total = 0.0;
  double left = 0.0;
  // Between consecutive order statistics the empirical CDF is flat at i / n.
  for (std::size_t i = 0; i <= sorted.size(); ++i) {
    const double right = i < sorted.size() ? std::clamp(sorted[i], 0.0, 1.0) : 1.0;
    if (right > left) total += abs_gap_integral(static_cast<double>(i) / n, left, right);
    left = std::max(left, right);
  }
  return total;
}

std::vector<std::size_t> pit_histogram(const PITSample& pit, std::size_t bins) {
  if (bins == 0) throw Error(ErrorCode::InvalidArgument, "histogram needs at least one bin");
  std::vector<std::size_t> counts(bins, 0);
  for (double v : pit.values) {
    const auto b = static_cast<std::size_t>(std::clamp(v, 0.0, 1.0) * static_cast<double>(bins));
    ++counts[std::min(b, bins - 1)];
  }
  return counts;
}

CoverageSharpness coverage_and_sharpness(std::span<const PredictiveEnsemble> ensembles,
                                         std::span<const double> targets, double level) {
  require_same_length(ensembles.size(), targets.size());
  if (targets.empty()) throw Error(ErrorCode::Empty, "no cases");
  std::size_t covered = 0;
  double width = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const Interval iv = central_interval(ensembles[i], level);
    if (iv.contains(targets[i])) ++covered;
    width += iv.width();
  }
  const double n = static_cast<double>(targets.size());
  return {static_cast<double>(covered) / n, width / n};
}

CrpsTerms crps_decomposed(const PredictiveEnsemble& ensemble, double target) {
  ensemble.validate();
  const std::size_t m = ensemble.size();
  const double md = static_cast<double>(m);
  double error = 0.0;
  for (double x : ensemble.samples) error += std::abs(x - target);
  error /= md;

  std::vector<double> sorted = ensemble.samples;
  std::sort(sorted.begin(), sorted.end());
  // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - M - 1) x_(i), i 1-based.
  double pair_sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) pair_sum += (2.0 * static_cast<double>(i + 1) - md - 1.0) * sorted[i];
  pair_sum *= 2.0;
  const double spread = pair_sum / (2.0 * md * md);
  return {error - spread, error, spread};
}

double energy_score(const PredictiveEnsemble& ensemble, double target) {
  ensemble.validate();
  const auto& x = ensemble.samples;
  const double md = static_cast<double>(x.size());
  double to_target = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    to_target += std::sqrt((x[i] - target) * (x[i] - target));
    for (std::size_t j = 0; j < x.size(); ++j) pairs += std::sqrt((x[i] - x[j]) * (x[i] - x[j]));
  }
  return to_target / md - 0.5 * pairs / (md * md);
}

PointAccuracy point_accuracy(std::span<const double> predictions, std::span<const double> targets) {
  require_same_length(predictions.size(), targets.size());
  if (targets.empty()) throw Error(ErrorCode::Empty, "no cases");
  double se = 0.0, ae = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double e = predictions[i] - targets[i];
    se += e * e;
    ae += std::abs(e);
  }
  const double n = static_cast<double>(targets.size());
  return {std::sqrt(se / n), ae / n};
}

PredictiveEnsemble scale_ensemble(const PredictiveEnsemble& ensemble, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be positive");
  PredictiveEnsemble out = ensemble;
  if (tau == 1.0) return out;
  const double mean = ensemble.mean();
  for (double& s : out.samples) s = mean + tau * (s - mean);
  out.meta.params["tau"] = tau;
  return out;
}

std::vector<PredictiveEnsemble> scale_ensembles(std::span<const PredictiveEnsemble> ensembles, double tau) {
  std::vector<PredictiveEnsemble> out;
  out.reserve(ensembles.size());
  for (const auto& e : ensembles) out.push_back(scale_ensemble(e, tau));
  return out;
}

TemperatureFit fit_temperature(std::span<const PredictiveEnsemble> ensembles, std::span<const double> targets,
                               const TemperatureOptions& options) {
  if (ensembles.empty()) throw Error(ErrorCode::EmptyCalibration, "temperature scaling needs calibration cases");
  require_same_length(ensembles.size(), targets.size());
  TemperatureFit fit;
  fit.calibration_w1_before = scaled_w1(ensembles, targets, 1.0);

  const double lo = std::log(kTauMin), hi = std::log(kTauMax);
  if (options.criterion == TemperatureCriterion::MatchCoverage) {
    // Smallest tau whose coverage reaches the target.
    double a = lo, b = hi;
    if (scaled_coverage(ensembles, targets, std::exp(a), options.coverage_level) >= options.target_coverage) {
      b = a;
    }
    for (int it = 0; it < 60 && b - a > 1e-10; ++it) {
      const double mid = 0.5 * (a + b);
      if (scaled_coverage(ensembles, targets, std::exp(mid), options.coverage_level) >= options.target_coverage) b = mid;
      else a = mid;
    }
    fit.tau = std::exp(b);
  } else {
    // W1 is piecewise constant in tau, so bracket the best point of a coarse
    // log grid before the golden-section refinement.
    constexpr int kGrid = 51;
    double best_x = 0.0, best_f = scaled_w1(ensembles, targets, 1.0);
    const double step = (hi - lo) / (kGrid - 1);
    for (int g = 0; g < kGrid; ++g) {
      const double x = lo + step * g;
      const double f = scaled_w1(ensembles, targets, std::exp(x));
      if (f < best_f) {
        best_f = f;
        best_x = x;
      }
    }
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::max(lo, best_x - step), b = std::min(hi, best_x + step);
    double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
    double fc = scaled_w1(ensembles, targets, std::exp(c)), fd = scaled_w1(ensembles, targets, std::exp(d));
    for (int it = 0; it < 60 && b - a > 1e-8; ++it) {
      if (fc <= fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - inv_phi * (b - a);
        fc = scaled_w1(ensembles, targets, std::exp(c));
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + inv_phi * (b - a);
        fd = scaled_w1(ensembles, targets, std::exp(d));
      }
    }
    const double refined = fc <= fd ? c : d;
    const double refined_f = std::min(fc, fd);
    fit.tau = refined_f < best_f ? std::exp(refined) : std::exp(best_x);
  }
  fit.calibration_w1_after = scaled_w1(ensembles, targets, fit.tau);
  return fit;
}

TemperatureScaled temperature_scale(std::span<const PredictiveEnsemble> calibration_ensembles,
                                    std::span<const double> calibration_targets,
                                    std::span<const PredictiveEnsemble> evaluation, const TemperatureOptions& options) {
  const TemperatureFit fit = fit_temperature(calibration_ensembles, calibration_targets, options);
  return {fit.tau, scale_ensembles(evaluation, fit.tau)};
}

MetricReport evaluate_ensembles(std::span<const PredictiveEnsemble> ensembles, std::span<const double> targets,
                                std::span<const double> levels) {
  require_same_length(ensembles.size(), targets.size());
  if (targets.empty()) throw Error(ErrorCode::Empty, "no cases");
  MetricReport report;
  std::vector<double> means;
  means.reserve(ensembles.size());
  for (const auto& e : ensembles) means.push_back(e.mean());
  const PointAccuracy acc = point_accuracy(means, targets);
  report.rmse = acc.rmse;
  report.mae = acc.mae;
  report.pit_w1 = w1_to_uniform(pit(ensembles, targets));
  for (double level : levels) {
    const CoverageSharpness cs = coverage_and_sharpness(ensembles, targets, level);
    report.coverage[level] = cs.coverage;
    report.sharpness[level] = cs.mean_width;
  }
  const double n = static_cast<double>(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const CrpsTerms c = crps_decomposed(ensembles[i], targets[i]);
    report.crps_error_term += c.error_term / n;
    report.crps_spread_term += c.spread_term / n;
    report.energy_score += energy_score(ensembles[i], targets[i]) / n;
  }
  report.crps = report.crps_error_term - report.crps_spread_term;
  return report;
}

nlohmann::json report_to_json(const MetricReport& r) {
  nlohmann::json coverage = nlohmann::json::object(), sharpness = nlohmann::json::object();
  for (const auto& [level, v] : r.coverage) coverage[format_level(level)] = v;
  for (const auto& [level, v] : r.sharpness) sharpness[format_level(level)] = v;
  nlohmann::json j{{"method", r.method},
                   {"variant", r.variant},
                   {"dataset", r.dataset},
                   {"seed", r.seed},
                   {"rmse", r.rmse},
                   {"mae", r.mae},
                   {"pit_w1", r.pit_w1},
                   {"coverage", coverage},
                   {"sharpness", sharpness},
                   {"crps", r.crps},
                   {"crps_error_term", r.crps_error_term},
                   {"crps_spread_term", r.crps_spread_term},
                   {"energy_score", r.energy_score}};
  j["tau"] = r.tau ? nlohmann::json(*r.tau) : nlohmann::json(nullptr);
  return j;
}

}  // namespace sattn

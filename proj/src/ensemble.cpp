// SPDX-License-Identifier: Apache-2.0
#include "sattn/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sattn/error.hpp"
#include "sattn/json_io.hpp"
#include "sattn/parallel.hpp"

namespace sattn {

double PredictiveEnsemble::mean() const {
  if (samples.empty()) throw Error(ErrorCode::Empty, "ensemble has no samples");
  return std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
}

void PredictiveEnsemble::validate() const {
  if (samples.size() < 2) throw Error(ErrorCode::TooFewSamples, "ensemble needs at least 2 samples");
  for (double s : samples)
    if (!std::isfinite(s)) throw Error(ErrorCode::NonFinite, "ensemble sample is not finite");
}

PredictiveEnsemble draw_ensemble(const ModelBundle& model, const InputCase& input, Concentration nu, std::size_t M,
                                 std::uint64_t master_seed) {
  if (M < 2) throw Error(ErrorCode::TooFewSamples, "ensemble size must be >= 2");
  PredictiveEnsemble ens;
  ens.meta.method = "sa";
  ens.meta.params["nu"] = static_cast<double>(nu.value());
  ens.meta.master_seed = master_seed;
  ens.deterministic_value = forward_deterministic(model, input);
  ens.samples.resize(M);
  parallel_for(M, [&](std::size_t m) { ens.samples[m] = forward_stochastic(model, input, nu, m, master_seed); });
  return ens;
}

double empirical_cdf(const PredictiveEnsemble& ensemble, double point) {
  if (ensemble.samples.empty()) throw Error(ErrorCode::Empty, "ensemble has no samples");
  std::size_t below = 0, equal = 0;
  for (double s : ensemble.samples) {
    if (s < point) ++below;
    else if (s == point) ++equal;
  }
  return (static_cast<double>(below) + 0.5 * static_cast<double>(equal)) / static_cast<double>(ensemble.size());
}

double sorted_quantile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(ErrorCode::Empty, "quantile of empty sample");
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Interval central_interval(const PredictiveEnsemble& ensemble, double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::InvalidArgument, "interval level must lie in (0, 1)");
  ensemble.validate();
  std::vector<double> sorted = ensemble.samples;
  std::sort(sorted.begin(), sorted.end());
  const double tail = 0.5 * (1.0 - level);
  return {sorted_quantile(sorted, tail), sorted_quantile(sorted, 1.0 - tail)};
}

std::string ensemble_csv(std::span<const PredictiveEnsemble> ensembles) {
  std::string out = "case_id,sample_index,value\n";
  for (std::size_t i = 0; i < ensembles.size(); ++i) {
    const auto& s = ensembles[i].samples;
    for (std::size_t m = 0; m < s.size(); ++m) {
      out += std::to_string(i) + ',' + std::to_string(m) + ',' + format_real(s[m]) + '\n';
    }
  }
  return out;
}

nlohmann::json ensemble_sidecar(std::span<const PredictiveEnsemble> ensembles) {
  nlohmann::json doc;
  doc["n_cases"] = ensembles.size();
  if (!ensembles.empty()) {
    const EnsembleMeta& meta = ensembles.front().meta;
    doc["method"] = meta.method;
    doc["params"] = meta.params;
    doc["master_seed"] = meta.master_seed;
    doc["M"] = ensembles.front().size();
  }
  nlohmann::json det = nlohmann::json::array();
  for (const auto& e : ensembles) det.push_back(e.deterministic_value);
  doc["deterministic_values"] = std::move(det);
  return doc;
}

}  // namespace sattn

// SPDX-License-Identifier: Apache-2.0
#include "sattn/calibration.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "sattn/error.hpp"
#include "sattn/json_io.hpp"
#include "sattn/parallel.hpp"

namespace sattn {
namespace {

LossTerms split_terms(std::span<const double> deviations, double residual) {
  const double n = static_cast<double>(deviations.size());
  const double mean = std::accumulate(deviations.begin(), deviations.end(), 0.0) / n;
  double var = 0.0;
  for (double d : deviations) var += (d - mean) * (d - mean);
  return {var / n, (mean - residual) * (mean - residual)};
}

}  // namespace

void CalibrationBatch::validate() const {
  if (cases.empty() || B == 0 || M == 0) throw Error(ErrorCode::EmptyBatch, "calibration batch is empty");
  if (B > cases.size()) {
    throw Error(ErrorCode::InvalidArgument, "batch size " + std::to_string(B) + " exceeds " +
                                                std::to_string(cases.size()) + " calibration cases");
  }
  for (std::size_t i = 0; i < cases.size(); ++i)
    if (!cases[i].target) throw Error(ErrorCode::MissingTarget, "calibration case " + std::to_string(i) + " has no target");
}

double deviation_magnitude(const ModelBundle& model, const InputCase& input, Concentration nu,
                           std::uint64_t pass_index, std::uint64_t master_seed) {
  return std::abs(forward_stochastic(model, input, nu, pass_index, master_seed) - forward_deterministic(model, input));
}

double residual_magnitude(const ModelBundle& model, const InputCase& input) {
  if (!input.target) throw Error(ErrorCode::MissingTarget, "case has no target");
  return std::abs(*input.target - forward_deterministic(model, input));
}

std::vector<std::size_t> sample_batch(std::size_t n, std::size_t B, std::uint64_t seed) {
  if (B == 0 || n == 0) throw Error(ErrorCode::EmptyBatch, "cannot draw an empty batch");
  if (B > n) throw Error(ErrorCode::InvalidArgument, "batch larger than population");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  RandomStream rng = make_stream(seed, {stream_tag::kBatch});
  for (std::size_t i = 0; i < B; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(B);
  return idx;
}

std::uint64_t case_seed(std::uint64_t master_seed, std::size_t case_index) {
  return derive_key(master_seed, {static_cast<std::uint64_t>(case_index)});
}

LossEvaluation eval_loss_detailed(const ModelBundle& model, const CalibrationBatch& batch, Concentration nu,
                                  std::uint64_t master_seed, std::uint64_t batch_seed) {
  batch.validate();
  const std::size_t B = batch.B, M = batch.M;
  LossEvaluation out;
  out.batch = sample_batch(batch.cases.size(), B, batch_seed);

  std::vector<double> loss_b(B), mean_delta_b(B), residual_b(B);
  std::vector<LossTerms> terms_b(B);
  parallel_for(B, [&](std::size_t b) {
    const std::size_t i = out.batch[b];
    const InputCase& x = batch.cases[i];
    const double reference = forward_deterministic(model, x);
    const double r = std::abs(*x.target - reference);
    const std::uint64_t seed = case_seed(master_seed, i);
    std::vector<double> deltas(M);
    double ell = 0.0;
    for (std::size_t m = 0; m < M; ++m) {
      deltas[m] = std::abs(forward_stochastic(model, x, nu, m, seed) - reference);
      ell += (deltas[m] - r) * (deltas[m] - r);
    }
    loss_b[b] = ell / static_cast<double>(M);
    mean_delta_b[b] = std::accumulate(deltas.begin(), deltas.end(), 0.0) / static_cast<double>(M);
    residual_b[b] = r;
    terms_b[b] = split_terms(deltas, r);
  });

  double loss = 0.0, scale = 0.0, target = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    loss += loss_b[b];
    scale += mean_delta_b[b];
    target += residual_b[b];
    out.terms.variance_term += terms_b[b].variance_term;
    out.terms.squared_bias_term += terms_b[b].squared_bias_term;
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  out.record = {nu.value(), loss * inv_b, scale * inv_b, target * inv_b};
  out.terms.variance_term *= inv_b;
  out.terms.squared_bias_term *= inv_b;
  out.case_losses = std::move(loss_b);
  out.stochastic_passes = B * M;
  out.reference_passes = B;
  return out;
}

CalibrationRecord eval_loss(const ModelBundle& model, const CalibrationBatch& batch, Concentration nu,
                            std::uint64_t master_seed) {
  return eval_loss_detailed(model, batch, nu, master_seed, master_seed).record;
}

LossTerms loss_decomposition(std::span<const double> deviations, double residual) {
  if (deviations.size() < 2) throw Error(ErrorCode::TooFewSamples, "decomposition needs at least 2 deviations");
  return split_terms(deviations, residual);
}

double residual_scale(const ModelBundle& model, std::span<const InputCase> cases) {
  if (cases.empty()) throw Error(ErrorCode::EmptyBatch, "no cases for residual scale");
  double total = 0.0;
  for (const auto& c : cases) total += residual_magnitude(model, c);
  return total / static_cast<double>(cases.size());
}

nlohmann::json record_to_json(const CalibrationRecord& r) {
  return {{"nu", r.nu}, {"loss_estimate", r.loss_estimate}, {"scale_estimate", r.scale_estimate},
          {"target_scale", r.target_scale}};
}

CalibrationRecord record_from_json(const nlohmann::json& j) {
  try {
    return {j.at("nu").get<std::int64_t>(), j.at("loss_estimate").get<double>(), j.at("scale_estimate").get<double>(),
            j.at("target_scale").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Io, std::string("malformed calibration record: ") + e.what());
  }
}

std::string history_jsonl(std::span<const CalibrationRecord> history) {
  std::string out;
  for (const auto& r : history) out += dump_json(record_to_json(r), -1) + '\n';
  return out;
}

std::vector<CalibrationRecord> history_from_jsonl(const std::string& text) {
  std::vector<CalibrationRecord> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::Io, std::string("malformed JSON line: ") + e.what());
    }
  }
  return out;
}

}  // namespace sattn

// SPDX-License-Identifier: Apache-2.0
#include "sattn/pipeline.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "sattn/calibration.hpp"
#include "sattn/ensemble.hpp"
#include "sattn/error.hpp"
#include "sattn/json_io.hpp"
#include "sattn/parallel.hpp"
#include "sattn/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sattn {
namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); }

// Reads fields out of one JSON object and remembers which keys were used so
// leftovers can be reported.
class Fields {
 public:
  Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) config_error(where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    used_.insert(key);
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      config_error(fmt::format("{}.{} has the wrong type", path_, key));
    }
  }

  template <class T>
  void get_opt(const char* key, std::optional<T>& out) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    T v{};
    get(key, v);
    out = v;
  }

  bool has(const char* key) const { return obj_.contains(key); }

  std::optional<Fields> child(const char* key) {
    auto it = obj_.find(key);
    if (it == obj_.end()) return std::nullopt;
    used_.insert(key);
    return Fields(*it, path_ + "." + key);
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!used_.count(it.key())) config_error(fmt::format("unknown field {}.{}", path_, it.key()));
  }

 private:
  std::string where() const { return path_; }
  const json& obj_;
  std::string path_;
  std::set<std::string> used_;
};

std::string location_name(DropoutLocation loc) {
  return loc == DropoutLocation::PooledFeatures ? "pooled" : "tokens";
}

std::string criterion_name(TemperatureCriterion c) {
  return c == TemperatureCriterion::MinimizeW1 ? "w1" : "coverage";
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::vector<double> targets_of(const Dataset& d) {
  std::vector<double> t;
  t.reserve(d.cases.size());
  for (const auto& c : d.cases) {
    if (!c.target) throw Error(ErrorCode::MissingTarget, "case without target in " + d.name);
    t.push_back(*c.target);
  }
  return t;
}

template <class Fn>
std::vector<PredictiveEnsemble> draw_all(const std::vector<InputCase>& cases, Fn&& fn) {
  std::vector<PredictiveEnsemble> out(cases.size());
  parallel_for(cases.size(), [&](std::size_t i) { out[i] = fn(cases[i], i); });
  return out;
}

std::string pit_csv(const PITSample& p, std::size_t bins) {
  const auto counts = pit_histogram(p, bins);
  const double n = static_cast<double>(p.values.size());
  std::string out = "bin,lo,hi,count,density\n";
  for (std::size_t b = 0; b < bins; ++b) {
    const double lo = static_cast<double>(b) / static_cast<double>(bins);
    const double hi = static_cast<double>(b + 1) / static_cast<double>(bins);
    out += fmt::format("{},{},{},{},{}\n", b, format_real(lo), format_real(hi), counts[b],
                       format_real(static_cast<double>(counts[b]) * static_cast<double>(bins) / n));
  }
  return out;
}

std::string intervals_csv(std::span<const PredictiveEnsemble> ens, std::span<const double> targets,
                          std::span<const double> levels) {
  std::string out = "case_id,target,mean,level,lo,hi,covered\n";
  for (std::size_t i = 0; i < ens.size(); ++i) {
    const double mean = ens[i].mean();
    for (double level : levels) {
      const Interval iv = central_interval(ens[i], level);
      out += fmt::format("{},{},{},{},{},{},{}\n", i, format_real(targets[i]), format_real(mean), format_real(level),
                         format_real(iv.lo), format_real(iv.hi), iv.contains(targets[i]) ? 1 : 0);
    }
  }
  return out;
}

void write_json(const fs::path& path, const json& doc) { write_text_file(path, dump_json(doc)); }

ModelBundle load_checked_model(const fs::path& path, const DataSplits& splits) {
  ModelBundle model = load_model(path);
  const auto& f = splits.train.cases.front().features;
  if (f.size() != model.config.input_dim) {
    throw Error(ErrorCode::DimensionMismatch,
                fmt::format("model expects {} features, data has {}", model.config.input_dim, f.size()));
  }
  return model;
}

// Method name used in file names and report keys.
std::string swag_method_name(double scale) { return fmt::format("swag_diag_s{:g}", scale); }

struct MethodEnsembles {
  std::string method;
  std::vector<PredictiveEnsemble> test;
  std::vector<PredictiveEnsemble> cal;
};

}  // namespace

// ---------------------------------------------------------------- config

void RunConfig::validate() const {
  if (dataset.kind == "sinusoid") {
    const auto& s = dataset.sinusoid;
    if (s.n == 0) config_error("dataset.n must be positive");
    if (!(s.x_lo < s.x_hi)) config_error("dataset.x_lo must be below dataset.x_hi");
    if (!(s.noise_sigma >= 0.0) || !std::isfinite(s.noise_sigma)) config_error("dataset.noise_sigma must be >= 0");
  } else if (dataset.kind == "csv") {
    if (dataset.csv_path.empty()) config_error("dataset.csv_path is required for csv datasets");
    if (!fs::is_regular_file(dataset.csv_path)) config_error("dataset.csv_path not found: " + dataset.csv_path);
    if (dataset.target_column.empty()) config_error("dataset.target_column is required for csv datasets");
  } else {
    config_error("dataset.kind must be \"sinusoid\" or \"csv\"");
  }
  split.validate();
  encoder.validate();
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) config_error("ridge must be >= 0");
  sa.domain.validate();
  if (sa.batch_size == 0 || sa.passes == 0) config_error("sa.batch_size and sa.passes must be positive");
  if (sa.budget == 0) config_error("sa.budget must be positive");
  if (sa.ensemble_size < 2) config_error("sa.ensemble_size must be at least 2");
  for (int l : sa.layers)
    if (l < 0 || l >= encoder.n_layers) config_error(fmt::format("sa.layers entry {} out of range", l));
  if (!(baselines.dropout.rate >= 0.0 && baselines.dropout.rate < 1.0)) config_error("baselines.dropout_rate must be in [0, 1)");
  const auto& sw = baselines.swag;
  if (sw.steps == 0 || sw.batch_size == 0 || sw.snapshot_every == 0 || !(sw.learning_rate > 0.0))
    config_error("baselines.swag settings must be positive");
  if (sw.burn_in >= sw.steps) config_error("baselines.swag.burn_in must be below steps");
  if (baselines.swag_scales.empty()) config_error("baselines.swag_scales must not be empty");
  for (double g : baselines.swag_scales)
    if (!(g > 0.0) || !std::isfinite(g)) config_error("baselines.swag_scales entries must be positive");
  if (baselines.deep_ensemble_members < 2) config_error("baselines.deep_ensemble_members must be at least 2");
  if (levels.empty()) config_error("levels must not be empty");
  for (double l : levels)
    if (!(l > 0.0 && l < 1.0)) config_error("levels must lie in (0, 1)");
  if (pit_bins == 0) config_error("pit_bins must be positive");
  if (!(temperature.coverage_level > 0.0 && temperature.coverage_level < 1.0) ||
      !(temperature.target_coverage > 0.0 && temperature.target_coverage < 1.0))
    config_error("temperature coverage settings must lie in (0, 1)");
  if (sweep.nus.empty()) config_error("sweep.nus must not be empty");
  for (auto nu : sweep.nus)
    if (nu < 1) config_error("sweep.nus entries must be >= 1");
  if (!(sweep.coverage_level > 0.0 && sweep.coverage_level < 1.0)) config_error("sweep.coverage_level must lie in (0, 1)");
}

RunConfig config_from_json(const json& doc) {
  RunConfig c;
  Fields root(doc, "config");
  if (auto d = root.child("dataset")) {
    d->get("kind", c.dataset.kind);
    auto& s = c.dataset.sinusoid;
    d->get("n", s.n);
    d->get("x_lo", s.x_lo);
    d->get("x_hi", s.x_hi);
    d->get("amplitude", s.amplitude);
    d->get("frequency", s.frequency);
    d->get("noise_sigma", s.noise_sigma);
    d->get("seed", s.seed);
    d->get("csv_path", c.dataset.csv_path);
    d->get("target_column", c.dataset.target_column);
    d->get("feature_columns", c.dataset.feature_columns);
    d->get_opt("standardize", c.dataset.standardize);
    d->finish();
  }
  if (auto s = root.child("split")) {
    s->get("train_frac", c.split.train_frac);
    s->get("cal_frac", c.split.cal_frac);
    s->get("test_frac", c.split.test_frac);
    s->get("seed", c.split.seed);
    s->finish();
  }
  if (auto e = root.child("encoder")) {
    e->get("n_layers", c.encoder.n_layers);
    e->get("n_heads", c.encoder.n_heads);
    e->get("d_model", c.encoder.d_model);
    e->get("d_ff", c.encoder.d_ff);
    e->get("n_tokens", c.encoder.n_tokens);
    e->get("seed", c.encoder.seed);
    e->finish();
  }
  root.get("ridge", c.ridge);
  c.baselines.swag.ridge = c.ridge;
  if (auto s = root.child("sa")) {
    s->get("nu_min", c.sa.domain.nu_min);
    s->get("nu_max", c.sa.domain.nu_max);
    s->get("batch_size", c.sa.batch_size);
    s->get("passes", c.sa.passes);
    s->get("budget", c.sa.budget);
    s->get("ensemble_size", c.sa.ensemble_size);
    s->get("layers", c.sa.layers);
    s->get("master_seed", c.sa.master_seed);
    s->finish();
  }
  if (auto b = root.child("baselines")) {
    b->get("dropout_rate", c.baselines.dropout.rate);
    std::string loc = location_name(c.baselines.dropout.location);
    b->get("dropout_location", loc);
    if (loc == "pooled") c.baselines.dropout.location = DropoutLocation::PooledFeatures;
    else if (loc == "tokens") c.baselines.dropout.location = DropoutLocation::ReadoutInputs;
    else config_error("baselines.dropout_location must be \"pooled\" or \"tokens\"");
    if (auto w = b->child("swag")) {
      auto& sw = c.baselines.swag;
      w->get("steps", sw.steps);
      w->get("learning_rate", sw.learning_rate);
      w->get("batch_size", sw.batch_size);
      w->get("burn_in", sw.burn_in);
      w->get("snapshot_every", sw.snapshot_every);
      w->get("ridge", sw.ridge);
      w->finish();
    }
    b->get("swag_scales", c.baselines.swag_scales);
    b->get("deep_ensemble_members", c.baselines.deep_ensemble_members);
    b->get("bootstrap", c.baselines.bootstrap);
    b->finish();
  }
  root.get("levels", c.levels);
  root.get("pit_bins", c.pit_bins);
  if (auto t = root.child("temperature")) {
    std::string crit = criterion_name(c.temperature.criterion);
    t->get("criterion", crit);
    if (crit == "w1") c.temperature.criterion = TemperatureCriterion::MinimizeW1;
    else if (crit == "coverage") c.temperature.criterion = TemperatureCriterion::MatchCoverage;
    else config_error("temperature.criterion must be \"w1\" or \"coverage\"");
    t->get("coverage_level", c.temperature.coverage_level);
    t->get("target_coverage", c.temperature.target_coverage);
    t->finish();
  }
  if (auto s = root.child("sweep")) {
    s->get("nus", c.sweep.nus);
    s->get("coverage_level", c.sweep.coverage_level);
    s->finish();
  }
  root.get("output_dir", c.output_dir);
  root.finish();
  return c;
}

json config_to_json(const RunConfig& c) {
  json j;
  json d{{"kind", c.dataset.kind}};
  if (c.dataset.kind == "sinusoid") {
    const auto& s = c.dataset.sinusoid;
    d.update({{"n", s.n}, {"x_lo", s.x_lo}, {"x_hi", s.x_hi}, {"amplitude", s.amplitude},
              {"frequency", s.frequency}, {"noise_sigma", s.noise_sigma}, {"seed", s.seed}});
  } else {
    d.update({{"csv_path", c.dataset.csv_path},
              {"target_column", c.dataset.target_column},
              {"feature_columns", c.dataset.feature_columns}});
  }
  if (c.dataset.standardize) d["standardize"] = *c.dataset.standardize;
  j["dataset"] = d;
  j["split"] = {{"train_frac", c.split.train_frac}, {"cal_frac", c.split.cal_frac},
                {"test_frac", c.split.test_frac}, {"seed", c.split.seed}};
  j["encoder"] = {{"n_layers", c.encoder.n_layers}, {"n_heads", c.encoder.n_heads},
                  {"d_model", c.encoder.d_model},   {"d_ff", c.encoder.d_ff},
                  {"n_tokens", c.encoder.n_tokens}, {"seed", c.encoder.seed}};
  j["ridge"] = c.ridge;
  j["sa"] = {{"nu_min", c.sa.domain.nu_min},
             {"nu_max", c.sa.domain.nu_max},
             {"batch_size", c.sa.batch_size},
             {"passes", c.sa.passes},
             {"budget", c.sa.budget},
             {"ensemble_size", c.sa.ensemble_size},
             {"layers", c.sa.layers},
             {"master_seed", c.sa.master_seed}};
  const auto& sw = c.baselines.swag;
  j["baselines"] = {{"dropout_rate", c.baselines.dropout.rate},
                    {"dropout_location", location_name(c.baselines.dropout.location)},
                    {"swag",
                     {{"steps", sw.steps},
                      {"learning_rate", sw.learning_rate},
                      {"batch_size", sw.batch_size},
                      {"burn_in", sw.burn_in},
                      {"snapshot_every", sw.snapshot_every},
                      {"ridge", sw.ridge}}},
                    {"swag_scales", c.baselines.swag_scales},
                    {"deep_ensemble_members", c.baselines.deep_ensemble_members},
                    {"bootstrap", c.baselines.bootstrap}};
  j["levels"] = c.levels;
  j["pit_bins"] = c.pit_bins;
  j["temperature"] = {{"criterion", criterion_name(c.temperature.criterion)},
                      {"coverage_level", c.temperature.coverage_level},
                      {"target_coverage", c.temperature.target_coverage}};
  j["sweep"] = {{"nus", c.sweep.nus}, {"coverage_level", c.sweep.coverage_level}};
  j["output_dir"] = c.output_dir;
  return j;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw Error(ErrorCode::InvalidConfig, "config file not found: " + path.string());
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c = config_from_json(doc);
  c.validate();
  return c;
}

DataSplits prepare_data(const RunConfig& config) {
  Dataset data;
  if (config.dataset.kind == "sinusoid") {
    data = make_sinusoid(config.dataset.sinusoid);
    data.standardize = config.dataset.standardize.value_or(false);
  } else {
    data = load_csv(config.dataset.csv_path, config.dataset.target_column, config.dataset.feature_columns,
                    config.dataset.standardize.value_or(true));
  }
  return split(data, config.split);
}

// ---------------------------------------------------------------- ledger

json CostLedger::to_json() const {
  json j;
  json m = json::object();
  for (const auto& [name, c] : methods) {
    m[name] = {{"evaluation_passes", c.evaluation_passes},
               {"calibration_passes", c.calibration_passes},
               {"reference_passes", c.reference_passes},
               {"training_steps", c.training_steps},
               {"total_forward_passes", c.total_passes()}};
  }
  j["methods"] = std::move(m);
  j["shared"] = {{"readout_fits", shared_readout_fits}};
  return j;
}

void write_manifest(const fs::path& out_dir) {
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name == "manifest.json" || name.rfind("timing_", 0) == 0) continue;
    names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  json artifacts = json::object();
  for (const auto& n : names) artifacts[n] = sha256_hex(read_text_file(out_dir / n));
  write_json(out_dir / "manifest.json", {{"format", "sattn-manifest-v1"}, {"artifacts", artifacts}});
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidRange:
    case ErrorCode::EmptySplit:
    case ErrorCode::MissingColumn:
      return 2;
    case ErrorCode::Io:
    case ErrorCode::ParseError:
      return 4;
    default:
      return 3;
  }
}

// ---------------------------------------------------------------- commands

FitOutcome cmd_fit(const RunConfig& config, const fs::path& out_dir) {
  config.validate();
  Stopwatch clock;
  const DataSplits splits = prepare_data(config);
  EncoderConfig enc = config.encoder;
  enc.input_dim = static_cast<int>(splits.train.cases.front().features.size());
  ModelBundle model = fit_readout(init_encoder(enc), splits.train.cases, config.ridge);
  model = with_stochastic_layers(std::move(model), config.sa.layers.empty() ? all_layers(enc) : config.sa.layers);

  std::vector<double> preds;
  for (const auto& c : splits.test.cases) preds.push_back(forward_deterministic(model, c));
  const auto targets = targets_of(splits.test);
  FitOutcome out{model, point_accuracy(preds, targets), out_dir / "model.json"};

  save_model(model, out.model_path);
  json acc{{"split", "test"},
           {"rmse", out.test_accuracy.rmse},
           {"mae", out.test_accuracy.mae},
           {"n_train", splits.train.cases.size()},
           {"n_cal", splits.cal.cases.size()},
           {"n_test", splits.test.cases.size()},
           {"dataset", splits.train.name}};
  if (config.dataset.kind == "sinusoid") acc["noise_sigma"] = config.dataset.sinusoid.noise_sigma;
  write_json(out_dir / "fit_accuracy.json", acc);
  write_json(out_dir / "timing_fit.json", {{"seconds", clock.seconds()}});
  write_manifest(out_dir);
  return out;
}

CalibrateOutcome cmd_calibrate(const RunConfig& config, const fs::path& model_path, const fs::path& out_dir) {
  config.validate();
  Stopwatch clock;
  const DataSplits splits = prepare_data(config);
  const ModelBundle model = load_checked_model(model_path, splits);
  CalibrationBatch batch{splits.cal.cases, std::min(config.sa.batch_size, splits.cal.cases.size()), config.sa.passes};
  CalibrateOutcome out;
  out.result = calibrate_nu(model, batch, config.sa.domain, config.sa.budget, config.sa.master_seed);
  const auto& r = out.result;

  double best = std::numeric_limits<double>::infinity();
  for (const auto& h : r.history) best = std::min(best, h.loss_estimate);
  std::vector<CalibrationRecord> sorted = r.history;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.nu < b.nu; });
  json curve = json::array();
  for (const auto& h : sorted) {
    curve.push_back({{"nu", h.nu},
                     {"loss", h.loss_estimate},
                     {"scale", h.scale_estimate},
                     {"normalized_loss", best > 0.0 ? h.loss_estimate / best : 1.0}});
  }
  json summary{{"nu_star", r.nu_star},
               {"s0", r.s0},
               {"budget", config.sa.budget},
               {"batch_size", batch.B},
               {"passes", batch.M},
               {"nu_min", config.sa.domain.nu_min},
               {"nu_max", config.sa.domain.nu_max},
               {"master_seed", config.sa.master_seed},
               {"stochastic_passes", r.stochastic_passes},
               {"reference_passes", r.reference_passes},
               {"loss_curve", curve}};
  out.summary_path = out_dir / "calibration.json";
  write_json(out.summary_path, summary);
  write_text_file(out_dir / "trace.jsonl", trace_jsonl(r.trace));
  write_text_file(out_dir / "history.jsonl", history_jsonl(r.history));
  write_json(out_dir / "timing_calibrate.json", {{"seconds", clock.seconds()}});
  write_manifest(out_dir);
  return out;
}

EvaluateOutcome cmd_evaluate(const RunConfig& config, const fs::path& model_path, const EvaluateOptions& options,
                             const fs::path& out_dir) {
  config.validate();
  Stopwatch clock;
  std::size_t bo_passes = 0, bo_reference = 0;
  EvaluateOutcome out;
  if (options.nu) {
    out.nu = *options.nu;
  } else if (options.calibration) {
    json cal = read_json_file(*options.calibration);
    try {
      out.nu = cal.at("nu_star").get<std::int64_t>();
      bo_passes = cal.at("stochastic_passes").get<std::size_t>();
      bo_reference = cal.at("reference_passes").get<std::size_t>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Io, std::string("malformed calibration summary: ") + e.what());
    }
  } else {
    throw Error(ErrorCode::InvalidConfig, "evaluate needs an explicit nu or a calibration summary");
  }
  if (out.nu < 1) throw Error(ErrorCode::InvalidConfig, "nu must be >= 1");

  const DataSplits splits = prepare_data(config);
  const ModelBundle model = load_checked_model(model_path, splits);
  const auto& test = splits.test.cases;
  const auto& cal = splits.cal.cases;
  const auto y_test = targets_of(splits.test);
  const auto y_cal = targets_of(splits.cal);
  const std::uint64_t seed = config.sa.master_seed;
  const std::size_t M = config.sa.ensemble_size;
  const std::size_t n_test = test.size(), n_cal = cal.size();
  constexpr std::uint64_t kTest = 1, kCal = 2;

  std::vector<MethodEnsembles> methods;
  json timing = json::object();

  {
    Stopwatch t;
    const Concentration nu(out.nu);
    auto draw = [&](std::uint64_t part) {
      return [&, part](const InputCase& c, std::size_t i) {
        return draw_ensemble(model, c, nu, M, derive_key(seed, {stream_tag::kEnsemble, part, i}));
      };
    };
    methods.push_back({"sa", draw_all(test, draw(kTest)), draw_all(cal, draw(kCal))});
    out.ledger.methods["sa"] = {M * n_test, bo_passes, bo_reference, 0};
    out.ledger.methods["sa_temperature"] = {0, M * n_cal, 0, 0};
    timing["sa"] = t.seconds();
  }
  {
    Stopwatch t;
    auto draw = [&](std::uint64_t part) {
      return [&, part](const InputCase& c, std::size_t i) {
        return mc_dropout_ensemble(model, c, config.baselines.dropout, M,
                                   derive_key(seed, {stream_tag::kDropout, part, i}));
      };
    };
    methods.push_back({"mc_dropout", draw_all(test, draw(kTest)), draw_all(cal, draw(kCal))});
    out.ledger.methods["mc_dropout"] = {M * n_test, M * n_cal, 0, 0};
    timing["mc_dropout"] = t.seconds();
  }
  {
    Stopwatch t;
    const SwagFit fit = swag_diag_readout(model, splits.train.cases, config.baselines.swag, seed);
    for (double g : config.baselines.swag_scales) {
      auto draw = [&](std::uint64_t part) {
        return [&, part](const InputCase& c, std::size_t i) {
          return swag_diag_ensemble(model, fit.posterior, c, M, derive_key(seed, {stream_tag::kSwagSample, part, i}), g);
        };
      };
      methods.push_back({swag_method_name(g), draw_all(test, draw(kTest)), draw_all(cal, draw(kCal))});
      out.ledger.methods[swag_method_name(g)] = {M * n_test, M * n_cal, 0, fit.sgd_steps};
    }
    timing["swag_diag"] = t.seconds();
  }
  {
    Stopwatch t;
    const std::size_t L = config.baselines.deep_ensemble_members;
    const auto members = deep_ensemble_readout(model, splits.train.cases, L, seed, config.ridge, config.baselines.bootstrap);
    auto draw = [&](const InputCase& c, std::size_t) { return deep_ensemble_predict(members, c); };
    methods.push_back({"deep_ensemble", draw_all(test, draw), draw_all(cal, draw)});
    out.ledger.methods["deep_ensemble"] = {L * n_test, L * n_cal, 0, L};
    timing["deep_ensemble"] = t.seconds();
  }

  auto emit = [&](const std::string& method, const std::string& variant, const std::vector<PredictiveEnsemble>& ens,
                  std::optional<double> tau) {
    MetricReport rep = evaluate_ensembles(ens, y_test, config.levels);
    rep.method = method;
    rep.variant = variant;
    rep.dataset = splits.test.name;
    rep.seed = seed;
    rep.tau = tau;
    const std::string key = method + "_" + variant;
    write_json(out_dir / ("report_" + key + ".json"), report_to_json(rep));
    write_text_file(out_dir / ("pit_" + key + ".csv"), pit_csv(pit(ens, y_test), config.pit_bins));
    write_text_file(out_dir / ("intervals_" + key + ".csv"), intervals_csv(ens, y_test, config.levels));
    write_text_file(out_dir / ("ensemble_" + key + ".csv"), ensemble_csv(ens));
    json side = ensemble_sidecar(ens);
    side["master_seed"] = seed;
    side["variant"] = variant;
    if (tau) side["tau"] = *tau;
    write_json(out_dir / ("ensemble_" + key + ".json"), side);
    out.reports[key] = std::move(rep);
  };

  json temperatures = json::object();
  for (const auto& m : methods) {
    emit(m.method, "native", m.test, std::nullopt);
    const TemperatureScaled scaled = temperature_scale(m.cal, y_cal, m.test, config.temperature);
    emit(m.method, "scaled", scaled.ensembles, scaled.tau);
    temperatures[m.method] = scaled.tau;
  }

  write_json(out_dir / "cost_ledger.json", out.ledger.to_json());
  write_json(out_dir / "evaluation.json", {{"nu", out.nu},
                                           {"master_seed", seed},
                                           {"ensemble_size", M},
                                           {"n_test", n_test},
                                           {"n_cal", n_cal},
                                           {"temperatures", temperatures},
                                           {"reports", [&] {
                                              json keys = json::array();
                                              for (const auto& [k, v] : out.reports) keys.push_back(k);
                                              return keys;
                                            }()}});
  timing["total"] = clock.seconds();
  write_json(out_dir / "timing_evaluate.json", timing);
  write_manifest(out_dir);
  return out;
}

std::vector<SweepRow> cmd_sweep_nu(const RunConfig& config, const fs::path& model_path,
                                   const std::vector<std::int64_t>& nus, const fs::path& out_dir) {
  config.validate();
  if (nus.empty()) throw Error(ErrorCode::InvalidConfig, "sweep needs at least one nu");
  for (auto nu : nus)
    if (nu < 1) throw Error(ErrorCode::InvalidConfig, "sweep nu must be >= 1");
  Stopwatch clock;
  const DataSplits splits = prepare_data(config);
  const ModelBundle model = load_checked_model(model_path, splits);
  const auto y_test = targets_of(splits.test);
  const std::uint64_t seed = config.sa.master_seed;
  CalibrationBatch batch{splits.cal.cases, std::min(config.sa.batch_size, splits.cal.cases.size()), config.sa.passes};
  const std::vector<double> level{config.sweep.coverage_level};

  std::vector<SweepRow> rows;
  for (auto nu_value : nus) {
    const Concentration nu(nu_value);
    SweepRow row;
    row.nu = nu_value;
    const LossEvaluation ev = eval_loss_detailed(model, batch, nu, seed, seed);
    row.loss = ev.record.loss_estimate;
    const double n = static_cast<double>(ev.case_losses.size());
    double ss = 0.0;
    for (double l : ev.case_losses) ss += (l - row.loss) * (l - row.loss);
    row.loss_stderr = n > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;

    const auto ens = draw_all(splits.test.cases, [&](const InputCase& c, std::size_t i) {
      return draw_ensemble(model, c, nu, config.sa.ensemble_size, derive_key(seed, {stream_tag::kEnsemble, 1, i}));
    });
    const MetricReport rep = evaluate_ensembles(ens, y_test, level);
    row.w1 = rep.pit_w1;
    row.coverage = rep.coverage.begin()->second;
    row.crps = rep.crps;
    row.energy = rep.energy_score;
    rows.push_back(row);
  }

  std::string csv = "nu,loss,loss_stderr,w1,coverage,crps,energy\n";
  for (const auto& r : rows) {
    csv += fmt::format("{},{},{},{},{},{},{}\n", r.nu, format_real(r.loss), format_real(r.loss_stderr),
                       format_real(r.w1), format_real(r.coverage), format_real(r.crps), format_real(r.energy));
  }
  write_text_file(out_dir / "sweep.csv", csv);
  write_json(out_dir / "timing_sweep.json", {{"seconds", clock.seconds()}});
  write_manifest(out_dir);
  return rows;
}

void cmd_report(const RunConfig& config, const fs::path& run_dir, const fs::path& out_dir) {
  config.validate();
  const auto history = history_from_jsonl(read_text_file(run_dir / "history.jsonl"));
  if (history.empty()) throw Error(ErrorCode::Io, "history.jsonl is empty");

  double best = std::numeric_limits<double>::infinity();
  for (const auto& h : history) best = std::min(best, h.loss_estimate);
  std::string curve = "iteration,nu,loss,normalized_loss,best_normalized_so_far\n";
  double running = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < history.size(); ++k) {
    const auto& h = history[k];
    running = std::min(running, h.loss_estimate);
    curve += fmt::format("{},{},{},{},{}\n", k, h.nu, format_real(h.loss_estimate), format_real(h.loss_estimate / best),
                         format_real(running / best));
  }
  write_text_file(out_dir / "loss_curve.csv", curve);

  // Surrogate at the posterior mean over the domain. A single distinct nu
  // leaves the surrogate undefined, so only the observed columns are written.
  std::optional<SurrogatePosterior> post;
  try {
    post = fit_surrogate(history);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateDesign) throw;
  }
  const double s0 = history.front().target_scale;
  std::map<std::int64_t, CalibrationRecord> observed;
  for (const auto& h : history) observed.emplace(h.nu, h);

  const auto& dom = config.sa.domain;
  std::vector<std::int64_t> grid;
  if (dom.size() <= 1024) {
    for (auto nu = dom.nu_min; nu <= dom.nu_max; ++nu) grid.push_back(nu);
  } else {
    const double lo = std::log(static_cast<double>(dom.nu_min)), hi = std::log(static_cast<double>(dom.nu_max));
    for (int i = 0; i < 512; ++i) {
      const auto nu = static_cast<std::int64_t>(std::llround(std::exp(lo + (hi - lo) * i / 511.0)));
      if (grid.empty() || grid.back() != nu) grid.push_back(nu);
    }
  }
  double eps2 = 0.0;
  if (post) eps2 = post->noise_shape > 1.0 ? post->noise_mean() : post->noise_scale / (post->noise_shape + 1.0);

  std::string land = "nu,predicted_scale,surrogate_objective,observed_scale,observed_loss\n";
  for (auto nu : grid) {
    std::string pred, obj, os, ol;
    if (post) {
      const double a = post->coef_mean[0], ln_b = post->coef_mean[1];
      pred = format_real(std::exp(ln_b + a * std::log(static_cast<double>(nu))));
      obj = format_real(surrogate_objective(static_cast<double>(nu), a, ln_b, eps2, s0));
    }
    if (auto it = observed.find(nu); it != observed.end()) {
      os = format_real(it->second.scale_estimate);
      ol = format_real(it->second.loss_estimate);
    }
    land += fmt::format("{},{},{},{},{}\n", nu, pred, obj, os, ol);
  }
  write_text_file(out_dir / "landscape.csv", land);
  write_manifest(out_dir);
}

}  // namespace sattn

// SPDX-License-Identifier: Apache-2.0
//
// End-to-end commands behind the sattn executable. Each command reads a run
// config, writes its artifacts into one output directory and refreshes the
// directory manifest (file name -> SHA-256). Wall-clock timings go to
// timing_<command>.json, which the manifest deliberately leaves out so the
// hashed artifacts stay byte-identical across reruns.
#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sattn/backbone.hpp"
#include "sattn/baselines.hpp"
#include "sattn/bayesopt.hpp"
#include "sattn/data.hpp"
#include "sattn/error.hpp"
#include "sattn/metrics.hpp"

namespace sattn {

struct DatasetConfig {
  std::string kind = "sinusoid";  // "sinusoid" or "csv"
  SinusoidSpec sinusoid;
  std::string csv_path;
  std::string target_column;
  std::vector<std::string> feature_columns;  // empty: every non-target column
  std::optional<bool> standardize;           // default: on for csv, off for sinusoid
};

struct StochasticAttentionConfig {
  SearchDomain domain{1, 128};
  std::size_t batch_size = 200;  // B, capped by the calibration split size
  std::size_t passes = 20;       // M per calibration case
  std::size_t budget = 20;       // K
  std::size_t ensemble_size = 100;
  std::vector<int> layers;  // empty: every layer
  std::uint64_t master_seed = 1;
};

struct BaselineConfig {
  DropoutSpec dropout;
  SwagSchedule swag;
  std::vector<double> swag_scales{1.0};
  std::size_t deep_ensemble_members = 10;
  bool bootstrap = true;
};

struct SweepConfig {
  std::vector<std::int64_t> nus{1, 2, 4, 8, 16, 32, 64, 128};
  double coverage_level = 0.95;
};

struct RunConfig {
  DatasetConfig dataset;
  SplitSpec split;
  EncoderConfig encoder;
  double ridge = 1.0;
  StochasticAttentionConfig sa;
  BaselineConfig baselines;
  std::vector<double> levels{0.5, 0.8, 0.9, 0.95};
  std::size_t pit_bins = 20;
  TemperatureOptions temperature;
  SweepConfig sweep;
  std::string output_dir = "runs/default";

  /// Throws InvalidConfig, including for a csv path that does not exist.
  void validate() const;
};

/// Missing fields keep their defaults; unknown fields throw InvalidConfig.
RunConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const RunConfig& config);
/// Parse and validate. Throws InvalidConfig, also for a missing file or
/// malformed JSON.
RunConfig load_config(const std::filesystem::path& path);

/// Dataset generation or ingestion followed by the configured split.
DataSplits prepare_data(const RunConfig& config);

/// Per-method accounting. Forward passes are counted per scalar prediction.
struct MethodCost {
  std::size_t evaluation_passes = 0;   // test split
  std::size_t calibration_passes = 0;  // BO or temperature fitting on the calibration split
  std::size_t reference_passes = 0;    // deterministic passes spent on residuals
  std::size_t training_steps = 0;      // SGD steps or readout refits
  std::size_t total_passes() const { return evaluation_passes + calibration_passes; }
};

struct CostLedger {
  std::map<std::string, MethodCost> methods;
  std::size_t shared_readout_fits = 1;
  nlohmann::json to_json() const;
};

struct FitOutcome {
  ModelBundle model;
  PointAccuracy test_accuracy;
  std::filesystem::path model_path;
};

struct CalibrateOutcome {
  CalibrationResult result;
  std::filesystem::path summary_path;
};

struct EvaluateOptions {
  std::optional<std::int64_t> nu;                      // explicit nu
  std::optional<std::filesystem::path> calibration;  // calibration.json from cmd_calibrate
};

struct EvaluateOutcome {
  std::int64_t nu = 1;
  std::map<std::string, MetricReport> reports;  // key: <method>_<variant>
  CostLedger ledger;
};

struct SweepRow {
  std::int64_t nu = 1;
  double loss = 0.0;
  double loss_stderr = 0.0;
  double w1 = 0.0;
  double coverage = 0.0;
  double crps = 0.0;
  double energy = 0.0;
};

FitOutcome cmd_fit(const RunConfig& config, const std::filesystem::path& out_dir);
CalibrateOutcome cmd_calibrate(const RunConfig& config, const std::filesystem::path& model_path,
                               const std::filesystem::path& out_dir);
EvaluateOutcome cmd_evaluate(const RunConfig& config, const std::filesystem::path& model_path,
                             const EvaluateOptions& options, const std::filesystem::path& out_dir);
std::vector<SweepRow> cmd_sweep_nu(const RunConfig& config, const std::filesystem::path& model_path,
                                   const std::vector<std::int64_t>& nus, const std::filesystem::path& out_dir);
/// Plot tables from a calibration run directory (history.jsonl, trace.jsonl):
/// landscape.csv (surrogate at the posterior mean over the domain) and
/// loss_curve.csv (evaluated nu, loss, loss / min loss).
void cmd_report(const RunConfig& config, const std::filesystem::path& run_dir, const std::filesystem::path& out_dir);

/// Rewrites out_dir/manifest.json from the current directory contents
/// (timing files and the manifest itself excluded).
void write_manifest(const std::filesystem::path& out_dir);

/// Process exit code for an exception escaping a command: 2 config, 3
/// numerical, 4 I/O.
int exit_code_for(const Error& error);

}  // namespace sattn

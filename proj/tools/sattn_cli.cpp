// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sattn/error.hpp"
#include "sattn/parallel.hpp"
#include "sattn/pipeline.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Stochastic attention calibration and evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string model_path;
  std::optional<std::int64_t> nu;
  std::string calibration_path;
  std::vector<std::int64_t> nus;
  std::string run_dir;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Run config (JSON)")->required();
    cmd->add_option("--out", out_dir, "Output directory (default: output_dir from the config)");
    cmd->add_option("--seed", seed, "Override sa.master_seed");
    cmd->add_option("--threads", threads, "Worker threads (default: SATTN_THREADS or 1)");
  };
  auto with_model = [&](CLI::App* cmd) {
    cmd->add_option("--model", model_path, "Model file (default: <out>/model.json)");
  };

  auto* fit = app.add_subcommand("fit", "Build the frozen encoder and fit the readout");
  common(fit);
  auto* calibrate = app.add_subcommand("calibrate", "Select nu by Bayesian optimization");
  common(calibrate);
  with_model(calibrate);
  auto* evaluate = app.add_subcommand("evaluate", "Draw ensembles for every method and score them");
  common(evaluate);
  with_model(evaluate);
  auto* nu_opt = evaluate->add_option("--nu", nu, "Concentration to evaluate");
  evaluate->add_option("--calibration", calibration_path, "calibration.json from a calibrate run")->excludes(nu_opt);
  auto* sweep = app.add_subcommand("sweep-nu", "Loss and scores over a list of nu");
  common(sweep);
  with_model(sweep);
  sweep->add_option("--nus", nus, "nu values, comma separated (default: sweep.nus from the config)")->delimiter(',');
  auto* report = app.add_subcommand("report", "Plot tables from a calibration run");
  common(report);
  report->add_option("--run", run_dir, "Directory holding history.jsonl (default: <out>)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    sattn::RunConfig config = sattn::load_config(config_path);
    if (seed) config.sa.master_seed = *seed;
    if (threads) sattn::set_thread_count(*threads);
    const fs::path out = out_dir.empty() ? fs::path(config.output_dir) : fs::path(out_dir);
    const fs::path model = model_path.empty() ? out / "model.json" : fs::path(model_path);

    if (fit->parsed()) {
      const auto r = sattn::cmd_fit(config, out);
      std::printf("model %s  test rmse %.6g  mae %.6g\n", r.model_path.c_str(), r.test_accuracy.rmse,
                  r.test_accuracy.mae);
    } else if (calibrate->parsed()) {
      const auto r = sattn::cmd_calibrate(config, model, out);
      std::printf("nu* %lld  s0 %.6g  passes %zu\n", static_cast<long long>(r.result.nu_star), r.result.s0,
                  r.result.stochastic_passes);
    } else if (evaluate->parsed()) {
      sattn::EvaluateOptions opts;
      opts.nu = nu;
      if (!calibration_path.empty()) opts.calibration = calibration_path;
      if (!opts.nu && !opts.calibration) opts.calibration = out / "calibration.json";
      const auto r = sattn::cmd_evaluate(config, model, opts, out);
      std::printf("%-28s %10s %10s %10s\n", "report", "pit_w1", "crps", "rmse");
      for (const auto& [key, rep] : r.reports)
        std::printf("%-28s %10.5f %10.5f %10.5f\n", key.c_str(), rep.pit_w1, rep.crps, rep.rmse);
    } else if (sweep->parsed()) {
      const auto rows = sattn::cmd_sweep_nu(config, model, nus.empty() ? config.sweep.nus : nus, out);
      for (const auto& r : rows)
        std::printf("nu %6lld  loss %.6g  w1 %.5f  crps %.5f\n", static_cast<long long>(r.nu), r.loss, r.w1, r.crps);
    } else if (report->parsed()) {
      sattn::cmd_report(config, run_dir.empty() ? out : fs::path(run_dir), out);
    }
  } catch (const sattn::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return sattn::exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error [io]: %s\n", e.what());
    return 4;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error [io]: %s\n", e.what());
    return 4;
  }
  return 0;
}

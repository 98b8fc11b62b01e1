// petkit/cli.hpp
//
// Copyright 2026 the petkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.

#ifndef PETKIT_CLI_HPP
#define PETKIT_CLI_HPP

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "petkit/config.hpp"
#include "petkit/gradcheck.hpp"
#include "petkit/runio.hpp"

namespace petkit {

// Exit codes: 0 success, 1 check or training failure, 2 configuration error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

namespace cli_detail {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;                  // overrides config out_dir when set
  std::optional<std::uint64_t> seed;    // overrides [train] seed when set
};

inline RunConfigFile load(const CommonArgs& args) {
  RunConfigFile config = parse_run_config(args.config_path);
  if (!args.out_dir.empty()) config.out_dir = args.out_dir;
  if (args.seed) config.spec.train.seed = *args.seed;
  return config;
}

inline int cmd_params(const CommonArgs& args, const std::string& convention_flag) {
  const RunConfigFile config = load(args);
  std::vector<Convention> conventions;
  if (convention_flag.empty())
    conventions = {Convention::WeightsOnly, Convention::AllParams};
  else
    conventions = {convention_from_name(convention_flag)};

  std::vector<ParamReport> reports;
  std::string human;
  for (Convention conv : conventions) {
    reports.push_back(count_params(config.spec.backbone, config.spec.strategy, conv,
                                   config.spec.task.n_classes));
    human += render_report_table(reports.back()) + "\n";
  }
  std::cout << human;

  const fs::path dir = make_run_dir(config.out_dir, "params");
  write_text_file(dir / "report.txt", human);
  for (std::size_t i = 0; i < reports.size(); ++i)
    write_text_file(dir / ("report-" + convention_name(conventions[i]) + ".csv"),
                    render_report_csv(reports[i]));
  std::cout << "wrote " << dir.string() << "\n";
  return kExitOk;
}

inline int cmd_gradcheck(const CommonArgs& args, double eps, double tolerance) {
  RunConfigFile config = load(args);
  // Verification is 64-bit regardless of the configured mode.
  auto tm = make_task_model<double>(config.spec);

  // Check at a generic point: nudge every trainable entry off the exact
  // near-identity init, where several gradients are identically zero.
  const std::uint64_t seed = config.spec.train.seed;
  Rng nudge(mix_seed(seed, 0x6C));
  auto params = tm.trainable_params();
  for (auto* p : params)
    for (auto& v : p->data) v += 0.05 * nudge.gaussian();

  Rng wave_rng(mix_seed(seed, 0x3A));
  const auto wave = Tensor<double>::gaussian(
      {1, config.spec.task.wave_length}, wave_rng, 1.0, "wave");
  const int label = static_cast<int>(seed % config.spec.task.n_classes);

  const auto result = grad_check(
      [&](Graph<double>& g) {
        return g.softmax_cross_entropy(tm.logits(g, g.input(wave)), label);
      },
      params, eps);

  std::cout << "gradcheck: " << params.size() << " tensors, max relative error "
            << result.max_rel_error << " at " << result.worst_param << " (analytic "
            << result.worst_analytic << ", numeric " << result.worst_numeric << ")\n";
  if (result.max_rel_error < tolerance) {
    std::cout << "gradcheck: PASS (tolerance " << tolerance << ")\n";
    return kExitOk;
  }
  std::cout << "gradcheck: FAIL (tolerance " << tolerance << ")\n";
  return kExitFailure;
}

template <typename Real>
int cmd_train_impl(const RunConfigFile& config) {
  const auto data = gen_synthetic_dataset<Real>(config.spec.task);
  const auto result = lr_grid_search<Real>(config.spec, data);

  const fs::path dir = make_run_dir(config.out_dir, "train-" + config.spec.strategy.name());
  write_text_file(dir / "records.jsonl", records_to_jsonl(result.all));
  write_text_file(dir / "summary.csv", records_to_csv(result.all));
  nlohmann::json best = record_to_json(result.best);
  write_text_file(dir / "best.json", best.dump(2) + "\n");
  double wall = 0;
  for (const auto& r : result.all) wall += r.wall_ms;
  write_text_file(dir / "timing.txt", "total_train_ms " + std::to_string(wall) + "\n");

  std::cout << "best lr " << result.best.lr << ": val " << result.best.val_accuracy
            << ", test " << result.best.test_accuracy << " (trainable "
            << result.best.trainable_total << ")\n"
            << "wrote " << dir.string() << "\n";
  return kExitOk;
}

template <typename Real>
int cmd_sweep_impl(const RunConfigFile& config) {
  std::vector<PetStrategy> strategies;
  for (const auto& name : config.sweep_strategies)
    strategies.push_back(sweep_strategy_from_name(config, name));
  const auto result = low_resource_sweep<Real>(config.spec, strategies,
                                               config.sweep_fractions, config.sweep_seeds);

  const fs::path dir = make_run_dir(config.out_dir, "sweep");
  write_text_file(dir / "cells.jsonl", sweep_cells_to_jsonl(result.cells));
  write_text_file(dir / "sweep_summary.csv", sweep_summary_to_csv(result.summary));
  std::vector<RunRecord> records;
  for (const auto& c : result.cells) records.push_back(c.best);
  write_text_file(dir / "records.jsonl", records_to_jsonl(records));
  std::cout << result.cells.size() << " cells\n" << sweep_summary_to_csv(result.summary)
            << "wrote " << dir.string() << "\n";
  return kExitOk;
}

inline int cmd_report(const std::string& run_dir) {
  if (run_dir.empty()) throw ConfigError("report: --out directory required");
  if (!fs::exists(run_dir)) throw ConfigError("report: no such directory '" + run_dir + "'");
  std::vector<RunRecord> records;
  for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
    if (!entry.is_regular_file() || entry.path().filename() != "records.jsonl") continue;
    const auto batch = read_records_jsonl(entry.path());
    records.insert(records.end(), batch.begin(), batch.end());
  }
  if (records.empty())
    throw ConfigError("report: no records.jsonl found under '" + run_dir + "'");

  const std::string consolidated = records_to_csv(records);
  const std::string tradeoff = accuracy_vs_params_csv(records);
  const fs::path dir = make_run_dir(run_dir, "report");
  write_text_file(dir / "consolidated.csv", consolidated);
  write_text_file(dir / "accuracy_vs_params.csv", tradeoff);
  std::cout << tradeoff << "wrote " << dir.string() << "\n";
  return kExitOk;
}

}  // namespace cli_detail

// Entry point shared by the binary and the CLI tests.
inline int run_cli(int argc, const char* const* argv) {
  using namespace cli_detail;
  CLI::App app{
      "petkit: parameter-efficient tuning on a frozen conv+transformer backbone.\n"
      "Config file sections and defaults: top-level (mode = train-32bit, out_dir = runs),\n"
      "[backbone] (preset = mini | hubert-base-shape, or conv_blocks/n_layers/hidden/\n"
      "n_heads/ff_dim, seed = 7), [strategy] (kind = frozen | fine_tune | weighted_sum |\n"
      "houlsby | cnn_adapter | chapter, cnn.top_n = all, cnn.compression = 1,\n"
      "cnn.alpha = 1.0, houlsby.bottleneck = 32, houlsby.placement = after-second-ff,\n"
      "weighted_sum.include_conv_tap = false, seed = 8), [task] (n_classes = 10,\n"
      "samples_per_class = 100, wave_length = 800, snr_db = 20, seed = 1), [train]\n"
      "(lr_grid = 1e-3,1e-4,1e-5, epochs = 50, batch_size = 8, optimizer = adam | sgd,\n"
      "seed = 1, subset_fraction = 1.0, head_seed = 9), [sweep] (strategies =\n"
      "fine_tune,chapter, fractions = 1.0,0.5,0.25,0.1, seeds = 1,2,3)."};
  app.require_subcommand(1);

  CommonArgs common;
  std::string convention_flag;
  double eps = 1e-5;
  double tolerance = 1e-4;

  auto add_common = [&](CLI::App* cmd, bool needs_config) {
    auto* opt = cmd->add_option("--config", common.config_path, "run configuration file");
    if (needs_config) opt->required();
    cmd->add_option("--out", common.out_dir, "output directory (overrides config out_dir)");
    cmd->add_option("--seed", common.seed, "override the [train] seed");
  };

  auto* params = app.add_subcommand("params", "emit exact trainable-parameter reports");
  add_common(params, true);
  params->add_option("--convention", convention_flag,
                     "weights-only | all-params (default: both)");

  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference check of every trainable gradient");
  add_common(gradcheck, true);
  gradcheck->add_option("--eps", eps, "central-difference step (default 1e-5)");
  gradcheck->add_option("--tolerance", tolerance, "max relative error allowed (default 1e-4)");

  auto* train = app.add_subcommand("train", "learning-rate grid search on the synthetic task");
  add_common(train, true);

  auto* sweep = app.add_subcommand("sweep", "low-resource sweep over strategies x fractions");
  add_common(sweep, true);

  auto* report = app.add_subcommand("report", "consolidate run records under --out");
  add_common(report, false);

  try {
    app.parse(argc, argv);
    if (params->parsed()) return cmd_params(common, convention_flag);
    if (gradcheck->parsed()) return cmd_gradcheck(common, eps, tolerance);
    if (train->parsed() || sweep->parsed()) {
      const RunConfigFile config = load(common);
      const bool is_train = train->parsed();
      if (config.mode == Mode::Verify64)
        return is_train ? cmd_train_impl<double>(config) : cmd_sweep_impl<double>(config);
      return is_train ? cmd_train_impl<float>(config) : cmd_sweep_impl<float>(config);
    }
    if (report->parsed()) return cmd_report(common.out_dir);
    return kExitConfig;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace petkit

#endif  // PETKIT_CLI_HPP

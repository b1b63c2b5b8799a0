// podd: poster dataset distillation command line.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include <exception>
#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "podd/error.hpp"

int main(int argc, char** argv) {
  using podd::cli::Options;
  CLI::App app{"Poster dataset distillation"};
  app.require_subcommand(1);
  Options opt;

  auto common = [&opt](CLI::App* cmd) {
    cmd->add_option("-c,--config", opt.config, "Run configuration JSON")->required()->check(CLI::ExistingFile);
    cmd->add_option("--set", opt.overrides, "Override a config key, e.g. distill.seed=3");
  };
  auto run_dir = [&opt](CLI::App* cmd) {
    cmd->add_option("--run-dir", opt.run_dir, "Run directory (default: $PODD_RUN_ROOT or output_dir, then <hash>-<time>)");
  };

  auto* info = app.add_subcommand("info", "Validate the config and print the derived geometry");
  common(info);

  auto* order = app.add_subcommand("order", "Place classes on the class grid from embeddings");
  common(order);
  run_dir(order);
  order->add_option("--random-orders", opt.random_orders, "Also score this many seeded random orders")
      ->check(CLI::NonNegativeNumber);
  order->add_option("-o,--out", opt.out, "Write the order JSON here instead of the run directory");

  auto* distill = app.add_subcommand("distill", "Distill the training set into a poster");
  common(distill);
  run_dir(distill);
  distill->add_flag("--resume", opt.resume, "Continue from state.bin in --run-dir");

  auto* eval = app.add_subcommand("eval", "Train fresh models on a poster and report test accuracy");
  common(eval);
  run_dir(eval);
  eval->add_option("--poster", opt.poster_path, "PODD1 file (default: <run-dir>/poster.podd)");
  eval->add_option("--labels", opt.labels_path, "PODL1 file (default: <run-dir>/labels.podl)");
  eval->add_option("--models", opt.models, "Number of evaluation models")->check(CLI::PositiveNumber);
  eval->add_option("--baseline", opt.baselines, "Extra rows: noise, coreset, full")
      ->check(CLI::IsMember({"noise", "coreset", "full"}));
  eval->add_option("--curve-every", opt.curve_every, "Record test accuracy every N training steps")
      ->check(CLI::NonNegativeNumber);

  auto* sweep = app.add_subcommand("sweep-patches", "Distill and evaluate once per patch grid");
  common(sweep);
  run_dir(sweep);
  sweep->add_option("--grids", opt.grids, "Comma-separated patch grids as COLSxROWS, e.g. 2x2,4x2")->required();

  auto* exp = app.add_subcommand("export-png", "Write a poster preview and per-patch labels");
  common(exp);
  run_dir(exp);
  exp->add_option("--poster", opt.poster_path, "PODD1 file (default: <run-dir>/poster.podd)");
  exp->add_option("--labels", opt.labels_path, "PODL1 file (default: <run-dir>/labels.podl)");
  exp->add_option("-o,--out", opt.out, "PNG path (default: <run-dir>/poster.png)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (info->parsed()) return podd::cli::cmd_info(opt);
    if (order->parsed()) return podd::cli::cmd_order(opt);
    if (distill->parsed()) return podd::cli::cmd_distill(opt);
    if (eval->parsed()) return podd::cli::cmd_eval(opt);
    if (sweep->parsed()) return podd::cli::cmd_sweep_patches(opt);
    if (exp->parsed()) return podd::cli::cmd_export_png(opt);
  } catch (const podd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const podd::RuntimeFailure& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return 3;
  }
  return 2;
}

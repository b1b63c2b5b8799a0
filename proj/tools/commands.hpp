#pragma once

#include <string>
#include <vector>

namespace podd::cli {

struct Options {
  std::string config;
  std::vector<std::string> overrides;  // --set key=value
  std::string run_dir;
  bool resume = false;
  int random_orders = 0;
  int models = 0;  // 0: take eval.n_models from the config
  std::vector<std::string> baselines;
  int curve_every = -1;  // -1: take eval.curve_every from the config
  std::string grids;
  std::string poster_path;
  std::string labels_path;
  std::string out;
};

int cmd_info(const Options& opt);
int cmd_order(const Options& opt);
int cmd_distill(const Options& opt);
int cmd_eval(const Options& opt);
int cmd_sweep_patches(const Options& opt);
int cmd_export_png(const Options& opt);

}  // namespace podd::cli

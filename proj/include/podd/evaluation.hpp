#pragma once

// Downstream evaluation: train freshly seeded ConvNets on a (soft-labeled)
// training set and report test accuracy statistics; plus the comparison
// baselines (random real-image coreset, unoptimized noise poster).

#include <cstdint>
#include <utility>
#include <vector>

#include "podd/data.hpp"
#include "podd/distill.hpp"
#include "podd/model.hpp"

namespace podd {

struct EvalConfig {
  int n_models = 8;
  int train_steps = 300;
  double lr = 0.01;
  int batch_size = 0;  // 0: full batch
  std::uint64_t seed = 0;
  /// Early stop once the mean training loss over a window of this many steps
  /// improves on the previous window by less than plateau_tol (relative).
  int plateau_window = 50;
  double plateau_tol = 1e-4;
  /// Record test accuracy every this many steps (0: off).
  int curve_every = 0;
  ConvNetSpec model;

  void validate() const;
};

/// Soft-labeled training data, labels count × n.
struct TrainingSet {
  ImageBatch images;
  std::vector<double> labels;
};

struct ModelResult {
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  int steps = 0;
  std::vector<std::pair<int, double>> curve;  // (step, test accuracy)
};

struct EvalReport {
  std::vector<ModelResult> models;  // sorted by seed
  double mean = 0.0;
  double std = 0.0;  // unbiased; 0 for a single model
};

/// Seed of evaluation slot i; slots are independent of n_models.
std::uint64_t eval_model_seed(std::uint64_t seed, int slot);

ModelResult train_and_test(const TrainingSet& train, const LabeledDataset& test, const EvalConfig& config,
                           std::uint64_t model_seed);

EvalReport summarize(std::vector<ModelResult> models);

EvalReport evaluate_training_set(const TrainingSet& train, const LabeledDataset& test, const EvalConfig& config);

/// Expands the poster with the labels of `mode` and evaluates the patches.
EvalReport evaluate_poster(const Poster& poster, const LabelTensor& labels, const PosterGeometry& geom, LabelMode mode,
                           const LabeledDataset& test, const EvalConfig& config);

TrainingSet hard_label_set(const LabeledDataset& dataset);

/// floor(budget_pixels / (h·w)) real images, spread over classes as evenly
/// as divisibility allows (the classes receiving a remainder image are drawn
/// at random). Throws ConfigError if the budget is below one image.
LabeledDataset baseline_random_coreset(const LabeledDataset& dataset, std::int64_t budget_pixels, std::uint64_t seed);

/// Unoptimized control: a Gaussian poster with fixed labels from the class
/// order, i.e. distillation at step 0.
std::pair<Poster, std::vector<double>> baseline_noise_poster(const PosterGeometry& geom, std::uint64_t seed);

}  // namespace podd

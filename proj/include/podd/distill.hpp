#pragma once

// Bilevel poster distillation. Each outer step trains a freshly initialized
// ConvNet on patches of the poster for a random number of SGD steps and
// backpropagates the real-data loss through the last delta_T of them into the
// poster pixels and the label tensor.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "podd/data.hpp"
#include "podd/labeling.hpp"
#include "podd/model.hpp"
#include "podd/ordering.hpp"
#include "podd/poster.hpp"
#include "podd/rng.hpp"

namespace podd {

enum class LabelMode { kFixed, kLearned };
enum class OuterOptimizer { kAdam, kSgd };

struct DistillConfig {
  int T = 40;         // longest unroll
  int delta_T = 10;   // steps backpropagated through
  int bs_d = 8;       // patches per inner step
  int bs = 256;       // real images per outer step
  double outer_lr = 0.001;
  double inner_lr = 0.01;
  int epochs = 1;     // passes over the real training set
  int max_outer_steps = 0;  // 0: no cap
  std::uint64_t seed = 0;
  double ipc = 1.0;
  GridShape class_grid;
  GridShape patch_grid;
  LabelMode label_mode = LabelMode::kLearned;
  OuterOptimizer optimizer = OuterOptimizer::kAdam;
  ConvNetSpec model;
  int checkpoint_every = 100;

  /// Scalar checks that do not need the poster geometry.
  void validate() const;
};

/// Everything derived from (meta, ipc, grids, class order) before any compute.
struct PosterGeometry {
  DatasetMeta meta;
  PosterDims dims;
  ExtractionSpec spec;
  ClassOrder order;
};

/// Validates the config against the dataset and returns the geometry; throws
/// ConfigError on o_rows·o_cols ≠ n, bs_d > p, delta_T > T, undersized
/// budgets and invalid patch grids.
PosterGeometry make_geometry(const DatasetMeta& meta, const DistillConfig& config, const ClassOrder& order);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;
};

/// In-place Adam (β1 0.9, β2 0.999, ε 1e-8) or plain SGD update.
void outer_update(OuterOptimizer opt, std::vector<double>& x, std::span<const double> grad, AdamState& state,
                  double lr);

struct DistillState {
  Poster poster;
  LabelTensor labels;  // stays at its one-hot initialization in fixed mode
  std::int64_t step = 0;
  AdamState poster_opt;
  AdamState label_opt;
  std::vector<double> loss_history;  // most recent outer losses
};

DistillState init_distill_state(const PosterGeometry& geom, const DistillConfig& config);

/// Patches in row-major grid order with their soft labels (p × n).
struct ExpandedDataset {
  ImageBatch patches;
  std::vector<double> labels;
};
ExpandedDataset expand(const Poster& poster, const LabelTensor& labels, const PosterGeometry& geom, LabelMode mode);

/// Uniform over {delta_T, ..., T}.
int sample_unroll_length(Rng& rng, int delta_T, int T);

/// Random choices of one outer step.
struct UnrollSchedule {
  int t_end = 0;
  std::uint64_t model_seed = 0;
  std::vector<std::vector<int>> batches;  // patch indices per inner step
};

/// Deterministic in (seed, step): unroll length, model seed, and bs_d
/// patches drawn without replacement for every inner step.
UnrollSchedule make_schedule(std::uint64_t seed, std::int64_t step, int patch_count, const DistillConfig& config);

struct OuterGradient {
  double loss = 0.0;
  Poster poster_grad;
  LabelTensor label_grad;        // zero in fixed mode
  ImageBatch patch_grads;        // before overlap-add
  std::vector<double> patch_label_grads;  // p × n, before pooling
};

/// Real-data loss after the unroll and its gradient w.r.t. poster and label
/// tensor, backpropagated through the last `delta_T` inner steps only.
OuterGradient compute_outer_gradient(const Poster& poster, const LabelTensor& labels, const PosterGeometry& geom,
                                     LabelMode mode, const ConvNetSpec& model, double inner_lr, int delta_T,
                                     const UnrollSchedule& schedule, const ImageBatch& real_images,
                                     std::span<const int> real_labels);

/// Forward-only version of the same objective.
double unrolled_outer_loss(const Poster& poster, const LabelTensor& labels, const PosterGeometry& geom,
                           LabelMode mode, const ConvNetSpec& model, double inner_lr, const UnrollSchedule& schedule,
                           const ImageBatch& real_images, std::span<const int> real_labels);

struct OuterStepReport {
  std::int64_t step = 0;
  int t_end = 0;
  std::uint64_t model_seed = 0;
  double outer_loss = 0.0;
  double poster_grad_norm = 0.0;
  double label_grad_norm = 0.0;
};

/// One outer iteration: gradient, optimizer update, label projection,
/// step + 1. Throws RuntimeFailure on a non-finite outer loss.
OuterStepReport outer_step(DistillState& state, const PosterGeometry& geom, const ImageBatch& real_images,
                           std::span<const int> real_labels, const DistillConfig& config);

/// Outer steps the config asks for on a training set of this size.
std::int64_t total_outer_steps(const DistillConfig& config, int train_size);

struct DistillHooks {
  std::function<void(const OuterStepReport&, const DistillState&)> on_step;
  std::function<void(const DistillState&)> on_checkpoint;
};

/// Full loop. Starts from `resume` when given, otherwise from a Gaussian
/// poster and one-hot labels. on_checkpoint fires every checkpoint_every
/// steps and once at exit.
DistillState distill(const LabeledDataset& train, const PosterGeometry& geom, const DistillConfig& config,
                     const DistillHooks& hooks = {}, std::optional<DistillState> resume = std::nullopt);

/// Full-precision resumable state (poster, labels, optimizer moments, step).
std::vector<char> encode_state(const DistillState& state);
DistillState decode_state(std::span<const char> bytes);

/// Per-patch soft labels of the active mode, p × n.
std::vector<double> resolve_labels(const LabelTensor& labels, const PosterGeometry& geom, LabelMode mode);

}  // namespace podd

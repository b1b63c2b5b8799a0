#include "podd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "podd/error.hpp"
#include "podd/io.hpp"

namespace podd {

namespace {

constexpr std::size_t kLossHistory = 16;
constexpr std::string_view kStateMagic{"PODSv1\0\0", 8};

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

InputShape patch_shape(const PosterGeometry& geom) {
  return {geom.spec.patch_h, geom.spec.patch_w, geom.meta.channels};
}

}  // namespace

void DistillConfig::validate() const {
  if (T < 1) throw ConfigError("T must be at least 1");
  if (delta_T < 1 || delta_T > T) throw ConfigError("delta_T must be in [1, T]");
  if (bs_d < 1) throw ConfigError("bs_d must be positive");
  if (bs < 1) throw ConfigError("bs must be positive");
  if (!(outer_lr >= 0.0) || !std::isfinite(outer_lr)) throw ConfigError("outer_lr must be non-negative");
  if (!(inner_lr > 0.0) || !std::isfinite(inner_lr)) throw ConfigError("inner_lr must be positive");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (max_outer_steps < 0) throw ConfigError("max_outer_steps must be non-negative");
  if (!(ipc > 0.0)) throw ConfigError("ipc must be positive");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
}

PosterGeometry make_geometry(const DatasetMeta& meta, const DistillConfig& config, const ClassOrder& order) {
  meta.validate();
  config.validate();
  if (order.shape != config.class_grid) throw ConfigError("class order grid differs from the configured class grid");
  order.validate();
  if (order.n() != meta.n_classes) {
    throw ConfigError("class grid holds " + std::to_string(order.n()) + " classes but the dataset has " +
                      std::to_string(meta.n_classes));
  }
  PosterGeometry g;
  g.meta = meta;
  g.order = order;
  g.dims = compute_poster_dims(meta, config.ipc, config.class_grid);
  g.spec = make_extraction_spec(g.dims.height, g.dims.width, meta.image_h, meta.image_w, config.patch_grid.rows,
                                config.patch_grid.cols);
  if (config.bs_d > g.spec.count()) {
    throw ConfigError("bs_d = " + std::to_string(config.bs_d) + " exceeds the " + std::to_string(g.spec.count()) +
                      " patches of the grid");
  }
  if (g.dims.height < config.class_grid.rows || g.dims.width < config.class_grid.cols) {
    throw ConfigError("poster is smaller than the class grid");
  }
  // Builds the layout; rejects inputs that the pooling stack cannot divide.
  ConvNet(config.model, patch_shape(g), meta.n_classes);
  return g;
}

void outer_update(OuterOptimizer opt, std::vector<double>& x, std::span<const double> grad, AdamState& state,
                  double lr) {
  if (opt == OuterOptimizer::kSgd) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lr * grad[i];
    return;
  }
  constexpr double b1 = 0.9;
  constexpr double b2 = 0.999;
  constexpr double eps = 1e-8;
  if (state.m.size() != x.size()) {
    state.m.assign(x.size(), 0.0);
    state.v.assign(x.size(), 0.0);
    state.t = 0;
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < x.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
    x[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + eps);
  }
}

DistillState init_distill_state(const PosterGeometry& geom, const DistillConfig& config) {
  DistillState s;
  s.poster = init_poster(geom.dims.height, geom.dims.width, geom.meta.channels, config.seed);
  s.labels = init_label_tensor(geom.order, geom.meta.n_classes);
  return s;
}

std::vector<double> resolve_labels(const LabelTensor& labels, const PosterGeometry& geom, LabelMode mode) {
  return mode == LabelMode::kFixed ? fixed_labels_for(geom.order, geom.spec) : learned_labels_for(labels, geom.spec);
}

ExpandedDataset expand(const Poster& poster, const LabelTensor& labels, const PosterGeometry& geom, LabelMode mode) {
  return {extract_patches(poster, geom.spec), resolve_labels(labels, geom, mode)};
}

int sample_unroll_length(Rng& rng, int delta_T, int T) {
  std::uniform_int_distribution<int> dist(delta_T, T);
  return dist(rng);
}

UnrollSchedule make_schedule(std::uint64_t seed, std::int64_t step, int patch_count, const DistillConfig& config) {
  Rng rng(derive_seed(seed, {tag(SeedTag::kUnroll), static_cast<std::uint64_t>(step)}));
  UnrollSchedule s;
  s.t_end = sample_unroll_length(rng, config.delta_T, config.T);
  s.model_seed = derive_seed(seed, {tag(SeedTag::kModelInit), static_cast<std::uint64_t>(step)});
  std::vector<int> idx(patch_count);
  for (int t = 0; t < s.t_end; ++t) {
    std::iota(idx.begin(), idx.end(), 0);
    // Partial Fisher-Yates: the first bs_d entries are a uniform sample.
    for (int i = 0; i < config.bs_d; ++i) {
      std::uniform_int_distribution<int> pick(i, patch_count - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    s.batches.emplace_back(idx.begin(), idx.begin() + config.bs_d);
  }
  return s;
}

namespace {

struct Unroll {
  ConvNet net;
  std::vector<double> params;                    // θ_T
  std::vector<std::vector<double>> saved;        // θ_t for tracked steps
  ExpandedDataset data;
};

void gather_batch(const ExpandedDataset& data, const std::vector<int>& idx, int n, std::vector<double>& images,
                  std::vector<double>& labels) {
  const std::size_t img = data.patches.image_size();
  images.resize(idx.size() * img);
  labels.resize(idx.size() * n);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = data.patches.image(idx[i]);
    std::copy(src.begin(), src.end(), images.begin() + static_cast<std::ptrdiff_t>(i * img));
    std::copy_n(data.labels.begin() + static_cast<std::ptrdiff_t>(idx[i]) * n, n,
                labels.begin() + static_cast<std::ptrdiff_t>(i * n));
  }
}

Unroll run_unroll(const Poster& poster, const LabelTensor& labels, const PosterGeometry& geom, LabelMode mode,
                  const ConvNetSpec& model, double inner_lr, int tracked, const UnrollSchedule& schedule) {
  const int n = geom.meta.n_classes;
  auto init = init_model(model, patch_shape(geom), n, schedule.model_seed);
  Unroll u{std::move(init.net), std::move(init.params), {}, expand(poster, labels, geom, mode)};
  const int first_tracked = schedule.t_end - tracked;
  std::vector<double> images, lbl;
  for (int t = 0; t < schedule.t_end; ++t) {
    const auto& idx = schedule.batches[t];
    gather_batch(u.data, idx, n, images, lbl);
    if (t >= first_tracked) u.saved.push_back(u.params);
    sgd_step_in_place(u.net, u.params, images, lbl, static_cast<int>(idx.size()), inner_lr);
  }
  return u;
}

}  // namespace

double unrolled_outer_loss(const Poster& poster, const LabelTensor& labels, const PosterGeometry& geom,
                           LabelMode mode, const ConvNetSpec& model, double inner_lr, const UnrollSchedule& schedule,
                           const ImageBatch& real_images, std::span<const int> real_labels) {
  const auto u = run_unroll(poster, labels, geom, mode, model, inner_lr, 0, schedule);
  const auto logits = forward(u.net, u.params, real_images.data, real_images.count);
  const int n = geom.meta.n_classes;
  double loss = 0.0;
  for (int s = 0; s < real_images.count; ++s) {
    std::vector<double> y(n, 0.0);
    y[real_labels[s]] = 1.0;
    loss += soft_cross_entropy({logits.data() + static_cast<std::size_t>(s) * n, static_cast<std::size_t>(n)}, y);
  }
  return loss / real_images.count;
}

OuterGradient compute_outer_gradient(const Poster& poster, const LabelTensor& labels, const PosterGeometry& geom,
                                     LabelMode mode, const ConvNetSpec& model, double inner_lr, int delta_T,
                                     const UnrollSchedule& schedule, const ImageBatch& real_images,
                                     std::span<const int> real_labels) {
  if (delta_T < 1 || delta_T > schedule.t_end) throw ConfigError("delta_T must be in [1, t_end]");
  const int n = geom.meta.n_classes;
  auto u = run_unroll(poster, labels, geom, mode, model, inner_lr, delta_T, schedule);

  const auto real_onehot = one_hot(real_labels, n);
  auto outer = loss_and_gradient(u.net, u.params, real_images.data, real_onehot, real_images.count);

  OuterGradient g;
  g.loss = outer.loss;
  const int p = geom.spec.count();
  g.patch_grads = ImageBatch(p, geom.spec.patch_h, geom.spec.patch_w, geom.meta.channels);
  g.patch_label_grads.assign(static_cast<std::size_t>(p) * n, 0.0);
  const std::size_t img = g.patch_grads.image_size();

  // adj holds ∂L_outer/∂θ_{t+1} while walking back over the tracked steps.
  std::vector<double> adj = std::move(outer.params);
  std::vector<double> images, lbl;
  for (int k = delta_T - 1; k >= 0; --k) {
    const int t = schedule.t_end - delta_T + k;
    const auto& idx = schedule.batches[t];
    gather_batch(u.data, idx, n, images, lbl);
    const auto h = inner_loss_hvp(u.net, u.saved[k], adj, images, lbl, static_cast<int>(idx.size()));
    // θ_{t+1} = θ_t − η ∇θ L(θ_t, X_t, Y_t)
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto dst = g.patch_grads.image(idx[i]);
      for (std::size_t q = 0; q < img; ++q) dst[q] -= inner_lr * h.images[i * img + q];
      for (int c = 0; c < n; ++c) g.patch_label_grads[static_cast<std::size_t>(idx[i]) * n + c] -= inner_lr * h.labels[i * n + c];
    }
    for (std::size_t i = 0; i < adj.size(); ++i) adj[i] -= inner_lr * h.params[i];
  }

  g.poster_grad = accumulate_poster_gradient(g.patch_grads, geom.spec);
  g.label_grad = LabelTensor(labels.shape, labels.n);
  if (mode == LabelMode::kLearned) {
    for (int k = 0; k < p; ++k) {
      learned_label_backward(labels, geom.spec.poster_h, geom.spec.poster_w, geom.spec.positions[k],
                             geom.spec.patch_h, geom.spec.patch_w,
                             {g.patch_label_grads.data() + static_cast<std::size_t>(k) * n, static_cast<std::size_t>(n)},
                             g.label_grad);
    }
  }
  return g;
}

OuterStepReport outer_step(DistillState& state, const PosterGeometry& geom, const ImageBatch& real_images,
                           std::span<const int> real_labels, const DistillConfig& config) {
  const auto schedule = make_schedule(config.seed, state.step, geom.spec.count(), config);
  const auto g = compute_outer_gradient(state.poster, state.labels, geom, config.label_mode, config.model,
                                        config.inner_lr, config.delta_T, schedule, real_images, real_labels);
  if (!std::isfinite(g.loss)) {
    std::ostringstream msg;
    msg << "non-finite outer loss at step " << state.step << " (t_end " << schedule.t_end << "); recent losses:";
    for (double l : state.loss_history) msg << " " << l;
    throw RuntimeFailure(msg.str());
  }

  OuterStepReport r;
  r.step = state.step;
  r.t_end = schedule.t_end;
  r.model_seed = schedule.model_seed;
  r.outer_loss = g.loss;
  r.poster_grad_norm = l2_norm(g.poster_grad.pixels);
  r.label_grad_norm = l2_norm(g.label_grad.values);

  outer_update(config.optimizer, state.poster.pixels, g.poster_grad.pixels, state.poster_opt, config.outer_lr);
  if (config.label_mode == LabelMode::kLearned) {
    outer_update(config.optimizer, state.labels.values, g.label_grad.values, state.label_opt, config.outer_lr);
    project_labels_in_place(state.labels);
  }
  state.loss_history.push_back(g.loss);
  if (state.loss_history.size() > kLossHistory) state.loss_history.erase(state.loss_history.begin());
  ++state.step;
  return r;
}

std::int64_t total_outer_steps(const DistillConfig& config, int train_size) {
  const std::int64_t per_epoch = (train_size + config.bs - 1) / config.bs;
  std::int64_t total = per_epoch * config.epochs;
  if (config.max_outer_steps > 0) total = std::min<std::int64_t>(total, config.max_outer_steps);
  return total;
}

DistillState distill(const LabeledDataset& train, const PosterGeometry& geom, const DistillConfig& config,
                     const DistillHooks& hooks, std::optional<DistillState> resume) {
  train.validate();
  if (config.bs > train.size()) throw ConfigError("bs exceeds the training set size");
  DistillState state = resume ? std::move(*resume) : init_distill_state(geom, config);
  if (state.poster.dims() != geom.dims || state.labels.shape != geom.order.shape) {
    throw ConfigError("resumed state does not match the configured geometry");
  }
  const std::int64_t total = total_outer_steps(config, train.size());
  const int per_epoch = (train.size() + config.bs - 1) / config.bs;
  std::vector<std::vector<int>> batches;
  int cached_epoch = -1;
  while (state.step < total) {
    const int epoch = static_cast<int>(state.step / per_epoch);
    if (epoch != cached_epoch) {
      batches = BatchIterator::epoch_batches(train.size(), config.bs, config.seed, epoch);
      cached_epoch = epoch;
    }
    const auto& idx = batches[state.step % per_epoch];
    const auto images = gather_images(train.images, idx);
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (int i : idx) labels.push_back(train.labels[i]);
    const auto report = outer_step(state, geom, images, labels, config);
    if (hooks.on_step) hooks.on_step(report, state);
    if (hooks.on_checkpoint && state.step % config.checkpoint_every == 0 && state.step < total) hooks.on_checkpoint(state);
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(state);
  return state;
}

std::vector<char> encode_state(const DistillState& state) {
  ByteWriter w;
  w.raw(kStateMagic);
  w.u64(static_cast<std::uint64_t>(state.step));
  w.u32(static_cast<std::uint32_t>(state.poster.height));
  w.u32(static_cast<std::uint32_t>(state.poster.width));
  w.u32(static_cast<std::uint32_t>(state.poster.channels));
  w.f64s(state.poster.pixels);
  w.u32(static_cast<std::uint32_t>(state.labels.shape.rows));
  w.u32(static_cast<std::uint32_t>(state.labels.shape.cols));
  w.u32(static_cast<std::uint32_t>(state.labels.n));
  w.f64s(state.labels.values);
  for (const AdamState* a : {&state.poster_opt, &state.label_opt}) {
    w.u64(static_cast<std::uint64_t>(a->t));
    w.u64(a->m.size());
    w.f64s(a->m);
    w.f64s(a->v);
  }
  w.u64(state.loss_history.size());
  w.f64s(state.loss_history);
  return w.bytes();
}

DistillState decode_state(std::span<const char> bytes) {
  ByteReader r(bytes, "checkpoint state");
  if (r.raw(8) != kStateMagic) throw RuntimeFailure("not a checkpoint state file (bad magic)");
  DistillState s;
  s.step = static_cast<std::int64_t>(r.u64());
  const int h = static_cast<int>(r.u32());
  const int w = static_cast<int>(r.u32());
  const int c = static_cast<int>(r.u32());
  s.poster = Poster(h, w, c);
  s.poster.pixels = r.f64s(s.poster.pixels.size());
  const int rows = static_cast<int>(r.u32());
  const int cols = static_cast<int>(r.u32());
  const int n = static_cast<int>(r.u32());
  s.labels = LabelTensor({rows, cols}, n);
  s.labels.values = r.f64s(s.labels.values.size());
  for (AdamState* a : {&s.poster_opt, &s.label_opt}) {
    a->t = static_cast<std::int64_t>(r.u64());
    const auto size = r.u64();
    a->m = r.f64s(size);
    a->v = r.f64s(size);
  }
  s.loss_history = r.f64s(r.u64());
  return s;
}

}  // namespace podd

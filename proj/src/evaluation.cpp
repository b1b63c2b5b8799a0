#include "podd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "podd/error.hpp"
#include "podd/rng.hpp"

namespace podd {

void EvalConfig::validate() const {
  if (n_models < 1) throw ConfigError("evaluation needs at least one model");
  if (train_steps < 0) throw ConfigError("evaluation train_steps must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("evaluation lr must be positive");
  if (batch_size < 0) throw ConfigError("evaluation batch_size must be non-negative");
  if (plateau_window < 1) throw ConfigError("plateau_window must be positive");
  if (curve_every < 0) throw ConfigError("curve_every must be non-negative");
}

std::uint64_t eval_model_seed(std::uint64_t seed, int slot) {
  return derive_seed(seed, {tag(SeedTag::kEvalModel), static_cast<std::uint64_t>(slot)});
}

ModelResult train_and_test(const TrainingSet& train, const LabeledDataset& test, const EvalConfig& config,
                           std::uint64_t model_seed) {
  const int n = test.meta.n_classes;
  const InputShape shape{train.images.height, train.images.width, train.images.channels};
  auto model = init_model(config.model, shape, n, model_seed);
  const int m = train.images.count;
  const int bsz = (config.batch_size == 0 || config.batch_size >= m) ? m : config.batch_size;
  Rng rng(derive_seed(model_seed, {tag(SeedTag::kEvalBatches)}));

  ModelResult result;
  result.seed = model_seed;
  std::vector<int> idx(m);
  std::vector<double> images, labels;
  const std::size_t img = train.images.image_size();
  double window_sum = 0.0;
  double prev_window = -1.0;
  int step = 0;
  for (; step < config.train_steps; ++step) {
    if (config.curve_every > 0 && step % config.curve_every == 0) {
      result.curve.emplace_back(step, accuracy(model.net, model.params, test.images, test.labels));
    }
    double loss;
    if (bsz == m) {
      loss = sgd_step_in_place(model.net, model.params, train.images.data, train.labels, m, config.lr);
    } else {
      std::iota(idx.begin(), idx.end(), 0);
      for (int i = 0; i < bsz; ++i) {
        std::uniform_int_distribution<int> pick(i, m - 1);
        std::swap(idx[i], idx[pick(rng)]);
      }
      images.resize(bsz * img);
      labels.resize(static_cast<std::size_t>(bsz) * n);
      for (int i = 0; i < bsz; ++i) {
        auto src = train.images.image(idx[i]);
        std::copy(src.begin(), src.end(), images.begin() + static_cast<std::ptrdiff_t>(i * img));
        std::copy_n(train.labels.begin() + static_cast<std::ptrdiff_t>(idx[i]) * n, n,
                    labels.begin() + static_cast<std::ptrdiff_t>(i) * n);
      }
      loss = sgd_step_in_place(model.net, model.params, images, labels, bsz, config.lr);
    }
    window_sum += loss;
    if ((step + 1) % config.plateau_window == 0) {
      const double mean = window_sum / config.plateau_window;
      window_sum = 0.0;
      if (config.plateau_tol > 0.0 && prev_window >= 0.0 && prev_window - mean < config.plateau_tol * prev_window) {
        ++step;
        break;
      }
      prev_window = mean;
    }
  }
  result.steps = step;
  result.accuracy = accuracy(model.net, model.params, test.images, test.labels);
  if (config.curve_every > 0) result.curve.emplace_back(step, result.accuracy);
  return result;
}

EvalReport summarize(std::vector<ModelResult> models) {
  EvalReport r;
  r.models = std::move(models);
  std::stable_sort(r.models.begin(), r.models.end(),
                   [](const ModelResult& a, const ModelResult& b) { return a.seed < b.seed; });
  const double k = static_cast<double>(r.models.size());
  if (r.models.empty()) return r;
  double sum = 0.0;
  for (const auto& m : r.models) sum += m.accuracy;
  r.mean = sum / k;
  if (r.models.size() > 1) {
    double ss = 0.0;
    for (const auto& m : r.models) ss += (m.accuracy - r.mean) * (m.accuracy - r.mean);
    r.std = std::sqrt(ss / (k - 1.0));
  }
  return r;
}

EvalReport evaluate_training_set(const TrainingSet& train, const LabeledDataset& test, const EvalConfig& config) {
  config.validate();
  if (train.images.count < 1) throw ConfigError("evaluation training set is empty");
  std::vector<ModelResult> models;
  for (int i = 0; i < config.n_models; ++i) models.push_back(train_and_test(train, test, config, eval_model_seed(config.seed, i)));
  return summarize(std::move(models));
}

EvalReport evaluate_poster(const Poster& poster, const LabelTensor& labels, const PosterGeometry& geom, LabelMode mode,
                           const LabeledDataset& test, const EvalConfig& config) {
  auto data = expand(poster, labels, geom, mode);
  return evaluate_training_set({std::move(data.patches), std::move(data.labels)}, test, config);
}

TrainingSet hard_label_set(const LabeledDataset& dataset) {
  return {dataset.images, one_hot(dataset.labels, dataset.meta.n_classes)};
}

LabeledDataset baseline_random_coreset(const LabeledDataset& dataset, std::int64_t budget_pixels, std::uint64_t seed) {
  const auto per_image = static_cast<std::int64_t>(dataset.meta.image_pixels());
  if (budget_pixels < per_image) throw ConfigError("coreset budget is smaller than one image");
  const int n = dataset.meta.n_classes;
  const int count = static_cast<int>(std::min<std::int64_t>(budget_pixels / per_image, dataset.size()));

  std::vector<std::vector<int>> by_class(n);
  for (int i = 0; i < dataset.size(); ++i) by_class[dataset.labels[i]].push_back(i);

  Rng rng(derive_seed(seed, {tag(SeedTag::kCoreset)}));
  std::vector<int> quota(n, count / n);
  std::vector<int> classes(n);
  std::iota(classes.begin(), classes.end(), 0);
  std::shuffle(classes.begin(), classes.end(), rng);
  for (int i = 0; i < count % n; ++i) ++quota[classes[i]];

  std::vector<int> picked;
  for (int k = 0; k < n; ++k) {
    auto& pool = by_class[k];
    std::shuffle(pool.begin(), pool.end(), rng);
    const int take = std::min<int>(quota[k], static_cast<int>(pool.size()));
    picked.insert(picked.end(), pool.begin(), pool.begin() + take);
  }
  std::sort(picked.begin(), picked.end());
  return subset(dataset, picked);
}

std::pair<Poster, std::vector<double>> baseline_noise_poster(const PosterGeometry& geom, std::uint64_t seed) {
  Poster poster = init_poster(geom.dims.height, geom.dims.width, geom.meta.channels, seed);
  return {std::move(poster), fixed_labels_for(geom.order, geom.spec)};
}

}  // namespace podd

#pragma once

// Toy instance shared by the gradient tests: 4 classes of 4×4×1 images at
// ipc 1 on a 2×2 class grid give an 8×8×1 poster; a 3×3 grid of 4×4 patches
// overlaps by half a patch; the inner model is depth 2, width 8.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>

#include "podd/distill.hpp"

namespace toy {

inline podd::DatasetMeta meta() { return {4, 4, 4, 1, {"a", "b", "c", "d"}}; }

inline podd::DistillConfig config(int T = 3, int delta_T = 3, int bs_d = 4) {
  podd::DistillConfig c;
  c.T = T;
  c.delta_T = delta_T;
  c.bs_d = bs_d;
  c.bs = 6;
  c.inner_lr = 0.1;
  c.outer_lr = 0.01;
  c.ipc = 1.0;
  c.class_grid = {2, 2};
  c.patch_grid = {3, 3};
  c.model = {2, 8, 1e-5};
  c.seed = 7;
  return c;
}

inline podd::PosterGeometry geometry(const podd::DistillConfig& c = config()) {
  return podd::make_geometry(meta(), c, podd::identity_order(c.class_grid));
}

struct Instance {
  podd::PosterGeometry geom;
  podd::DistillConfig config;
  podd::Poster poster;
  podd::LabelTensor labels;
  podd::ImageBatch real;
  std::vector<int> real_labels;
};

/// Random poster, labels perturbed away from one-hot, 6 random real images.
inline Instance instance(const podd::DistillConfig& c = config(), std::uint64_t seed = 11) {
  Instance in{geometry(c), c, {}, {}, podd::ImageBatch(c.bs, 4, 4, 1), {}};
  in.poster = podd::init_poster(8, 8, 1, seed);
  in.labels = podd::init_label_tensor(in.geom.order, 4);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 0.4);
  for (double& v : in.labels.values) v += u(rng);
  std::uniform_real_distribution<double> px(0.0, 1.0);
  for (double& v : in.real.data) v = px(rng);
  for (int i = 0; i < c.bs; ++i) in.real_labels.push_back(i % 4);
  return in;
}

/// max|a − b| / max|b|.
inline double rel_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return scale == 0.0 ? diff : diff / scale;
}

}  // namespace toy

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "oracle/scalar_tape.hpp"
#include "podd/data.hpp"
#include "podd/error.hpp"
#include "podd/evaluation.hpp"
#include "toy.hpp"

using namespace podd;

namespace {

// Tiny labeled dataset matching the toy meta.
LabeledDataset toy_dataset(int per_class, std::uint64_t seed) {
  SyntheticSpec s;
  s.n_classes = 4;
  s.image_h = 4;
  s.image_w = 4;
  s.channels = 1;
  s.samples_per_class = per_class;
  s.test_samples_per_class = 1;
  s.template_smoothing = 0;
  s.seed = seed;
  auto train = generate_synthetic(s).first;
  train.meta = toy::meta();
  return train;
}

struct FdResult {
  double poster;
  double labels;
};

FdResult finite_difference_error(const toy::Instance& in, LabelMode mode, const UnrollSchedule& sched,
                                 const OuterGradient& g) {
  auto poster = in.poster;
  auto labels = in.labels;
  auto loss = [&] {
    return unrolled_outer_loss(poster, labels, in.geom, mode, in.config.model, in.config.inner_lr, sched, in.real,
                               in.real_labels);
  };
  const double h = 1e-5;
  std::vector<double> fdp(poster.pixels.size()), fdl(labels.values.size());
  for (std::size_t i = 0; i < fdp.size(); ++i) {
    const double keep = poster.pixels[i];
    poster.pixels[i] = keep + h;
    const double up = loss();
    poster.pixels[i] = keep - h;
    const double down = loss();
    poster.pixels[i] = keep;
    fdp[i] = (up - down) / (2 * h);
  }
  for (std::size_t i = 0; i < fdl.size(); ++i) {
    const double keep = labels.values[i];
    labels.values[i] = keep + h;
    const double up = loss();
    labels.values[i] = keep - h;
    const double down = loss();
    labels.values[i] = keep;
    fdl[i] = (up - down) / (2 * h);
  }
  return {toy::rel_error(g.poster_grad.pixels, fdp),
          mode == LabelMode::kLearned ? toy::rel_error(g.label_grad.values, fdl) : 0.0};
}

}  // namespace

TEST(Geometry, ToyInstance) {
  const auto g = toy::geometry();
  EXPECT_EQ(g.dims, (PosterDims{8, 8}));
  EXPECT_EQ(g.spec.count(), 9);
  EXPECT_EQ(g.spec.row_offsets, (std::vector<int>{0, 2, 4}));
}

TEST(Geometry, RejectsInvalidConfigs) {
  auto c = toy::config();
  c.class_grid = {1, 3};
  EXPECT_THROW(make_geometry(toy::meta(), c, identity_order({1, 3})), ConfigError);
  c = toy::config();
  c.bs_d = 10;
  EXPECT_THROW(toy::geometry(c), ConfigError);
  c = toy::config();
  c.delta_T = 4;
  EXPECT_THROW(toy::geometry(c), ConfigError);
  c = toy::config();
  c.ipc = 0.2;
  EXPECT_THROW(toy::geometry(c), ConfigError);
  c = toy::config();
  c.model.depth = 3;
  EXPECT_THROW(toy::geometry(c), ConfigError);
  c = toy::config();
  EXPECT_THROW(make_geometry(toy::meta(), c, identity_order({1, 4})), ConfigError);
}

TEST(UnrollLength, DegenerateAndBounds) {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_unroll_length(rng, 5, 5), 5);
  for (int i = 0; i < 1000; ++i) {
    const int t = sample_unroll_length(rng, 3, 9);
    EXPECT_GE(t, 3);
    EXPECT_LE(t, 9);
  }
}

TEST(UnrollLength, UniformFrequencies) {
  Rng rng(2);
  int counts[5] = {};
  for (int i = 0; i < 10000; ++i) ++counts[sample_unroll_length(rng, 2, 4)];
  for (int k = 2; k <= 4; ++k) EXPECT_NEAR(counts[k] / 10000.0, 1.0 / 3.0, 0.02);
}

TEST(Schedule, DeterministicFreshSeedsAndUniqueBatches) {
  const auto c = toy::config(6, 2, 4);
  std::set<std::uint64_t> seeds;
  for (int step = 0; step < 50; ++step) {
    const auto s = make_schedule(c.seed, step, 9, c);
    const auto again = make_schedule(c.seed, step, 9, c);
    EXPECT_EQ(s.t_end, again.t_end);
    EXPECT_EQ(s.batches, again.batches);
    EXPECT_EQ(s.model_seed, again.model_seed);
    seeds.insert(s.model_seed);
    ASSERT_EQ(static_cast<int>(s.batches.size()), s.t_end);
    for (const auto& b : s.batches) {
      EXPECT_EQ(b.size(), 4u);
      EXPECT_EQ(std::set<int>(b.begin(), b.end()).size(), 4u);
      for (int i : b) EXPECT_TRUE(i >= 0 && i < 9);
    }
  }
  EXPECT_EQ(seeds.size(), 50u);
}

TEST(Expand, FixedAlignedAndLearnedAtInit) {
  auto c = toy::config();
  c.patch_grid = {2, 2};
  const auto g = make_geometry(toy::meta(), c, random_order({2, 2}, 4));
  const auto poster = init_poster(8, 8, 1, 1);
  const auto y = init_label_tensor(g.order, 4);
  const auto fixed = expand(poster, y, g, LabelMode::kFixed);
  const auto learned = expand(poster, y, g, LabelMode::kLearned);
  EXPECT_EQ(fixed.labels, learned.labels);
  EXPECT_EQ(fixed.patches.data, learned.patches.data);
  for (int k = 0; k < 4; ++k)
    for (int j = 0; j < 4; ++j) EXPECT_EQ(fixed.labels[k * 4 + j], j == g.order.grid[k] ? 1.0 : 0.0);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  std::vector<double> x{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -4.0, 0.0};
  AdamState st;
  outer_update(OuterOptimizer::kAdam, x, g, st, 0.1);
  EXPECT_NEAR(x[0], 0.9, 1e-6);
  EXPECT_NEAR(x[1], -1.9, 1e-6);
  EXPECT_EQ(x[2], 0.5);
  std::vector<double> y{1.0};
  AdamState unused;
  outer_update(OuterOptimizer::kSgd, y, std::vector<double>{2.0}, unused, 0.1);
  EXPECT_DOUBLE_EQ(y[0], 0.8);
}

TEST(OuterGradient, MatchesFiniteDifferencesLearned) {
  const auto in = toy::instance();
  const auto sched = make_schedule(in.config.seed, 0, 9, in.config);
  ASSERT_EQ(sched.t_end, 3);
  const auto g = compute_outer_gradient(in.poster, in.labels, in.geom, LabelMode::kLearned, in.config.model,
                                        in.config.inner_lr, 3, sched, in.real, in.real_labels);
  const auto err = finite_difference_error(in, LabelMode::kLearned, sched, g);
  EXPECT_LT(err.poster, 1e-3);
  EXPECT_LT(err.labels, 1e-3);
}

TEST(OuterGradient, MatchesFiniteDifferencesFixed) {
  const auto in = toy::instance(toy::config(), 5);
  const auto sched = make_schedule(3, 1, 9, in.config);
  const auto g = compute_outer_gradient(in.poster, in.labels, in.geom, LabelMode::kFixed, in.config.model,
                                        in.config.inner_lr, 3, sched, in.real, in.real_labels);
  EXPECT_LT(finite_difference_error(in, LabelMode::kFixed, sched, g).poster, 1e-3);
  for (double v : g.label_grad.values) EXPECT_EQ(v, 0.0);
}

TEST(OuterGradient, EqualsFullUnrollOracle) {
  for (std::uint64_t seed : {11u, 12u}) {
    const auto in = toy::instance(toy::config(), seed);
    const auto sched = make_schedule(seed, 0, 9, in.config);
    const auto g = compute_outer_gradient(in.poster, in.labels, in.geom, LabelMode::kLearned, in.config.model,
                                          in.config.inner_lr, 3, sched, in.real, in.real_labels);
    const auto ref = oracle::full_bptt(in.poster, in.labels, in.geom, LabelMode::kLearned, in.config.model,
                                       in.config.inner_lr, sched, in.real, in.real_labels);
    EXPECT_NEAR(g.loss, ref.loss, 1e-12);
    EXPECT_LT(toy::rel_error(g.poster_grad.pixels, ref.poster_grad), 1e-5);
    EXPECT_LT(toy::rel_error(g.label_grad.values, ref.label_grad), 1e-5);
  }
}

TEST(OuterGradient, ZeroWherePatchesNeverSampled) {
  const auto c = toy::config(2, 2, 1);
  const auto in = toy::instance(c);
  bool checked = false;
  for (int step = 0; step < 20 && !checked; ++step) {
    const auto sched = make_schedule(c.seed, step, 9, c);
    std::vector<bool> covered(64, false);
    for (const auto& b : sched.batches)
      for (int k : b) {
        const auto pos = in.geom.spec.positions[k];
        for (int r = 0; r < 4; ++r)
          for (int q = 0; q < 4; ++q) covered[(pos.row + r) * 8 + pos.col + q] = true;
      }
    if (std::count(covered.begin(), covered.end(), false) == 0) continue;
    const auto g = compute_outer_gradient(in.poster, in.labels, in.geom, LabelMode::kLearned, c.model, c.inner_lr,
                                          2, sched, in.real, in.real_labels);
    double covered_norm = 0.0;
    for (int i = 0; i < 64; ++i) {
      if (!covered[i]) EXPECT_EQ(g.poster_grad.pixels[i], 0.0) << "pixel " << i;
      else covered_norm += std::abs(g.poster_grad.pixels[i]);
    }
    EXPECT_GT(covered_norm, 0.0);
    checked = true;
  }
  EXPECT_TRUE(checked);
}

TEST(OuterGradient, TruncationDropsEarlySteps) {
  // With ΔT < T the early inner steps only shape θ, so patches sampled
  // exclusively before the window receive no gradient.
  const auto c = toy::config(6, 1, 1);
  const auto in = toy::instance(c);
  for (int step = 0; step < 10; ++step) {
    const auto sched = make_schedule(c.seed, step, 9, c);
    const auto g = compute_outer_gradient(in.poster, in.labels, in.geom, LabelMode::kLearned, c.model, c.inner_lr,
                                          1, sched, in.real, in.real_labels);
    const int last = sched.batches.back()[0];
    for (int k = 0; k < 9; ++k) {
      const auto img = g.patch_grads.image(k);
      const bool any = std::any_of(img.begin(), img.end(), [](double v) { return v != 0.0; });
      EXPECT_EQ(any, k == last);
    }
  }
}

TEST(OuterStep, ZeroLearningRateKeepsState) {
  auto c = toy::config();
  c.outer_lr = 0.0;
  const auto in = toy::instance(c);
  DistillState st;
  st.poster = in.poster;
  st.labels = in.labels;
  const auto r = outer_step(st, in.geom, in.real, in.real_labels, c);
  EXPECT_EQ(st.poster.pixels, in.poster.pixels);
  EXPECT_EQ(st.labels.values, in.labels.values);
  EXPECT_EQ(st.step, 1);
  EXPECT_EQ(r.step, 0);
  EXPECT_TRUE(std::isfinite(r.outer_loss));
}

TEST(OuterStep, LabelsStayValid) {
  auto c = toy::config();
  c.outer_lr = 0.5;
  const auto in = toy::instance(c);
  DistillState st;
  st.poster = in.poster;
  st.labels = in.labels;
  for (int i = 0; i < 5; ++i) {
    outer_step(st, in.geom, in.real, in.real_labels, c);
    for (double v : st.labels.values) EXPECT_GE(v, 0.0);
    const auto soft = resolve_labels(st.labels, in.geom, LabelMode::kLearned);
    for (int k = 0; k < 9; ++k) {
      double s = 0.0;
      for (int j = 0; j < 4; ++j) s += soft[k * 4 + j];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(OuterStep, NonFiniteLossAborts) {
  const auto c = toy::config();
  const auto in = toy::instance(c);
  DistillState st;
  st.poster = in.poster;
  st.labels = in.labels;
  std::fill(st.poster.pixels.begin(), st.poster.pixels.end(), std::numeric_limits<double>::infinity());
  EXPECT_THROW(outer_step(st, in.geom, in.real, in.real_labels, c), RuntimeFailure);
}

TEST(Distill, ZeroEpochsReturnsInitialization) {
  auto c = toy::config();
  c.epochs = 0;
  const auto g = toy::geometry(c);
  const auto train = toy_dataset(3, 1);
  const auto st = distill(train, g, c);
  EXPECT_EQ(st.step, 0);
  EXPECT_EQ(st.poster.pixels, init_poster(8, 8, 1, c.seed).pixels);
  EXPECT_EQ(st.labels.values, init_label_tensor(g.order, 4).values);
  const auto [noise, fixed] = baseline_noise_poster(g, c.seed);
  EXPECT_EQ(noise.pixels, st.poster.pixels);
  EXPECT_EQ(fixed, resolve_labels(st.labels, g, LabelMode::kFixed));
}

TEST(Distill, DeterministicAndResumable) {
  auto c = toy::config(4, 2, 3);
  c.epochs = 2;
  c.checkpoint_every = 2;
  const auto g = toy::geometry(c);
  const auto train = toy_dataset(6, 2);  // 24 images, bs 6 → 4 steps per epoch
  EXPECT_EQ(total_outer_steps(c, train.size()), 8);
  int checkpoints = 0;
  DistillHooks hooks;
  std::vector<double> losses;
  hooks.on_step = [&](const OuterStepReport& r, const DistillState&) { losses.push_back(r.outer_loss); };
  hooks.on_checkpoint = [&](const DistillState&) { ++checkpoints; };
  const auto a = distill(train, g, c, hooks);
  const auto b = distill(train, g, c);
  EXPECT_EQ(a.poster.pixels, b.poster.pixels);
  EXPECT_EQ(a.labels.values, b.labels.values);
  EXPECT_EQ(a.step, 8);
  EXPECT_EQ(losses.size(), 8u);
  EXPECT_EQ(checkpoints, 4);  // steps 2, 4, 6 and exit

  auto partial_cfg = c;
  partial_cfg.max_outer_steps = 3;
  const auto partial = distill(train, g, partial_cfg);
  const auto bytes = encode_state(partial);
  const auto resumed = distill(train, g, c, {}, decode_state(bytes));
  EXPECT_EQ(resumed.poster.pixels, a.poster.pixels);
  EXPECT_EQ(resumed.labels.values, a.labels.values);
  EXPECT_EQ(resumed.step, 8);
}

TEST(Distill, RejectsOversizedBatchAndMismatchedResume) {
  auto c = toy::config();
  c.bs = 100;
  const auto g = toy::geometry(c);
  EXPECT_THROW(distill(toy_dataset(2, 1), g, c), ConfigError);
  c.bs = 4;
  DistillState wrong;
  wrong.poster = Poster(9, 8, 1);
  wrong.labels = init_label_tensor(g.order, 4);
  EXPECT_THROW(distill(toy_dataset(2, 1), g, c, {}, wrong), ConfigError);
}

TEST(StateCodec, RoundTripAndCorruption) {
  auto c = toy::config();
  c.max_outer_steps = 2;
  const auto g = toy::geometry(c);
  const auto st = distill(toy_dataset(3, 1), g, c);
  auto bytes = encode_state(st);
  const auto back = decode_state(bytes);
  EXPECT_EQ(back.poster.pixels, st.poster.pixels);
  EXPECT_EQ(back.labels.values, st.labels.values);
  EXPECT_EQ(back.poster_opt.m, st.poster_opt.m);
  EXPECT_EQ(back.label_opt.v, st.label_opt.v);
  EXPECT_EQ(back.step, st.step);
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(decode_state(bytes), RuntimeFailure);
  bytes[0] = 'X';
  EXPECT_THROW(decode_state(bytes), RuntimeFailure);
}

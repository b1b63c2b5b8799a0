#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "../../src/convnet_kernels.hpp"
#include "podd/error.hpp"
#include "podd/model.hpp"
#include "toy.hpp"

using namespace podd;

namespace {

const ConvNetSpec kToy{2, 8, 1e-5};

ImageBatch random_images(int count, int h, int w, int c, std::uint64_t seed) {
  ImageBatch b(count, h, w, c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& v : b.data) v = u(rng);
  return b;
}

std::vector<double> random_soft_labels(int count, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> y(static_cast<std::size_t>(count) * n);
  for (int i = 0; i < count; ++i) {
    double s = 0.0;
    for (int k = 0; k < n; ++k) s += (y[i * n + k] = u(rng));
    for (int k = 0; k < n; ++k) y[i * n + k] /= s;
  }
  return y;
}

double mean_loss(const ConvNet& net, std::span<const double> th, std::span<const double> x, std::span<const double> y,
                 int batch) {
  return loss_and_gradient(net, th, x, y, batch).loss;
}

}  // namespace

TEST(ConvNet, ReferenceParameterCount) {
  const ConvNet net({3, 128, 1e-5}, {32, 32, 3}, 10);
  EXPECT_EQ(net.param_count(), 320010u);
  EXPECT_EQ(convnet_param_count({3, 128, 1e-5}, {32, 32, 3}, 10), 320010u);
  EXPECT_EQ(convnet_param_count({4, 128, 1e-5}, {64, 64, 3}, 200),
            ConvNet({4, 128, 1e-5}, {64, 64, 3}, 200).param_count());
}

TEST(ConvNet, RejectsIndivisibleInput) {
  EXPECT_THROW(ConvNet({3, 8, 1e-5}, {12, 16, 3}, 4), ConfigError);
  EXPECT_THROW(ConvNet({0, 8, 1e-5}, {16, 16, 3}, 4), ConfigError);
}

TEST(InitModel, DeterministicAndBounded) {
  const auto a = init_model(kToy, {8, 8, 3}, 4, 1);
  EXPECT_EQ(a.params, init_model(kToy, {8, 8, 3}, 4, 1).params);
  EXPECT_NE(a.params, init_model(kToy, {8, 8, 3}, 4, 2).params);
  const auto& b0 = a.net.blocks()[0];
  const double bound = 1.0 / std::sqrt(9.0 * 3);
  for (std::size_t i = b0.weight; i < b0.bias; ++i) EXPECT_LE(std::abs(a.params[i]), bound);
  for (int o = 0; o < b0.out_c; ++o) {
    EXPECT_EQ(a.params[b0.gamma + o], 1.0);
    EXPECT_EQ(a.params[b0.beta + o], 0.0);
  }
}

TEST(Forward, ShapeAndFinite) {
  const auto m = init_model({3, 16, 1e-5}, {16, 16, 3}, 5, 3);
  const auto x = random_images(7, 16, 16, 3, 4);
  const auto logits = forward(m, x);
  ASSERT_EQ(logits.size(), 35u);
  for (double v : logits) EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, ZeroHeadGivesZeroLogits) {
  auto m = init_model(kToy, {8, 8, 3}, 4, 3);
  std::fill(m.params.begin() + m.net.head_weight(), m.params.end(), 0.0);
  for (double v : forward(m, random_images(3, 8, 8, 3, 1))) EXPECT_EQ(v, 0.0);
}

TEST(Forward, BatchPermutationPermutesLogits) {
  const auto m = init_model(kToy, {8, 8, 3}, 4, 3);
  const auto x = random_images(5, 8, 8, 3, 2);
  const std::vector<int> perm{3, 0, 4, 1, 2};
  const auto a = forward(m, x);
  const auto b = forward(m, gather_images(x, perm));
  for (int i = 0; i < 5; ++i)
    for (int k = 0; k < 4; ++k) EXPECT_EQ(b[i * 4 + k], a[perm[i] * 4 + k]);
}

TEST(InstanceNorm, StandardizedPerChannel) {
  auto spec = kToy;
  spec.norm_eps = 1e-12;
  const auto m = init_model(spec, {8, 8, 3}, 4, 5);
  const auto x = random_images(4, 8, 8, 3, 6);
  kernels::SampleCache<double> cache(m.net);
  for (int s = 0; s < 4; ++s) {
    kernels::forward_sample(m.net, m.params.data(), x.image(s).data(), cache);
    for (std::size_t l = 0; l < m.net.blocks().size(); ++l) {
      const auto& b = m.net.blocks()[l];
      const int hw = b.in_h * b.in_w;
      for (int o = 0; o < b.out_c; ++o) {
        double mean = 0.0, var = 0.0;
        for (int p = 0; p < hw; ++p) mean += cache.blocks[l].xhat[p * b.out_c + o];
        mean /= hw;
        for (int p = 0; p < hw; ++p) var += std::pow(cache.blocks[l].xhat[p * b.out_c + o] - mean, 2);
        var /= hw;
        EXPECT_NEAR(mean, 0.0, 1e-4);
        EXPECT_NEAR(var, 1.0, 1e-4);
      }
    }
  }
}

TEST(CrossEntropy, OneHotIsNll) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 3.0);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> z(6);
    for (double& v : z) v = nd(rng);
    const int k = t % 6;
    std::vector<double> y(6, 0.0);
    y[k] = 1.0;
    double lse = 0.0;
    for (double v : z) lse += std::exp(v);
    EXPECT_NEAR(soft_cross_entropy(z, y), std::log(lse) - z[k], 1e-9);
  }
}

TEST(Gradient, MatchesFiniteDifferences) {
  const auto m = init_model(kToy, {8, 8, 1}, 3, 9);
  const auto x = random_images(2, 8, 8, 1, 10);
  const auto y = random_soft_labels(2, 3, 11);
  const auto g = loss_and_gradient(m.net, m.params, x.data, y, 2, {true, true});
  auto check = [&](std::vector<double> v, const std::vector<double>& grad, auto eval) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double h = 1e-6, keep = v[i];
      v[i] = keep + h;
      const double up = eval(v);
      v[i] = keep - h;
      const double down = eval(v);
      v[i] = keep;
      diff = std::max(diff, std::abs((up - down) / (2 * h) - grad[i]));
      scale = std::max(scale, std::abs(grad[i]));
    }
    return diff / scale;
  };
  EXPECT_LT(check(m.params, g.params, [&](const std::vector<double>& th) { return mean_loss(m.net, th, x.data, y, 2); }), 1e-4);
  EXPECT_LT(check(x.data, g.images, [&](const std::vector<double>& xx) { return mean_loss(m.net, m.params, xx, y, 2); }), 1e-4);
  EXPECT_LT(check(y, g.labels, [&](const std::vector<double>& yy) { return mean_loss(m.net, m.params, x.data, yy, 2); }), 1e-6);
}

TEST(Hvp, MatchesFiniteDifferencesOfGradient) {
  const auto m = init_model(kToy, {8, 8, 1}, 3, 21);
  const auto x = random_images(3, 8, 8, 1, 22);
  const auto y = random_soft_labels(3, 3, 23);
  std::mt19937_64 rng(24);
  std::normal_distribution<double> nd;
  std::vector<double> a(m.params.size());
  for (double& v : a) v = nd(rng);
  const auto h = inner_loss_hvp(m.net, m.params, a, x.data, y, 3);
  EXPECT_NEAR(h.loss, mean_loss(m.net, m.params, x.data, y, 3), 1e-12);

  // aᵀ∇θL as a function of (θ, X, Y).
  auto dir = [&](std::span<const double> th, std::span<const double> xx, std::span<const double> yy) {
    const auto g = loss_and_gradient(m.net, th, xx, yy, 3);
    return std::inner_product(a.begin(), a.end(), g.params.begin(), 0.0);
  };
  const double eps = 1e-5;
  std::vector<double> tp = m.params, tm = m.params;
  for (std::size_t i = 0; i < a.size(); ++i) tp[i] += eps * a[i], tm[i] -= eps * a[i];
  const auto gp = loss_and_gradient(m.net, tp, x.data, y, 3).params;
  const auto gm = loss_and_gradient(m.net, tm, x.data, y, 3).params;
  std::vector<double> fd(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) fd[i] = (gp[i] - gm[i]) / (2 * eps);
  EXPECT_LT(toy::rel_error(h.params, fd), 1e-5);

  std::vector<double> fdx(x.data.size());
  auto xx = x.data;
  for (std::size_t i = 0; i < xx.size(); ++i) {
    const double keep = xx[i];
    xx[i] = keep + eps;
    const double up = dir(m.params, xx, y);
    xx[i] = keep - eps;
    const double down = dir(m.params, xx, y);
    xx[i] = keep;
    fdx[i] = (up - down) / (2 * eps);
  }
  EXPECT_LT(toy::rel_error(h.images, fdx), 1e-5);

  std::vector<double> fdy(y.size());
  auto yy = y;
  for (std::size_t i = 0; i < yy.size(); ++i) {
    const double keep = yy[i];
    yy[i] = keep + eps;
    const double up = dir(m.params, x.data, yy);
    yy[i] = keep - eps;
    const double down = dir(m.params, x.data, yy);
    yy[i] = keep;
    fdy[i] = (up - down) / (2 * eps);
  }
  EXPECT_LT(toy::rel_error(h.labels, fdy), 1e-6);
}

TEST(Sgd, ZeroLearningRateIsIdentity) {
  const auto m = init_model(kToy, {8, 8, 3}, 4, 1);
  const auto x = random_images(4, 8, 8, 3, 2);
  EXPECT_EQ(sgd_step(m, x, random_soft_labels(4, 4, 3), 0.0).params, m.params);
}

TEST(Sgd, DescentWithSmallStep) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto m = init_model(kToy, {8, 8, 3}, 4, s);
    const auto x = random_images(6, 8, 8, 3, s + 100);
    const auto y = random_soft_labels(6, 4, s + 200);
    const double before = mean_loss(m.net, m.params, x.data, y, 6);
    const auto next = sgd_step(m, x, y, 1e-4);
    EXPECT_LE(mean_loss(m.net, next.params, x.data, y, 6), before);
  }
}

TEST(Sgd, TwoStepsMatchReferenceLoop) {
  const auto m = init_model(kToy, {8, 8, 3}, 4, 1);
  const auto x = random_images(4, 8, 8, 3, 2);
  const auto y = random_soft_labels(4, 4, 3);
  const auto two = sgd_step(sgd_step(m, x, y, 0.05), x, y, 0.05);
  auto th = m.params;
  for (int s = 0; s < 2; ++s) {
    const auto g = loss_and_gradient(m.net, th, x.data, y, 4);
    for (std::size_t i = 0; i < th.size(); ++i) th[i] -= 0.05 * g.params[i];
  }
  EXPECT_EQ(two.params, th);
}

TEST(Sgd, NonFiniteLossAborts) {
  const auto m = init_model(kToy, {8, 8, 3}, 4, 1);
  auto x = random_images(2, 8, 8, 3, 2);
  x.data[5] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(sgd_step(m, x, random_soft_labels(2, 4, 3), 0.1), RuntimeFailure);
}

TEST(Accuracy, ConstantPredictorOnOneClass) {
  auto m = init_model(kToy, {8, 8, 3}, 4, 1);
  std::fill(m.params.begin() + m.net.head_weight(), m.params.end(), 0.0);
  m.params[m.net.head_bias() + 2] = 1.0;
  const auto x = random_images(5, 8, 8, 3, 2);
  const std::vector<int> labels(5, 2);
  EXPECT_EQ(accuracy(m.net, m.params, x, labels), 1.0);
  const std::vector<int> other(5, 1);
  EXPECT_EQ(accuracy(m.net, m.params, x, other), 0.0);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "podd/data.hpp"
#include "podd/error.hpp"

using namespace podd;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("podd_test_" + name); }

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                           static_cast<std::streamsize>(bytes.size()));
}

DatasetMeta small_meta() { return {3, 2, 2, 3, {"x", "y", "z"}}; }

double nearest_template_accuracy(const SyntheticSpec& spec) {
  const auto templates = synthetic_templates(spec);
  const auto test = generate_synthetic(spec).second;
  int correct = 0;
  for (int i = 0; i < test.size(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int k = 0; k < spec.n_classes; ++k) {
      double d = 0.0;
      auto a = test.images.image(i);
      auto b = templates.image(k);
      for (std::size_t p = 0; p < a.size(); ++p) d += (a[p] - b[p]) * (a[p] - b[p]);
      if (d < best_d) best_d = d, best = k;
    }
    correct += best == test.labels[i];
  }
  return static_cast<double>(correct) / test.size();
}

// Multinomial logistic regression by full-batch gradient descent.
double linear_classifier_accuracy(const LabeledDataset& train, const LabeledDataset& test, int n) {
  const std::size_t d = train.images.image_size();
  std::vector<double> w((d + 1) * n, 0.0);
  std::vector<double> grad(w.size());
  auto logits = [&](std::span<const double> x, int k) {
    double z = w[d * n + k];
    for (std::size_t j = 0; j < d; ++j) z += x[j] * w[j * n + k];
    return z;
  };
  for (int it = 0; it < 150; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int i = 0; i < train.size(); ++i) {
      auto x = train.images.image(i);
      std::vector<double> p(n);
      double m = -1e300;
      for (int k = 0; k < n; ++k) m = std::max(m, p[k] = logits(x, k));
      double s = 0.0;
      for (double& v : p) s += (v = std::exp(v - m));
      for (int k = 0; k < n; ++k) {
        const double g = p[k] / s - (k == train.labels[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < d; ++j) grad[j * n + k] += g * (x[j] - 0.5);
        grad[d * n + k] += g;
      }
    }
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= 0.5 * grad[j] / train.size();
  }
  int correct = 0;
  for (int i = 0; i < test.size(); ++i) {
    std::vector<double> xc(test.images.image(i).begin(), test.images.image(i).end());
    for (double& v : xc) v -= 0.5;
    int best = 0;
    for (int k = 1; k < n; ++k)
      if (logits(xc, k) > logits(xc, best)) best = k;
    correct += best == test.labels[i];
  }
  return static_cast<double>(correct) / test.size();
}

}  // namespace

TEST(Synthetic, NoiseFreeSamplesEqualTemplates) {
  SyntheticSpec s;
  s.noise_sigma = 0.0;
  s.samples_per_class = 3;
  const auto t = synthetic_templates(s);
  const auto [train, test] = generate_synthetic(s);
  for (int i = 0; i < train.size(); ++i) {
    auto a = train.images.image(i);
    auto b = t.image(train.labels[i]);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
}

TEST(Synthetic, ReproducibleAndInRange) {
  SyntheticSpec s;
  s.samples_per_class = 20;
  const auto a = generate_synthetic(s);
  const auto b = generate_synthetic(s);
  EXPECT_EQ(a.first.images.data, b.first.images.data);
  EXPECT_EQ(a.second.images.data, b.second.images.data);
  EXPECT_EQ(a.first.labels, b.first.labels);
  EXPECT_NE(a.first.images.data, a.second.images.data);
  for (double v : a.first.images.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_NO_THROW(a.first.validate());
  s.seed = 1;
  EXPECT_NE(generate_synthetic(s).first.images.data, a.first.images.data);
}

TEST(Synthetic, DefaultSpecIsSeparable) {
  const SyntheticSpec s;
  EXPECT_GE(nearest_template_accuracy(s), 0.95);
  const auto [train, test] = generate_synthetic(s);
  EXPECT_GT(linear_classifier_accuracy(train, test, s.n_classes), 0.90);
}

TEST(Synthetic, RejectsInvalidSpec) {
  SyntheticSpec s;
  s.signal = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.n_classes = 1;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.noise_sigma = -1;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Binary, SingleRecordRoundTrip) {
  LabeledDataset ds;
  ds.meta = small_meta();
  ds.images = ImageBatch(1, 2, 2, 3);
  for (std::size_t i = 0; i < ds.images.data.size(); ++i) ds.images.data[i] = (17.0 * i + 3) / 255.0;
  ds.labels = {2};
  const auto p = temp_file("one.bin");
  write_binary_dataset(p, ds);
  EXPECT_EQ(fs::file_size(p), 13u);
  const auto back = load_binary_dataset(p, ds.meta);
  EXPECT_EQ(back.size(), 1);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.images.data, ds.images.data);
  fs::remove(p);
}

TEST(Binary, GoldenChannelPlanarLayout) {
  std::vector<unsigned char> bytes;
  std::vector<std::vector<double>> expected;
  for (int r = 0; r < 10; ++r) {
    bytes.push_back(static_cast<unsigned char>(r % 3));
    // Channel planes of a 2×2 image: value = 100·ch + 10·pixel + r.
    std::vector<double> img(12);
    for (int ch = 0; ch < 3; ++ch)
      for (int px = 0; px < 4; ++px) {
        const int v = 60 * ch + 10 * px + r;
        bytes.push_back(static_cast<unsigned char>(v));
        img[px * 3 + ch] = v / 255.0;
      }
    expected.push_back(img);
  }
  const auto p = temp_file("golden.bin");
  write_bytes(p, bytes);
  const auto ds = load_binary_dataset(p, small_meta(), Split::kTest);
  ASSERT_EQ(ds.size(), 10);
  EXPECT_EQ(ds.split, Split::kTest);
  for (int r = 0; r < 10; ++r) {
    EXPECT_EQ(ds.labels[r], r % 3);
    auto img = ds.images.image(r);
    EXPECT_EQ(std::vector<double>(img.begin(), img.end()), expected[r]);
  }
  fs::remove(p);
}

TEST(Binary, Rejections) {
  const auto p = temp_file("bad.bin");
  std::vector<unsigned char> rec(13, 7);
  rec[0] = 1;
  auto bytes = rec;
  bytes.insert(bytes.end(), rec.begin(), rec.end());
  bytes[13] = 3;  // second record, label out of range
  write_bytes(p, bytes);
  try {
    load_binary_dataset(p, small_meta());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("offset 13"), std::string::npos);
  }
  bytes[13] = 0;
  bytes.resize(20);
  write_bytes(p, bytes);
  try {
    load_binary_dataset(p, small_meta());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("offset 13"), std::string::npos);
  }
  fs::remove(p);
  EXPECT_THROW(load_binary_dataset(p, small_meta()), ConfigError);
}

TEST(Batches, FullBatchIsPermutation) {
  const auto b = BatchIterator::epoch_batches(17, 17, 3, 0);
  ASSERT_EQ(b.size(), 1u);
  auto s = b[0];
  std::sort(s.begin(), s.end());
  std::vector<int> ref(17);
  std::iota(ref.begin(), ref.end(), 0);
  EXPECT_EQ(s, ref);
}

TEST(Batches, EpochsArePermutationsAndSeeded) {
  BatchIterator it(23, 5, 9), again(23, 5, 9);
  EXPECT_EQ(it.batches_per_epoch(), 5);
  std::vector<int> first_epoch;
  for (int e = 0; e < 3; ++e) {
    std::vector<int> all;
    for (int b = 0; b < 5; ++b) {
      const auto batch = it.next();
      EXPECT_EQ(batch, again.next());
      EXPECT_EQ(batch.size(), b == 4 ? 3u : 5u);
      all.insert(all.end(), batch.begin(), batch.end());
    }
    EXPECT_EQ(it.epoch(), e);
    if (e == 0) first_epoch = all;
    else EXPECT_NE(all, first_epoch);
    std::sort(all.begin(), all.end());
    for (int i = 0; i < 23; ++i) EXPECT_EQ(all[i], i);
  }
  EXPECT_THROW(BatchIterator(5, 6, 0), ConfigError);
}

TEST(Standardize, TrainStatisticsApplied) {
  SyntheticSpec s;
  s.samples_per_class = 10;
  auto [train, test] = generate_synthetic(s);
  standardize_channels(train, test);
  for (int ch = 0; ch < 3; ++ch) {
    double m = 0.0, v = 0.0;
    const std::size_t n = train.images.data.size() / 3;
    for (std::size_t i = 0; i < n; ++i) m += train.images.data[i * 3 + ch];
    m /= n;
    for (std::size_t i = 0; i < n; ++i) v += std::pow(train.images.data[i * 3 + ch] - m, 2);
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(v / n, 1.0, 1e-9);
  }
}

TEST(Binary, TwoLabelBytesUseTheLast) {
  std::vector<unsigned char> bytes{9, 2};
  for (int i = 0; i < 12; ++i) bytes.push_back(static_cast<unsigned char>(i));
  const auto p = temp_file("two_label.bin");
  write_bytes(p, bytes);
  const auto ds = load_binary_dataset(p, small_meta(), Split::kTrain, 2);
  ASSERT_EQ(ds.size(), 1);
  EXPECT_EQ(ds.labels[0], 2);
  EXPECT_EQ(ds.images.image(0)[0], 0.0);
  EXPECT_EQ(ds.images.image(0)[1], 4 / 255.0);  // channel 1 of pixel 0
  EXPECT_THROW(load_binary_dataset(p, small_meta()), ConfigError);
  fs::remove(p);
}

TEST(Synthetic, ModesSplitClassesAndKeepDefaultTemplates) {
  SyntheticSpec one;
  SyntheticSpec three;
  three.modes_per_class = 3;
  three.noise_sigma = 0.0;
  three.samples_per_class = 30;
  const auto t1 = synthetic_templates(one);
  const auto t3 = synthetic_templates(three);
  ASSERT_EQ(t3.count, 12);
  for (int k = 0; k < 4; ++k) {
    auto a = t1.image(k);
    auto b = t3.image(3 * k);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
  const auto train = generate_synthetic(three).first;
  std::vector<int> seen(12, 0);
  for (int i = 0; i < train.size(); ++i) {
    auto x = train.images.image(i);
    for (int m = 0; m < 3; ++m) {
      auto t = t3.image(3 * train.labels[i] + m);
      if (std::equal(x.begin(), x.end(), t.begin())) ++seen[3 * train.labels[i] + m];
    }
  }
  for (int c : seen) EXPECT_GT(c, 0);
  EXPECT_EQ(std::accumulate(seen.begin(), seen.end(), 0), train.size());
}

#include "podd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "podd/error.hpp"
#include "podd/rng.hpp"

namespace podd {

void LabeledDataset::validate() const {
  if (images.count < 1) throw ConfigError("dataset is empty");
  if (static_cast<int>(labels.size()) != images.count) throw ConfigError("dataset label count mismatch");
  for (int l : labels)
    if (l < 0 || l >= meta.n_classes) throw ConfigError("dataset label out of range: " + std::to_string(l));
  for (double v : images.data)
    if (!std::isfinite(v)) throw ConfigError("dataset contains non-finite pixels");
}

void SyntheticSpec::validate() const {
  if (n_classes < 2) throw ConfigError("synthetic spec needs at least 2 classes");
  if (image_h < 1 || image_w < 1 || channels < 1) throw ConfigError("synthetic image dimensions must be positive");
  if (samples_per_class < 1 || test_samples_per_class < 1) throw ConfigError("synthetic sample counts must be positive");
  if (!(signal > 0.0)) throw ConfigError("synthetic class signal must be positive");
  if (noise_sigma < 0.0) throw ConfigError("synthetic noise sigma must be non-negative");
  if (template_smoothing < 0) throw ConfigError("synthetic template smoothing must be non-negative");
  if (modes_per_class < 1) throw ConfigError("synthetic modes_per_class must be at least 1");
  if (max_shift < 0) throw ConfigError("synthetic max_shift must be non-negative");
}

DatasetMeta SyntheticSpec::meta() const {
  DatasetMeta m{n_classes, image_h, image_w, channels, {}};
  for (int k = 0; k < n_classes; ++k) m.class_names.push_back("class_" + std::to_string(k));
  return m;
}

ImageBatch synthetic_templates(const SyntheticSpec& spec) {
  spec.validate();
  const int h = spec.image_h;
  const int w = spec.image_w;
  const int c = spec.channels;
  const int rad = spec.template_smoothing;
  const int modes = spec.modes_per_class;
  ImageBatch templates(spec.n_classes * modes, h, w, c);
  for (int t = 0; t < templates.count; ++t) {
    const auto k = static_cast<std::uint64_t>(t / modes);
    const auto m = static_cast<std::uint64_t>(t % modes);
    Rng rng(m == 0 ? derive_seed(spec.seed, {tag(SeedTag::kSynthetic), 0, k})
                   : derive_seed(spec.seed, {tag(SeedTag::kSynthetic), 0, k, m}));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> white(templates.image_size());
    for (double& v : white) v = normal(rng);

    std::vector<double> smooth(white.size(), 0.0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (int dy = -rad; dy <= rad; ++dy)
            for (int dx = -rad; dx <= rad; ++dx) {
              // Wrap around so every pixel averages the same number of terms.
              const int yy = (y + dy + h) % h;
              const int xx = (x + dx + w) % w;
              acc += white[(static_cast<std::size_t>(yy) * w + xx) * c + ch];
            }
          smooth[(static_cast<std::size_t>(y) * w + x) * c + ch] = acc;
        }
    double mean = std::accumulate(smooth.begin(), smooth.end(), 0.0) / smooth.size();
    double var = 0.0;
    for (double v : smooth) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / smooth.size());
    auto dst = templates.image(t);
    for (std::size_t i = 0; i < smooth.size(); ++i) {
      dst[i] = std::clamp(0.5 + spec.signal * (smooth[i] - mean) / sd, 0.0, 1.0);
    }
  }
  return templates;
}

namespace {

LabeledDataset synthetic_split(const SyntheticSpec& spec, const ImageBatch& templates, Split split) {
  const int per_class = split == Split::kTrain ? spec.samples_per_class : spec.test_samples_per_class;
  const std::uint64_t split_id = split == Split::kTrain ? 1 : 2;
  LabeledDataset ds;
  ds.meta = spec.meta();
  ds.split = split;
  ds.images = ImageBatch(per_class * spec.n_classes, spec.image_h, spec.image_w, spec.channels);
  ds.labels.resize(ds.images.count);
  // Interleave classes so prefixes of the dataset stay class-balanced.
  for (int i = 0; i < per_class; ++i) {
    for (int k = 0; k < spec.n_classes; ++k) {
      const int idx = i * spec.n_classes + k;
      ds.labels[idx] = k;
      Rng rng(derive_seed(spec.seed, {tag(SeedTag::kSynthetic), split_id, static_cast<std::uint64_t>(k),
                                      static_cast<std::uint64_t>(i)}));
      std::normal_distribution<double> normal(0.0, 1.0);
      const int mode = spec.modes_per_class > 1 ? static_cast<int>(rng() % spec.modes_per_class) : 0;
      auto src = templates.image(k * spec.modes_per_class + mode);
      auto dst = ds.images.image(idx);
      int dy = 0, dx = 0;
      if (spec.max_shift > 0) {
        std::uniform_int_distribution<int> shift(-spec.max_shift, spec.max_shift);
        dy = shift(rng);
        dx = shift(rng);
      }
      const int h = spec.image_h, w = spec.image_w, c = spec.channels;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const std::size_t from = (static_cast<std::size_t>((y - dy + h) % h) * w + (x - dx + w) % w) * c;
          const std::size_t to = (static_cast<std::size_t>(y) * w + x) * c;
          for (int ch = 0; ch < c; ++ch) {
            const double noise = spec.noise_sigma > 0.0 ? spec.noise_sigma * normal(rng) : 0.0;
            dst[to + ch] = std::clamp(src[from + ch] + noise, 0.0, 1.0);
          }
        }
    }
  }
  return ds;
}

}  // namespace

std::pair<LabeledDataset, LabeledDataset> generate_synthetic(const SyntheticSpec& spec) {
  const auto templates = synthetic_templates(spec);
  return {synthetic_split(spec, templates, Split::kTrain), synthetic_split(spec, templates, Split::kTest)};
}

LabeledDataset load_binary_dataset(const std::filesystem::path& path, const DatasetMeta& meta, Split split,
                                   int label_bytes) {
  meta.validate();
  if (label_bytes < 1) throw ConfigError("label_bytes must be at least 1");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open dataset file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t pixels = meta.image_pixels() * meta.channels;
  const std::size_t record = label_bytes + pixels;
  if (bytes.empty()) throw ConfigError("dataset file " + path.string() + " is empty");
  if (bytes.size() % record != 0) {
    const std::size_t full = bytes.size() / record;
    std::ostringstream msg;
    msg << "dataset file " << path.string() << " is truncated: record " << full << " starts at byte offset "
        << full * record << " but only " << bytes.size() - full * record << " of " << record << " bytes remain";
    throw ConfigError(msg.str());
  }
  const int m = static_cast<int>(bytes.size() / record);
  LabeledDataset ds;
  ds.meta = meta;
  ds.split = split;
  ds.images = ImageBatch(m, meta.image_h, meta.image_w, meta.channels);
  ds.labels.resize(m);
  const std::size_t plane = meta.image_pixels();
  for (int i = 0; i < m; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * record;
    const int label = bytes[off + label_bytes - 1];
    if (label >= meta.n_classes) {
      std::ostringstream msg;
      msg << "record " << i << " at byte offset " << off << " has label " << label << " but the dataset has "
          << meta.n_classes << " classes";
      throw ConfigError(msg.str());
    }
    ds.labels[i] = label;
    auto dst = ds.images.image(i);
    for (int ch = 0; ch < meta.channels; ++ch)
      for (std::size_t p = 0; p < plane; ++p)
        dst[p * meta.channels + ch] = bytes[off + label_bytes + ch * plane + p] / 255.0;
  }
  return ds;
}

void write_binary_dataset(const std::filesystem::path& path, const LabeledDataset& dataset) {
  const auto& meta = dataset.meta;
  const std::size_t plane = meta.image_pixels();
  std::vector<unsigned char> bytes;
  bytes.reserve(static_cast<std::size_t>(dataset.size()) * (1 + plane * meta.channels));
  for (int i = 0; i < dataset.size(); ++i) {
    if (dataset.labels[i] < 0 || dataset.labels[i] > 255) throw ConfigError("label does not fit in one byte");
    bytes.push_back(static_cast<unsigned char>(dataset.labels[i]));
    auto src = dataset.images.image(i);
    for (int ch = 0; ch < meta.channels; ++ch)
      for (std::size_t p = 0; p < plane; ++p) {
        const double v = std::clamp(src[p * meta.channels + ch], 0.0, 1.0);
        bytes.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write dataset file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeFailure("failed writing dataset file " + path.string());
}

BatchIterator::BatchIterator(int dataset_size, int batch_size, std::uint64_t seed)
    : size_(dataset_size), batch_size_(batch_size), seed_(seed) {
  if (dataset_size < 1) throw ConfigError("cannot iterate an empty dataset");
  if (batch_size < 1 || batch_size > dataset_size) throw ConfigError("batch size must be in [1, dataset size]");
  batches_ = epoch_batches(size_, batch_size_, seed_, epoch_);
}

std::vector<int> BatchIterator::next() {
  if (cursor_ == batches_.size()) {
    ++epoch_;
    cursor_ = 0;
    batches_ = epoch_batches(size_, batch_size_, seed_, epoch_);
  }
  return batches_[cursor_++];
}

std::vector<std::vector<int>> BatchIterator::epoch_batches(int dataset_size, int batch_size, std::uint64_t seed,
                                                           int epoch) {
  std::vector<int> perm(dataset_size);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, {tag(SeedTag::kBatches), static_cast<std::uint64_t>(epoch)}));
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < dataset_size; start += batch_size) {
    const int end = std::min(dataset_size, start + batch_size);
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

ImageBatch gather_images(const ImageBatch& images, const std::vector<int>& indices) {
  ImageBatch out(static_cast<int>(indices.size()), images.height, images.width, images.channels);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = images.image(indices[i]);
    std::copy(src.begin(), src.end(), out.image(static_cast<int>(i)).begin());
  }
  return out;
}

LabeledDataset subset(const LabeledDataset& dataset, const std::vector<int>& indices) {
  LabeledDataset out;
  out.meta = dataset.meta;
  out.split = dataset.split;
  out.images = gather_images(dataset.images, indices);
  for (int i : indices) out.labels.push_back(dataset.labels[i]);
  return out;
}

void standardize_channels(LabeledDataset& train, LabeledDataset& test) {
  const int c = train.images.channels;
  std::vector<double> mean(c, 0.0), sq(c, 0.0);
  const std::size_t n = train.images.data.size() / c;
  for (std::size_t i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double v = train.images.data[i * c + ch];
      mean[ch] += v;
      sq[ch] += v * v;
    }
  std::vector<double> sd(c);
  for (int ch = 0; ch < c; ++ch) {
    mean[ch] /= n;
    sd[ch] = std::sqrt(std::max(sq[ch] / n - mean[ch] * mean[ch], 1e-12));
  }
  for (auto* ds : {&train, &test}) {
    auto& d = ds->images.data;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = (d[i] - mean[i % c]) / sd[i % c];
  }
}

}  // namespace podd

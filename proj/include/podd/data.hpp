#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "podd/image.hpp"
#include "podd/poster.hpp"

namespace podd {

enum class Split { kTrain, kTest };

struct LabeledDataset {
  ImageBatch images;
  std::vector<int> labels;
  DatasetMeta meta;
  Split split = Split::kTrain;

  int size() const { return images.count; }
  /// Labels in range, values finite, at least one sample.
  void validate() const;
};

/// Desk-scale stand-in for a real image dataset. Each class owns a random
/// template image; samples are template + Gaussian noise, clipped to [0, 1].
struct SyntheticSpec {
  int n_classes = 4;
  int image_h = 16;
  int image_w = 16;
  int channels = 3;
  int samples_per_class = 256;
  int test_samples_per_class = 64;
  /// Template = 0.5 + signal · (unit-variance smoothed noise), clipped.
  double signal = 0.25;
  double noise_sigma = 0.25;
  /// Box-blur radius applied to template noise; 0 keeps it white.
  int template_smoothing = 1;
  /// Templates per class; each sample picks one uniformly.
  int modes_per_class = 1;
  /// Samples are the template circularly shifted by up to this many pixels
  /// in each direction.
  int max_shift = 0;
  std::uint64_t seed = 0;

  void validate() const;
  DatasetMeta meta() const;
};

/// Template images, (n · modes) × h × w × c; class k owns k·modes ... k·modes + modes − 1.
ImageBatch synthetic_templates(const SyntheticSpec& spec);

std::pair<LabeledDataset, LabeledDataset> generate_synthetic(const SyntheticSpec& spec);

/// Records of 1 label byte followed by h·w·c pixel bytes in channel-planar
/// order (all of channel 0, then channel 1, ...), as in the CIFAR binaries.
/// Pixels are divided by 255. Errors name the record and byte offset.
/// With label_bytes > 1 the last label byte is the class (CIFAR-100 stores
/// coarse then fine).
LabeledDataset load_binary_dataset(const std::filesystem::path& path, const DatasetMeta& meta,
                                   Split split = Split::kTrain, int label_bytes = 1);

/// Inverse of load_binary_dataset; pixels are rounded to the nearest byte.
void write_binary_dataset(const std::filesystem::path& path, const LabeledDataset& dataset);

/// Seeded reshuffle every epoch; each epoch visits every sample exactly once,
/// the last batch may be short.
class BatchIterator {
 public:
  BatchIterator(int dataset_size, int batch_size, std::uint64_t seed);

  /// Next batch of sample indices; rolls into the next epoch when exhausted.
  std::vector<int> next();
  int epoch() const { return epoch_; }
  int batches_per_epoch() const { return (size_ + batch_size_ - 1) / batch_size_; }

  /// Batches of one epoch without any iterator state.
  static std::vector<std::vector<int>> epoch_batches(int dataset_size, int batch_size, std::uint64_t seed,
                                                     int epoch);

 private:
  int size_;
  int batch_size_;
  std::uint64_t seed_;
  int epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::vector<int>> batches_;
};

ImageBatch gather_images(const ImageBatch& images, const std::vector<int>& indices);
LabeledDataset subset(const LabeledDataset& dataset, const std::vector<int>& indices);

/// Per-channel mean/std computed on `train` and applied to both sets.
void standardize_channels(LabeledDataset& train, LabeledDataset& test);

}  // namespace podd

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace podd {

/// A stack of equally sized images, stored count × height × width × channels
/// (channel-last, row-major).
template <class S>
struct BasicImageBatch {
  int count = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<S> data;

  BasicImageBatch() = default;
  BasicImageBatch(int n, int h, int w, int c)
      : count(n), height(h), width(w), channels(c), data(static_cast<std::size_t>(n) * h * w * c) {}

  std::size_t image_size() const { return static_cast<std::size_t>(height) * width * channels; }

  std::span<S> image(int k) { return {data.data() + k * image_size(), image_size()}; }
  std::span<const S> image(int k) const { return {data.data() + k * image_size(), image_size()}; }
};

using ImageBatch = BasicImageBatch<double>;

}  // namespace podd

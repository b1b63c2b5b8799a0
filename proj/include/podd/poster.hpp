#pragma once

// Poster representation: pixel-budget accounting, patch-grid geometry and the
// extract / overlap-add pair that moves data and gradients between the poster
// and the patch dataset.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "podd/image.hpp"

namespace podd {

struct DatasetMeta {
  int n_classes = 0;
  int image_h = 0;
  int image_w = 0;
  int channels = 0;
  std::vector<std::string> class_names;

  /// Throws ConfigError unless n ≥ 2, dims ≥ 1 and names are n unique strings.
  void validate() const;
  std::size_t image_pixels() const { return static_cast<std::size_t>(image_h) * image_w; }
};

/// Rows × columns layout of a grid (class grid or patch grid).
struct GridShape {
  int rows = 0;
  int cols = 0;
  int cells() const { return rows * cols; }
  bool operator==(const GridShape&) const = default;
};

struct PosterDims {
  int height = 0;
  int width = 0;
  bool operator==(const PosterDims&) const = default;
};

/// Single trainable image, height × width × channels, channel-last.
struct Poster {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> pixels;

  Poster() = default;
  Poster(int h, int w, int c) : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c) {}

  double& at(int r, int c, int ch) { return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch]; }
  double at(int r, int c, int ch) const { return pixels[(static_cast<std::size_t>(r) * width + c) * channels + ch]; }
  PosterDims dims() const { return {height, width}; }
};

struct PatchPosition {
  int row = 0;
  int col = 0;
  bool operator==(const PatchPosition&) const = default;
};

struct ExtractionSpec {
  int poster_h = 0;
  int poster_w = 0;
  int patch_h = 0;
  int patch_w = 0;
  GridShape grid;
  std::vector<int> row_offsets;
  std::vector<int> col_offsets;
  /// Row-major over the patch grid.
  std::vector<PatchPosition> positions;

  int count() const { return static_cast<int>(positions.size()); }
};

struct DistillBudget {
  double ipc = 0.0;
  std::int64_t total_pixel_budget = 0;
};

/// floor(ipc · n · h · w). Throws ConfigError if ipc ≤ 0.
DistillBudget make_budget(const DatasetMeta& meta, double ipc);

/// Poster size for a pixel budget whose aspect ratio follows the class grid:
/// height = floor(sqrt(P · rows / cols)), width = floor(P / height).
/// Throws ConfigError when the result cannot hold one image.
PosterDims compute_poster_dims(const DatasetMeta& meta, double ipc, GridShape class_grid);

/// Patch offsets spanning the poster corner to corner; offset i along an axis
/// is round(i · (d − patch) / (count − 1)), rounding half away from zero.
ExtractionSpec make_extraction_spec(int poster_h, int poster_w, int patch_h, int patch_w, int grid_rows,
                                    int grid_cols);

/// Checks that `spec` was built for a poster of this size.
void check_spec_matches(const Poster& poster, const ExtractionSpec& spec);

ImageBatch extract_patches(const Poster& poster, const ExtractionSpec& spec);

/// Adjoint of extract_patches: overlap-add of patch-shaped gradients into a
/// poster-shaped gradient.
Poster accumulate_poster_gradient(const ImageBatch& patch_grads, const ExtractionSpec& spec);

/// Independent standard-normal pixels, deterministic per seed.
Poster init_poster(int height, int width, int channels, std::uint64_t seed);

}  // namespace podd

#include "podd/poster.hpp"

#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "podd/error.hpp"
#include "podd/rng.hpp"

namespace podd {

void DatasetMeta::validate() const {
  if (n_classes < 2) throw ConfigError("dataset needs at least 2 classes, got " + std::to_string(n_classes));
  if (image_h < 1 || image_w < 1 || channels < 1) throw ConfigError("image dimensions must be positive");
  if (static_cast<int>(class_names.size()) != n_classes) {
    throw ConfigError("expected " + std::to_string(n_classes) + " class names, got " +
                      std::to_string(class_names.size()));
  }
  std::set<std::string> unique(class_names.begin(), class_names.end());
  if (static_cast<int>(unique.size()) != n_classes) throw ConfigError("class names must be unique");
}

DistillBudget make_budget(const DatasetMeta& meta, double ipc) {
  if (!(ipc > 0.0) || !std::isfinite(ipc)) throw ConfigError("ipc must be a positive finite number");
  const double exact = ipc * meta.n_classes * static_cast<double>(meta.image_pixels());
  // ipc is usually a short decimal (0.4) whose binary form is a hair off;
  // absorb that before flooring.
  const auto budget = static_cast<std::int64_t>(std::floor(exact * (1.0 + 1e-12)));
  return {ipc, budget};
}

PosterDims compute_poster_dims(const DatasetMeta& meta, double ipc, GridShape class_grid) {
  if (class_grid.rows < 1 || class_grid.cols < 1) throw ConfigError("class grid dimensions must be positive");
  if (class_grid.cells() != meta.n_classes) {
    std::ostringstream msg;
    msg << "class grid " << class_grid.rows << "x" << class_grid.cols << " has " << class_grid.cells()
        << " cells but the dataset has " << meta.n_classes << " classes";
    throw ConfigError(msg.str());
  }
  if (meta.image_h < 1 || meta.image_w < 1) throw ConfigError("image dimensions must be positive");
  const std::int64_t budget = make_budget(meta, ipc).total_pixel_budget;

  // Largest h with h² · cols ≤ P · rows, in exact integer arithmetic.
  const std::int64_t rhs = budget * class_grid.rows;
  auto h = static_cast<std::int64_t>(std::sqrt(static_cast<long double>(rhs) / class_grid.cols));
  while (h > 0 && h * h * class_grid.cols > rhs) --h;
  while ((h + 1) * (h + 1) * class_grid.cols <= rhs) ++h;
  if (h < 1) throw ConfigError("pixel budget too small for any poster");
  const std::int64_t w = budget / h;

  if (h < meta.image_h || w < meta.image_w) {
    std::ostringstream msg;
    msg << "poster " << h << "x" << w << " (budget " << budget << " pixels) cannot hold one " << meta.image_h
        << "x" << meta.image_w << " image";
    throw ConfigError(msg.str());
  }
  return {static_cast<int>(h), static_cast<int>(w)};
}

namespace {

std::vector<int> axis_offsets(int length, int patch, int count, const char* axis) {
  std::vector<int> offsets(count, 0);
  if (count == 1) return offsets;
  const std::int64_t span = length - patch;
  const std::int64_t den = count - 1;
  for (int i = 0; i < count; ++i) {
    // round(i * span / den), half away from zero; all terms are non-negative.
    offsets[i] = static_cast<int>((2 * i * span + den) / (2 * den));
  }
  if (span > 0) {
    for (int i = 1; i < count; ++i) {
      if (offsets[i] == offsets[i - 1]) {
        std::ostringstream msg;
        msg << count << " patches along the " << axis << " axis do not have distinct offsets on length " << length
            << " with patch size " << patch;
        throw ConfigError(msg.str());
      }
    }
  }
  return offsets;
}

}  // namespace

ExtractionSpec make_extraction_spec(int poster_h, int poster_w, int patch_h, int patch_w, int grid_rows,
                                    int grid_cols) {
  if (patch_h < 1 || patch_w < 1) throw ConfigError("patch dimensions must be positive");
  if (grid_rows < 1 || grid_cols < 1) throw ConfigError("patch grid dimensions must be positive");
  if (poster_h < patch_h || poster_w < patch_w) {
    std::ostringstream msg;
    msg << "poster " << poster_h << "x" << poster_w << " is smaller than a " << patch_h << "x" << patch_w
        << " patch";
    throw ConfigError(msg.str());
  }
  ExtractionSpec spec;
  spec.poster_h = poster_h;
  spec.poster_w = poster_w;
  spec.patch_h = patch_h;
  spec.patch_w = patch_w;
  spec.grid = {grid_rows, grid_cols};
  spec.row_offsets = axis_offsets(poster_h, patch_h, grid_rows, "row");
  spec.col_offsets = axis_offsets(poster_w, patch_w, grid_cols, "column");
  spec.positions.reserve(static_cast<std::size_t>(grid_rows) * grid_cols);
  for (int r : spec.row_offsets)
    for (int c : spec.col_offsets) spec.positions.push_back({r, c});
  return spec;
}

void check_spec_matches(const Poster& poster, const ExtractionSpec& spec) {
  if (poster.height != spec.poster_h || poster.width != spec.poster_w) {
    std::ostringstream msg;
    msg << "extraction spec built for a " << spec.poster_h << "x" << spec.poster_w << " poster, got "
        << poster.height << "x" << poster.width;
    throw ConfigError(msg.str());
  }
}

ImageBatch extract_patches(const Poster& poster, const ExtractionSpec& spec) {
  check_spec_matches(poster, spec);
  const int c = poster.channels;
  ImageBatch out(spec.count(), spec.patch_h, spec.patch_w, c);
  const std::size_t row_len = static_cast<std::size_t>(spec.patch_w) * c;
  for (int k = 0; k < spec.count(); ++k) {
    const auto [r0, c0] = spec.positions[k];
    auto dst = out.image(k);
    for (int r = 0; r < spec.patch_h; ++r) {
      const double* src = &poster.pixels[(static_cast<std::size_t>(r0 + r) * poster.width + c0) * c];
      std::copy(src, src + row_len, dst.data() + r * row_len);
    }
  }
  return out;
}

Poster accumulate_poster_gradient(const ImageBatch& patch_grads, const ExtractionSpec& spec) {
  if (patch_grads.count != spec.count() || patch_grads.height != spec.patch_h || patch_grads.width != spec.patch_w) {
    throw ConfigError("patch gradient shape does not match the extraction spec");
  }
  const int c = patch_grads.channels;
  Poster grad(spec.poster_h, spec.poster_w, c);
  const std::size_t row_len = static_cast<std::size_t>(spec.patch_w) * c;
  for (int k = 0; k < spec.count(); ++k) {
    const auto [r0, c0] = spec.positions[k];
    auto src = patch_grads.image(k);
    for (int r = 0; r < spec.patch_h; ++r) {
      double* dst = &grad.pixels[(static_cast<std::size_t>(r0 + r) * grad.width + c0) * c];
      const double* s = src.data() + r * row_len;
      for (std::size_t i = 0; i < row_len; ++i) dst[i] += s[i];
    }
  }
  return grad;
}

Poster init_poster(int height, int width, int channels, std::uint64_t seed) {
  if (height < 1 || width < 1 || channels < 1) throw ConfigError("poster dimensions must be positive");
  Poster poster(height, width, channels);
  Rng rng(derive_seed(seed, {tag(SeedTag::kPoster)}));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : poster.pixels) v = normal(rng);
  return poster;
}

}  // namespace podd

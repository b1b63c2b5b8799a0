#pragma once

// Per-patch soft labels. Fixed labels take the majority class of the patch
// window in the upsampled class grid; learned labels average-pool a small
// label tensor over the window and L1-normalize.

#include <span>
#include <vector>

#include "podd/ordering.hpp"
#include "podd/poster.hpp"

namespace podd {

using SoftLabel = std::vector<double>;

/// Poster-sized nearest-neighbor upsampling of a class grid.
struct PixelClassMap {
  int height = 0;
  int width = 0;
  std::vector<int> classes;

  int at(int r, int c) const { return classes[static_cast<std::size_t>(r) * width + c]; }
};

/// Learnable label parameters, one n-vector per class-grid cell.
struct LabelTensor {
  GridShape shape;
  int n = 0;
  std::vector<double> values;  // rows × cols × n

  LabelTensor() = default;
  LabelTensor(GridShape s, int classes)
      : shape(s), n(classes), values(static_cast<std::size_t>(s.cells()) * classes, 0.0) {}

  std::span<double> cell(int r, int c) { return {values.data() + (static_cast<std::size_t>(r) * shape.cols + c) * n, static_cast<std::size_t>(n)}; }
  std::span<const double> cell(int r, int c) const { return {values.data() + (static_cast<std::size_t>(r) * shape.cols + c) * n, static_cast<std::size_t>(n)}; }
};

/// Pixel (r, c) takes cell (floor(r · rows / height), floor(c · cols / width)).
PixelClassMap upsample_class_grid(const ClassOrder& order, int height, int width);

/// One-hot majority class of the window, or 1/k on each of k tied classes.
SoftLabel fixed_label(const PixelClassMap& pcm, PatchPosition pos, int patch_h, int patch_w, int n);

/// Weight of each class-grid cell inside a window of the upsampled tensor:
/// (fraction of window rows mapping to grid row i) × (same for columns).
struct CellWeights {
  std::vector<double> row_weight;  // per grid row
  std::vector<double> col_weight;  // per grid column
};
CellWeights window_cell_weights(GridShape grid, int poster_h, int poster_w, PatchPosition pos, int patch_h,
                                int patch_w);

/// Average-pooled and L1-normalized label window. A window whose pooled sum
/// is zero yields the uniform distribution.
SoftLabel learned_label(const LabelTensor& y, int poster_h, int poster_w, PatchPosition pos, int patch_h,
                        int patch_w);

/// Vector-Jacobian product of learned_label: adds (∂label/∂Y)ᵀ · label_grad
/// into `y_grad`.
void learned_label_backward(const LabelTensor& y, int poster_h, int poster_w, PatchPosition pos, int patch_h,
                            int patch_w, std::span<const double> label_grad, LabelTensor& y_grad);

/// Clips negative entries to zero.
LabelTensor project_labels(LabelTensor y);
void project_labels_in_place(LabelTensor& y);

/// Y[i, j] = one-hot(order[i, j]).
LabelTensor init_label_tensor(const ClassOrder& order, int n);

/// All labels of a patch grid, p × n row-major.
std::vector<double> fixed_labels_for(const ClassOrder& order, const ExtractionSpec& spec);
std::vector<double> learned_labels_for(const LabelTensor& y, const ExtractionSpec& spec);

}  // namespace podd

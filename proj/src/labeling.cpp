#include "podd/labeling.hpp"

#include <algorithm>

#include "podd/error.hpp"

namespace podd {

namespace {

int cell_index(int pixel, int cells, int extent) {
  return static_cast<int>(static_cast<long long>(pixel) * cells / extent);
}

void check_window(int poster_h, int poster_w, PatchPosition pos, int patch_h, int patch_w) {
  if (pos.row < 0 || pos.col < 0 || pos.row + patch_h > poster_h || pos.col + patch_w > poster_w) {
    throw ConfigError("label window lies outside the poster");
  }
}

}  // namespace

PixelClassMap upsample_class_grid(const ClassOrder& order, int height, int width) {
  if (height < order.shape.rows || width < order.shape.cols) {
    throw ConfigError("poster is smaller than the class grid");
  }
  PixelClassMap pcm{height, width, std::vector<int>(static_cast<std::size_t>(height) * width)};
  for (int r = 0; r < height; ++r) {
    const int gr = cell_index(r, order.shape.rows, height);
    for (int c = 0; c < width; ++c) pcm.classes[static_cast<std::size_t>(r) * width + c] = order.at(gr, cell_index(c, order.shape.cols, width));
  }
  return pcm;
}

SoftLabel fixed_label(const PixelClassMap& pcm, PatchPosition pos, int patch_h, int patch_w, int n) {
  check_window(pcm.height, pcm.width, pos, patch_h, patch_w);
  std::vector<long> counts(n, 0);
  for (int r = pos.row; r < pos.row + patch_h; ++r)
    for (int c = pos.col; c < pos.col + patch_w; ++c) ++counts[pcm.at(r, c)];
  const long top = *std::max_element(counts.begin(), counts.end());
  const auto ties = std::count(counts.begin(), counts.end(), top);
  SoftLabel label(n, 0.0);
  for (int k = 0; k < n; ++k)
    if (counts[k] == top) label[k] = 1.0 / static_cast<double>(ties);
  return label;
}

CellWeights window_cell_weights(GridShape grid, int poster_h, int poster_w, PatchPosition pos, int patch_h,
                                int patch_w) {
  check_window(poster_h, poster_w, pos, patch_h, patch_w);
  CellWeights w{std::vector<double>(grid.rows, 0.0), std::vector<double>(grid.cols, 0.0)};
  for (int r = pos.row; r < pos.row + patch_h; ++r) w.row_weight[cell_index(r, grid.rows, poster_h)] += 1.0;
  for (int c = pos.col; c < pos.col + patch_w; ++c) w.col_weight[cell_index(c, grid.cols, poster_w)] += 1.0;
  for (double& v : w.row_weight) v /= patch_h;
  for (double& v : w.col_weight) v /= patch_w;
  return w;
}

namespace {

std::vector<double> pooled_window(const LabelTensor& y, const CellWeights& w) {
  std::vector<double> v(y.n, 0.0);
  for (int i = 0; i < y.shape.rows; ++i) {
    if (w.row_weight[i] == 0.0) continue;
    for (int j = 0; j < y.shape.cols; ++j) {
      const double wij = w.row_weight[i] * w.col_weight[j];
      if (wij == 0.0) continue;
      const auto cell = y.cell(i, j);
      for (int k = 0; k < y.n; ++k) v[k] += wij * cell[k];
    }
  }
  return v;
}

}  // namespace

SoftLabel learned_label(const LabelTensor& y, int poster_h, int poster_w, PatchPosition pos, int patch_h,
                        int patch_w) {
  const auto w = window_cell_weights(y.shape, poster_h, poster_w, pos, patch_h, patch_w);
  auto v = pooled_window(y, w);
  double sum = 0.0;
  for (double x : v) sum += x;
  if (sum == 0.0) return SoftLabel(y.n, 1.0 / y.n);
  for (double& x : v) x /= sum;
  return v;
}

void learned_label_backward(const LabelTensor& y, int poster_h, int poster_w, PatchPosition pos, int patch_h,
                            int patch_w, std::span<const double> label_grad, LabelTensor& y_grad) {
  const auto w = window_cell_weights(y.shape, poster_h, poster_w, pos, patch_h, patch_w);
  const auto v = pooled_window(y, w);
  double sum = 0.0;
  for (double x : v) sum += x;
  if (sum == 0.0) return;  // constant uniform output

  // label = v / s  ⇒  ∂L/∂v_k = (g_k − Σ_j g_j label_j) / s
  double dot = 0.0;
  for (int k = 0; k < y.n; ++k) dot += label_grad[k] * v[k] / sum;
  std::vector<double> dv(y.n);
  for (int k = 0; k < y.n; ++k) dv[k] = (label_grad[k] - dot) / sum;

  for (int i = 0; i < y.shape.rows; ++i) {
    for (int j = 0; j < y.shape.cols; ++j) {
      const double wij = w.row_weight[i] * w.col_weight[j];
      if (wij == 0.0) continue;
      auto cell = y_grad.cell(i, j);
      for (int k = 0; k < y.n; ++k) cell[k] += wij * dv[k];
    }
  }
}

LabelTensor project_labels(LabelTensor y) {
  project_labels_in_place(y);
  return y;
}

void project_labels_in_place(LabelTensor& y) {
  for (double& v : y.values) v = std::max(v, 0.0);
}

LabelTensor init_label_tensor(const ClassOrder& order, int n) {
  order.validate();
  if (order.n() != n) throw ConfigError("class order does not cover the dataset classes");
  LabelTensor y(order.shape, n);
  for (int r = 0; r < order.shape.rows; ++r)
    for (int c = 0; c < order.shape.cols; ++c) y.cell(r, c)[order.at(r, c)] = 1.0;
  return y;
}

std::vector<double> fixed_labels_for(const ClassOrder& order, const ExtractionSpec& spec) {
  const int n = order.n();
  const auto pcm = upsample_class_grid(order, spec.poster_h, spec.poster_w);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(spec.count()) * n);
  for (const auto& pos : spec.positions) {
    const auto l = fixed_label(pcm, pos, spec.patch_h, spec.patch_w, n);
    out.insert(out.end(), l.begin(), l.end());
  }
  return out;
}

std::vector<double> learned_labels_for(const LabelTensor& y, const ExtractionSpec& spec) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(spec.count()) * y.n);
  for (const auto& pos : spec.positions) {
    const auto l = learned_label(y, spec.poster_h, spec.poster_w, pos, spec.patch_h, spec.patch_w);
    out.insert(out.end(), l.begin(), l.end());
  }
  return out;
}

}  // namespace podd

#pragma once

// Class placement on the poster grid: cosine distances between class-name
// embeddings, a greedy zigzag placement, and the neighbor-distance score used
// to compare orders.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "podd/poster.hpp"

namespace podd {

struct EmbeddingSet {
  std::vector<std::string> names;
  std::vector<std::vector<double>> vectors;

  /// Non-empty, unique names, equal dimensions, strictly positive norms.
  void validate() const;
  int size() const { return static_cast<int>(names.size()); }
};

/// Symmetric n × n matrix of cosine distances, row-major.
struct DistanceMatrix {
  int n = 0;
  std::vector<double> values;

  double operator()(int i, int j) const { return values[static_cast<std::size_t>(i) * n + j]; }
  double& operator()(int i, int j) { return values[static_cast<std::size_t>(i) * n + j]; }
};

/// Grid of class indices, row-major. Every class appears exactly once.
struct ClassOrder {
  GridShape shape;
  std::vector<int> grid;

  int at(int r, int c) const { return grid[static_cast<std::size_t>(r) * shape.cols + c]; }
  int n() const { return shape.cells(); }
  void validate() const;
  bool operator==(const ClassOrder&) const = default;
};

struct GridCell {
  int row = 0;
  int col = 0;
  bool operator==(const GridCell&) const = default;
};

/// Reads {"dim": d, "embeddings": {"name": [...]}} and returns the vectors in
/// the order of `class_names`. Missing names are all listed in the error.
EmbeddingSet load_embeddings(const std::filesystem::path& path, const std::vector<std::string>& class_names);

DistanceMatrix cosine_distance_matrix(const EmbeddingSet& emb);

/// Boustrophedon traversal: even rows left to right, odd rows right to left.
std::vector<GridCell> zigzag_traversal(int rows, int cols);

/// Places `first_class` at (0, 0), then fills cells in zigzag order with the
/// unplaced class whose summed distance to the already placed 4-neighbors of
/// the cell is smallest. Ties go to the lowest class index.
ClassOrder greedy_place(const DistanceMatrix& g, GridShape shape, int first_class = 0);

/// 1 / (sum of distances over horizontally and vertically adjacent cells).
/// Returns +infinity when that sum is zero.
double ordering_score(const ClassOrder& order, const DistanceMatrix& g);

/// Best order by full enumeration (n ≤ 8); ties resolve to the
/// lexicographically smallest grid.
ClassOrder exhaustive_best_order(const DistanceMatrix& g, GridShape shape);

/// Row-major identity placement (class k in cell k).
ClassOrder identity_order(GridShape shape);

ClassOrder random_order(GridShape shape, std::uint64_t seed);

}  // namespace podd

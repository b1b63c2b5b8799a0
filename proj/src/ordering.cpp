#include "podd/ordering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "podd/error.hpp"
#include "podd/rng.hpp"

namespace podd {

void EmbeddingSet::validate() const {
  if (names.empty()) throw ConfigError("embedding set is empty");
  if (names.size() != vectors.size()) throw ConfigError("embedding names and vectors differ in count");
  std::set<std::string> unique(names.begin(), names.end());
  if (unique.size() != names.size()) throw ConfigError("embedding names must be unique");
  const std::size_t dim = vectors.front().size();
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != dim || dim == 0) {
      throw ConfigError("embedding for '" + names[i] + "' has the wrong dimension");
    }
    double norm2 = 0.0;
    for (double v : vectors[i]) {
      if (!std::isfinite(v)) throw ConfigError("embedding for '" + names[i] + "' is not finite");
      norm2 += v * v;
    }
    if (!(norm2 > 0.0)) throw ConfigError("embedding for '" + names[i] + "' has zero norm");
  }
}

void ClassOrder::validate() const {
  if (shape.rows < 1 || shape.cols < 1) throw ConfigError("class order grid must be non-empty");
  if (static_cast<int>(grid.size()) != shape.cells()) throw ConfigError("class order grid has the wrong size");
  std::vector<char> seen(grid.size(), 0);
  for (int c : grid) {
    if (c < 0 || c >= static_cast<int>(grid.size()) || seen[c]) {
      throw ConfigError("class order grid is not a permutation of the class indices");
    }
    seen[c] = 1;
  }
}

EmbeddingSet load_embeddings(const std::filesystem::path& path, const std::vector<std::string>& class_names) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open embedding file " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("embedding file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.contains("embeddings") || !doc["embeddings"].is_object()) {
    throw ConfigError("embedding file " + path.string() + " has no \"embeddings\" object");
  }
  const auto& table = doc["embeddings"];
  std::vector<std::string> missing;
  for (const auto& name : class_names)
    if (!table.contains(name)) missing.push_back(name);
  if (!missing.empty()) {
    std::ostringstream msg;
    msg << "missing class embeddings for:";
    for (const auto& m : missing) msg << " '" << m << "'";
    throw ConfigError(msg.str());
  }
  EmbeddingSet set;
  for (const auto& name : class_names) {
    set.names.push_back(name);
    set.vectors.push_back(table[name].get<std::vector<double>>());
  }
  if (doc.contains("dim")) {
    const auto dim = doc["dim"].get<std::size_t>();
    for (std::size_t i = 0; i < set.vectors.size(); ++i)
      if (set.vectors[i].size() != dim) throw ConfigError("embedding for '" + set.names[i] + "' is not of size dim");
  }
  set.validate();
  return set;
}

DistanceMatrix cosine_distance_matrix(const EmbeddingSet& emb) {
  emb.validate();
  const int n = emb.size();
  std::vector<double> norms(n);
  for (int i = 0; i < n; ++i)
    norms[i] = std::sqrt(std::inner_product(emb.vectors[i].begin(), emb.vectors[i].end(), emb.vectors[i].begin(), 0.0));
  DistanceMatrix g{n, std::vector<double>(static_cast<std::size_t>(n) * n, 0.0)};
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double dot = std::inner_product(emb.vectors[i].begin(), emb.vectors[i].end(), emb.vectors[j].begin(), 0.0);
      const double d = std::clamp(1.0 - dot / (norms[i] * norms[j]), 0.0, 2.0);
      g(i, j) = d;
      g(j, i) = d;
    }
  }
  return g;
}

std::vector<GridCell> zigzag_traversal(int rows, int cols) {
  std::vector<GridCell> cells;
  cells.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int k = 0; k < cols; ++k) cells.push_back({r, r % 2 == 0 ? k : cols - 1 - k});
  }
  return cells;
}

ClassOrder greedy_place(const DistanceMatrix& g, GridShape shape, int first_class) {
  const int n = g.n;
  if (shape.rows < 1 || shape.cols < 1 || shape.cells() != n) {
    throw ConfigError("class grid " + std::to_string(shape.rows) + "x" + std::to_string(shape.cols) +
                      " does not hold " + std::to_string(n) + " classes");
  }
  if (first_class < 0 || first_class >= n) throw ConfigError("first class index out of range");

  constexpr int kEmpty = -1;
  ClassOrder order{shape, std::vector<int>(n, kEmpty)};
  std::vector<char> placed(n, 0);
  auto cell = [&](int r, int c) -> int& { return order.grid[static_cast<std::size_t>(r) * shape.cols + c]; };

  const auto path = zigzag_traversal(shape.rows, shape.cols);
  cell(0, 0) = first_class;
  placed[first_class] = 1;
  constexpr int kDr[] = {-1, 1, 0, 0};
  constexpr int kDc[] = {0, 0, -1, 1};
  for (std::size_t step = 1; step < path.size(); ++step) {
    const auto [r, c] = path[step];
    std::vector<int> neighbors;
    for (int k = 0; k < 4; ++k) {
      const int nr = r + kDr[k];
      const int nc = c + kDc[k];
      if (nr < 0 || nc < 0 || nr >= shape.rows || nc >= shape.cols) continue;
      if (cell(nr, nc) != kEmpty) neighbors.push_back(cell(nr, nc));
    }
    int best = kEmpty;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int cand = 0; cand < n; ++cand) {
      if (placed[cand]) continue;
      double cost = 0.0;
      for (int m : neighbors) cost += g(m, cand);
      if (cost < best_cost) {
        best_cost = cost;
        best = cand;
      }
    }
    cell(r, c) = best;
    placed[best] = 1;
  }
  return order;
}

double ordering_score(const ClassOrder& order, const DistanceMatrix& g) {
  double total = 0.0;
  for (int r = 0; r < order.shape.rows; ++r) {
    for (int c = 0; c < order.shape.cols; ++c) {
      if (c + 1 < order.shape.cols) total += g(order.at(r, c), order.at(r, c + 1));
      if (r + 1 < order.shape.rows) total += g(order.at(r, c), order.at(r + 1, c));
    }
  }
  if (total == 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / total;
}

ClassOrder exhaustive_best_order(const DistanceMatrix& g, GridShape shape) {
  if (g.n > 8) throw ConfigError("exhaustive search is limited to 8 classes");
  if (shape.cells() != g.n) throw ConfigError("class grid does not match the distance matrix");
  ClassOrder current = identity_order(shape);
  ClassOrder best = current;
  double best_score = ordering_score(current, g);
  while (std::next_permutation(current.grid.begin(), current.grid.end())) {
    const double s = ordering_score(current, g);
    if (s > best_score) {
      best_score = s;
      best = current;
    }
  }
  return best;
}

ClassOrder identity_order(GridShape shape) {
  ClassOrder order{shape, std::vector<int>(shape.cells())};
  std::iota(order.grid.begin(), order.grid.end(), 0);
  return order;
}

ClassOrder random_order(GridShape shape, std::uint64_t seed) {
  ClassOrder order = identity_order(shape);
  Rng rng(derive_seed(seed, {tag(SeedTag::kRandomOrder)}));
  std::shuffle(order.grid.begin(), order.grid.end(), rng);
  return order;
}

}  // namespace podd

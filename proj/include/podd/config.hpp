#pragma once

// Run configuration: one JSON document drives every command. Relative paths
// inside it resolve against the directory of the config file.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "podd/data.hpp"
#include "podd/distill.hpp"
#include "podd/evaluation.hpp"
#include "podd/ordering.hpp"

namespace podd {

struct DatasetSource {
  enum class Kind { kSynthetic, kBinary };
  Kind kind = Kind::kSynthetic;
  SyntheticSpec synthetic;
  DatasetMeta meta;  // binary datasets only; derived from `synthetic` otherwise
  std::filesystem::path train_path;
  std::filesystem::path test_path;
  int label_bytes = 1;
  bool standardize = false;  // per-channel mean/std on top of /255
};

struct RunConfig {
  DatasetSource dataset;
  std::filesystem::path embeddings_path;
  std::filesystem::path class_order_path;
  int first_class = 0;
  DistillConfig distill;
  EvalConfig eval;
  std::filesystem::path output_dir;
  nlohmann::json raw;  // after overrides, used for hashing

  DatasetMeta meta() const;
  /// Stable hash of the effective configuration.
  std::string hash() const;
};

/// Applies "a.b.c=value" overrides; values parse as JSON when possible and as
/// plain strings otherwise.
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& overrides);

RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Full validation before any compute: parameters, dataset shape, poster
/// geometry, patch grid, model divisibility. Throws ConfigError.
PosterGeometry validate_run_config(const RunConfig& config, const ClassOrder& order);

std::pair<LabeledDataset, LabeledDataset> load_datasets(const RunConfig& config);

/// Class order from class_order_path, else PoCO on embeddings_path, else the
/// row-major identity placement.
ClassOrder resolve_class_order(const RunConfig& config);

nlohmann::json class_order_to_json(const ClassOrder& order);
ClassOrder class_order_from_json(const nlohmann::json& doc);

}  // namespace podd

#include "podd/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "podd/error.hpp"
#include "podd/io.hpp"

namespace podd {

using nlohmann::json;

namespace {

void check_keys(const json& obj, const char* section, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string("config section '") + section + "' must be an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items()) {
    if (!ok.count(key)) throw ConfigError(std::string("unknown key '") + key + "' in config section '" + section + "'");
  }
}

template <class T>
void read(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

GridShape read_grid(const json& obj, const char* key) {
  if (!obj.contains(key)) throw ConfigError(std::string("config is missing '") + key + "'");
  const auto& g = obj.at(key);
  check_keys(g, key, {"rows", "cols"});
  GridShape s;
  read(g, "rows", s.rows);
  read(g, "cols", s.cols);
  if (s.rows < 1 || s.cols < 1) throw ConfigError(std::string("'") + key + "' needs positive rows and cols");
  return s;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

DatasetMeta RunConfig::meta() const {
  return dataset.kind == DatasetSource::Kind::kSynthetic ? dataset.synthetic.meta() : dataset.meta;
}

std::string RunConfig::hash() const { return fnv1a_hex(raw.dump()); }

void apply_overrides(json& doc, const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + ov + "' is not of the form key=value");
    const std::string key = ov.substr(0, eq);
    const std::string text = ov.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    json* node = &doc;
    std::stringstream parts(key);
    std::string part;
    std::vector<std::string> path;
    while (std::getline(parts, part, '.')) path.push_back(part);
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!node->is_object()) throw ConfigError("override '" + ov + "' descends into a non-object");
      node = &(*node)[path[i]];
    }
    (*node)[path.back()] = value;
  }
}

RunConfig parse_run_config(const json& doc, const std::filesystem::path& base_dir) {
  check_keys(doc, "root",
             {"dataset", "embeddings_path", "class_order_path", "first_class", "ipc", "class_grid", "patch_grid",
              "model", "distill", "eval", "output_dir", "description"});
  RunConfig cfg;
  cfg.raw = doc;

  if (!doc.contains("dataset")) throw ConfigError("config is missing 'dataset'");
  const auto& ds = doc.at("dataset");
  check_keys(ds, "dataset",
             {"kind", "synthetic", "train_path", "test_path", "image_h", "image_w", "channels", "n_classes",
              "class_names", "normalization", "label_bytes"});
  std::string kind = "synthetic";
  read(ds, "kind", kind);
  std::string norm = "divide255";
  read(ds, "normalization", norm);
  if (norm != "divide255" && norm != "standardize") throw ConfigError("normalization must be divide255 or standardize");
  cfg.dataset.standardize = norm == "standardize";
  if (kind == "synthetic") {
    cfg.dataset.kind = DatasetSource::Kind::kSynthetic;
    if (ds.contains("synthetic")) {
      const auto& s = ds.at("synthetic");
      check_keys(s, "dataset.synthetic",
                 {"n_classes", "image_h", "image_w", "channels", "samples_per_class", "test_samples_per_class",
                  "signal", "noise_sigma", "template_smoothing", "modes_per_class", "max_shift", "seed"});
      auto& sp = cfg.dataset.synthetic;
      read(s, "n_classes", sp.n_classes);
      read(s, "image_h", sp.image_h);
      read(s, "image_w", sp.image_w);
      read(s, "channels", sp.channels);
      read(s, "samples_per_class", sp.samples_per_class);
      read(s, "test_samples_per_class", sp.test_samples_per_class);
      read(s, "signal", sp.signal);
      read(s, "noise_sigma", sp.noise_sigma);
      read(s, "template_smoothing", sp.template_smoothing);
      read(s, "modes_per_class", sp.modes_per_class);
      read(s, "max_shift", sp.max_shift);
      read(s, "seed", sp.seed);
    }
    cfg.dataset.synthetic.validate();
  } else if (kind == "binary") {
    cfg.dataset.kind = DatasetSource::Kind::kBinary;
    auto& m = cfg.dataset.meta;
    read(ds, "image_h", m.image_h);
    read(ds, "image_w", m.image_w);
    read(ds, "channels", m.channels);
    read(ds, "class_names", m.class_names);
    read(ds, "n_classes", m.n_classes);
    read(ds, "label_bytes", cfg.dataset.label_bytes);
    if (cfg.dataset.label_bytes < 1) throw ConfigError("label_bytes must be at least 1");
    if (m.class_names.empty()) {
      for (int k = 0; k < m.n_classes; ++k) m.class_names.push_back("class_" + std::to_string(k));
    } else if (!ds.contains("n_classes")) {
      m.n_classes = static_cast<int>(m.class_names.size());
    }
    m.validate();
    std::string train, test;
    read(ds, "train_path", train);
    read(ds, "test_path", test);
    cfg.dataset.train_path = resolve(base_dir, train);
    cfg.dataset.test_path = resolve(base_dir, test);
  } else {
    throw ConfigError("dataset kind must be 'synthetic' or 'binary', got '" + kind + "'");
  }

  std::string emb, order, out;
  read(doc, "embeddings_path", emb);
  read(doc, "class_order_path", order);
  read(doc, "output_dir", out);
  read(doc, "first_class", cfg.first_class);
  cfg.embeddings_path = resolve(base_dir, emb);
  cfg.class_order_path = resolve(base_dir, order);
  cfg.output_dir = resolve(base_dir, out);

  auto& d = cfg.distill;
  if (!doc.contains("ipc")) throw ConfigError("config is missing 'ipc'");
  read(doc, "ipc", d.ipc);
  d.class_grid = read_grid(doc, "class_grid");
  d.patch_grid = read_grid(doc, "patch_grid");

  if (doc.contains("model")) {
    const auto& m = doc.at("model");
    check_keys(m, "model", {"depth", "width", "norm_eps"});
    read(m, "depth", d.model.depth);
    read(m, "width", d.model.width);
    read(m, "norm_eps", d.model.norm_eps);
  }

  if (doc.contains("distill")) {
    const auto& s = doc.at("distill");
    check_keys(s, "distill",
               {"T", "delta_T", "bs_d", "bs", "outer_lr", "inner_lr", "epochs", "max_outer_steps", "seed",
                "label_mode", "optimizer", "checkpoint_every"});
    read(s, "T", d.T);
    read(s, "delta_T", d.delta_T);
    read(s, "bs_d", d.bs_d);
    read(s, "bs", d.bs);
    read(s, "outer_lr", d.outer_lr);
    read(s, "inner_lr", d.inner_lr);
    read(s, "epochs", d.epochs);
    read(s, "max_outer_steps", d.max_outer_steps);
    read(s, "seed", d.seed);
    read(s, "checkpoint_every", d.checkpoint_every);
    std::string mode = "learned";
    read(s, "label_mode", mode);
    if (mode == "learned") d.label_mode = LabelMode::kLearned;
    else if (mode == "fixed") d.label_mode = LabelMode::kFixed;
    else throw ConfigError("label_mode must be 'fixed' or 'learned'");
    std::string opt = "adam";
    read(s, "optimizer", opt);
    if (opt == "adam") d.optimizer = OuterOptimizer::kAdam;
    else if (opt == "sgd") d.optimizer = OuterOptimizer::kSgd;
    else throw ConfigError("optimizer must be 'adam' or 'sgd'");
  }
  d.validate();

  auto& e = cfg.eval;
  e.lr = d.inner_lr;
  e.seed = d.seed;
  if (doc.contains("eval")) {
    const auto& s = doc.at("eval");
    check_keys(s, "eval",
               {"n_models", "train_steps", "lr", "batch_size", "seed", "plateau_window", "plateau_tol", "curve_every"});
    read(s, "n_models", e.n_models);
    read(s, "train_steps", e.train_steps);
    read(s, "lr", e.lr);
    read(s, "batch_size", e.batch_size);
    read(s, "seed", e.seed);
    read(s, "plateau_window", e.plateau_window);
    read(s, "plateau_tol", e.plateau_tol);
    read(s, "curve_every", e.curve_every);
  }
  e.model = d.model;
  e.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  apply_overrides(doc, overrides);
  return parse_run_config(doc, path.parent_path());
}

PosterGeometry validate_run_config(const RunConfig& config, const ClassOrder& order) {
  const auto& m = config.distill.model;
  if (m.depth != 3 && m.depth != 4) throw ConfigError("model depth must be 3 or 4");
  auto geom = make_geometry(config.meta(), config.distill, order);
  if (config.dataset.kind == DatasetSource::Kind::kBinary) {
    if (config.dataset.train_path.empty() || config.dataset.test_path.empty()) {
      throw ConfigError("binary datasets need train_path and test_path");
    }
  }
  if (config.first_class < 0 || config.first_class >= config.meta().n_classes) {
    throw ConfigError("first_class out of range");
  }
  return geom;
}

std::pair<LabeledDataset, LabeledDataset> load_datasets(const RunConfig& config) {
  std::pair<LabeledDataset, LabeledDataset> sets;
  if (config.dataset.kind == DatasetSource::Kind::kSynthetic) {
    sets = generate_synthetic(config.dataset.synthetic);
  } else {
    sets = {load_binary_dataset(config.dataset.train_path, config.dataset.meta, Split::kTrain, config.dataset.label_bytes),
            load_binary_dataset(config.dataset.test_path, config.dataset.meta, Split::kTest, config.dataset.label_bytes)};
  }
  if (config.dataset.standardize) standardize_channels(sets.first, sets.second);
  if (config.distill.bs > sets.first.size()) {
    throw ConfigError("bs = " + std::to_string(config.distill.bs) + " exceeds the " +
                      std::to_string(sets.first.size()) + " training images");
  }
  return sets;
}

json class_order_to_json(const ClassOrder& order) {
  json grid = json::array();
  for (int r = 0; r < order.shape.rows; ++r) {
    json row = json::array();
    for (int c = 0; c < order.shape.cols; ++c) row.push_back(order.at(r, c));
    grid.push_back(row);
  }
  return {{"rows", order.shape.rows}, {"cols", order.shape.cols}, {"grid", grid}};
}

ClassOrder class_order_from_json(const json& doc) {
  try {
    ClassOrder order;
    order.shape = {doc.at("rows").get<int>(), doc.at("cols").get<int>()};
    const auto& grid = doc.at("grid");
    if (static_cast<int>(grid.size()) != order.shape.rows) throw ConfigError("class order has the wrong number of rows");
    for (const auto& row : grid) {
      if (static_cast<int>(row.size()) != order.shape.cols) throw ConfigError("class order row has the wrong length");
      for (const auto& v : row) order.grid.push_back(v.get<int>());
    }
    order.validate();
    return order;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed class order JSON: ") + e.what());
  }
}

ClassOrder resolve_class_order(const RunConfig& config) {
  const auto shape = config.distill.class_grid;
  if (!config.class_order_path.empty()) {
    std::ifstream in(config.class_order_path);
    if (!in) throw ConfigError("cannot open class order file " + config.class_order_path.string());
    json doc;
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw ConfigError("class order file is not valid JSON: " + std::string(e.what()));
    }
    auto order = class_order_from_json(doc);
    if (order.shape != shape) throw ConfigError("class order file grid differs from the configured class grid");
    return order;
  }
  if (!config.embeddings_path.empty()) {
    const auto meta = config.meta();
    const auto emb = load_embeddings(config.embeddings_path, meta.class_names);
    return greedy_place(cosine_distance_matrix(emb), shape, config.first_class);
  }
  return identity_order(shape);
}

}  // namespace podd

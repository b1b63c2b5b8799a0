#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "podd/config.hpp"
#include "podd/error.hpp"
#include "podd/io.hpp"

namespace podd::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y%m%dT%H%M%S");
  return os.str();
}

fs::path open_run_dir(const RunConfig& cfg, const std::string& explicit_dir) {
  fs::path dir;
  if (!explicit_dir.empty()) {
    dir = explicit_dir;
  } else {
    fs::path root = "runs";
    if (const char* env = std::getenv("PODD_RUN_ROOT"); env && *env) root = env;
    else if (!cfg.output_dir.empty()) root = cfg.output_dir;
    const std::string base = cfg.hash() + "-" + timestamp();
    dir = root / base;
    for (int k = 1; fs::exists(dir); ++k) dir = root / (base + "-" + std::to_string(k));
  }
  fs::create_directories(dir);
  return dir;
}

fs::path require_run_dir(const Options& opt) {
  if (opt.run_dir.empty()) throw ConfigError("--run-dir is required here");
  if (!fs::is_directory(opt.run_dir)) throw ConfigError("run directory " + opt.run_dir + " does not exist");
  return opt.run_dir;
}

struct Setup {
  RunConfig cfg;
  ClassOrder order;
  PosterGeometry geom;
};

Setup setup(const Options& opt) {
  Setup s;
  s.cfg = load_run_config(opt.config, opt.overrides);
  s.order = resolve_class_order(s.cfg);
  s.geom = validate_run_config(s.cfg, s.order);
  return s;
}

json geometry_json(const PosterGeometry& g) {
  return {{"poster", {{"height", g.dims.height}, {"width", g.dims.width}, {"channels", g.meta.channels}}},
          {"patch", {{"height", g.spec.patch_h}, {"width", g.spec.patch_w}}},
          {"patch_grid", {{"rows", g.spec.grid.rows}, {"cols", g.spec.grid.cols}}},
          {"patch_count", g.spec.count()},
          {"row_offsets", g.spec.row_offsets},
          {"col_offsets", g.spec.col_offsets}};
}

void write_json(const fs::path& path, const json& doc) { write_text_atomic(path, doc.dump(2) + "\n"); }

// Hash recorded next to the artifacts, empty when there is none.
std::string recorded_hash(const fs::path& dir) {
  const auto path = dir / "run.json";
  if (dir.empty() || !fs::exists(path)) return {};
  try {
    const auto doc = json::parse(std::ifstream(path));
    return doc.value("config_hash", std::string{});
  } catch (const json::exception&) {
    return {};
  }
}

void warn_on_hash_mismatch(const fs::path& dir, const RunConfig& cfg) {
  const auto rec = recorded_hash(dir);
  if (!rec.empty() && rec != cfg.hash()) {
    std::cerr << "warning: artifacts in " << dir.string() << " were produced with config " << rec
              << ", current config is " << cfg.hash() << '\n';
  }
}

// "4x2" means 4 columns by 2 rows.
std::optional<GridShape> parse_grid(const std::string& text) {
  const auto x = text.find_first_of("xX");
  if (x == std::string::npos) return std::nullopt;
  try {
    std::size_t used = 0;
    const int cols = std::stoi(text.substr(0, x), &used);
    if (used != x) return std::nullopt;
    const auto rest = text.substr(x + 1);
    const int rows = std::stoi(rest, &used);
    if (used != rest.size() || rows < 1 || cols < 1) return std::nullopt;
    return GridShape{rows, cols};
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::string grid_name(GridShape g) { return std::to_string(g.cols) + "x" + std::to_string(g.rows); }

json report_json(const EvalReport& r) {
  json models = json::array();
  for (const auto& m : r.models) {
    models.push_back({{"seed", m.seed}, {"accuracy", m.accuracy}, {"steps", m.steps}});
  }
  return {{"per_model", models}, {"mean", r.mean}, {"std", r.std}};
}

// Bars of mean accuracy on [0, 1] with ±std whiskers.
void write_bar_plot(const fs::path& path, const std::vector<std::pair<double, double>>& bars) {
  const int bar_w = 24, gap = 12, height = 200, margin = 10;
  const int width = margin * 2 + static_cast<int>(bars.size()) * (bar_w + gap);
  std::vector<std::uint8_t> px(static_cast<std::size_t>(width) * height * 3, 255);
  auto put = [&](int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    auto* p = &px[(static_cast<std::size_t>(y) * width + x) * 3];
    p[0] = r, p[1] = g, p[2] = b;
  };
  const int plot_h = height - 2 * margin;
  auto y_of = [&](double acc) { return height - margin - static_cast<int>(std::lround(std::clamp(acc, 0.0, 1.0) * plot_h)); };
  for (int x = 0; x < width; ++x) put(x, height - margin, 0, 0, 0);
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const int x0 = margin + static_cast<int>(i) * (bar_w + gap) + gap / 2;
    const int top = y_of(bars[i].first);
    for (int y = top; y < height - margin; ++y)
      for (int x = x0; x < x0 + bar_w; ++x) put(x, y, 70, 110, 180);
    const int lo = y_of(bars[i].first - bars[i].second), hi = y_of(bars[i].first + bars[i].second);
    for (int y = hi; y <= lo; ++y) put(x0 + bar_w / 2, y, 0, 0, 0);
    for (int x = x0 + bar_w / 4; x <= x0 + 3 * bar_w / 4; ++x) put(x, hi, 0, 0, 0), put(x, lo, 0, 0, 0);
  }
  write_png(path, width, height, 3, px);
}

}  // namespace

int cmd_info(const Options& opt) {
  const auto s = setup(opt);
  const auto& g = s.geom;
  const auto budget = make_budget(g.meta, s.cfg.distill.ipc);
  const ConvNet net(s.cfg.distill.model, {g.spec.patch_h, g.spec.patch_w, g.meta.channels}, g.meta.n_classes);
  std::cout << "config hash    " << s.cfg.hash() << '\n'
            << "classes        " << g.meta.n_classes << " (" << g.meta.image_h << "x" << g.meta.image_w << "x"
            << g.meta.channels << ")\n"
            << "ipc            " << s.cfg.distill.ipc << " (" << budget.total_pixel_budget << " pixels)\n"
            << "poster         " << g.dims.height << "x" << g.dims.width << '\n'
            << "class grid     " << grid_name(g.order.shape) << " (cols x rows)\n"
            << "patch grid     " << grid_name(g.spec.grid) << " (cols x rows), " << g.spec.count() << " patches\n"
            << "model params   " << net.param_count() << '\n'
            << "class order    " << class_order_to_json(g.order)["grid"].dump() << '\n';
  return 0;
}

int cmd_order(const Options& opt) {
  const auto cfg = load_run_config(opt.config, opt.overrides);
  if (cfg.embeddings_path.empty()) throw ConfigError("order needs embeddings_path in the config");
  const auto meta = cfg.meta();
  meta.validate();
  const auto emb = load_embeddings(cfg.embeddings_path, meta.class_names);
  const auto dist = cosine_distance_matrix(emb);
  const auto order = greedy_place(dist, cfg.distill.class_grid, cfg.first_class);
  auto doc = class_order_to_json(order);
  doc["score"] = ordering_score(order, dist);
  if (opt.random_orders > 0) {
    json rand = json::array();
    for (int i = 0; i < opt.random_orders; ++i) {
      const auto r = random_order(order.shape, derive_seed(cfg.distill.seed, {static_cast<std::uint64_t>(i)}));
      auto item = class_order_to_json(r);
      item["score"] = ordering_score(r, dist);
      rand.push_back(item);
    }
    doc["random_orders"] = rand;
  }
  const fs::path out = opt.out.empty() ? open_run_dir(cfg, opt.run_dir) / "class_order.json" : fs::path(opt.out);
  write_json(out, doc);
  std::cout << doc.dump() << '\n';
  return 0;
}

int cmd_distill(const Options& opt) {
  const auto s = setup(opt);
  const auto& cfg = s.cfg;
  const auto& g = s.geom;
  if (opt.resume && opt.run_dir.empty()) throw ConfigError("--resume needs --run-dir");
  std::cerr << "poster " << g.dims.height << "x" << g.dims.width << ", " << g.spec.count() << " patches of "
            << g.spec.patch_h << "x" << g.spec.patch_w << '\n';
  const auto [train, test] = load_datasets(cfg);
  (void)test;

  const fs::path dir = open_run_dir(cfg, opt.run_dir);
  std::optional<DistillState> resume;
  if (opt.resume) {
    warn_on_hash_mismatch(dir, cfg);
    const auto bytes = read_file(dir / "state.bin");
    resume = decode_state(bytes);
    std::cerr << "resuming at step " << resume->step << '\n';
  }

  json run = {{"config", cfg.raw}, {"config_hash", cfg.hash()}, {"geometry", geometry_json(g)},
              {"class_order", class_order_to_json(g.order)},
              {"total_outer_steps", total_outer_steps(cfg.distill, train.size())}};
  write_json(dir / "run.json", run);
  write_json(dir / "class_order.json", class_order_to_json(g.order));

  const auto log_path = dir / "log.csv";
  const bool append = opt.resume && fs::exists(log_path);
  std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
  if (!log) throw RuntimeFailure("cannot write " + log_path.string());
  if (!append) log << "step,t_end,outer_loss,poster_grad_norm,label_grad_norm,wall_ms\n";
  log << std::setprecision(9);

  auto last = std::chrono::steady_clock::now();
  DistillHooks hooks;
  hooks.on_step = [&](const OuterStepReport& r, const DistillState&) {
    const auto now = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(now - last).count();
    last = now;
    log << r.step << ',' << r.t_end << ',' << r.outer_loss << ',' << r.poster_grad_norm << ','
        << r.label_grad_norm << ',' << std::fixed << std::setprecision(1) << ms << std::defaultfloat
        << std::setprecision(9) << '\n';
    log.flush();
  };
  hooks.on_checkpoint = [&](const DistillState& st) {
    write_file_atomic(dir / "state.bin", encode_state(st));
    save_poster(dir / "poster.podd", st.poster);
    save_labels(dir / "labels.podl", st.labels);
  };

  const auto state = distill(train, g, cfg.distill, hooks, std::move(resume));
  export_poster_png(dir / "poster.png", state.poster);
  std::cout << dir.string() << '\n';
  return 0;
}

int cmd_eval(const Options& opt) {
  const auto s = setup(opt);
  const auto& cfg = s.cfg;
  const auto& g = s.geom;
  const fs::path src = opt.run_dir;
  if (src.empty() && (opt.poster_path.empty() || opt.labels_path.empty())) {
    throw ConfigError("eval needs --run-dir or both --poster and --labels");
  }
  const fs::path poster_path = opt.poster_path.empty() ? src / "poster.podd" : fs::path(opt.poster_path);
  const fs::path labels_path = opt.labels_path.empty() ? src / "labels.podl" : fs::path(opt.labels_path);
  if (!fs::exists(poster_path)) throw ConfigError("missing poster file " + poster_path.string());
  if (!fs::exists(labels_path)) throw ConfigError("missing labels file " + labels_path.string());
  warn_on_hash_mismatch(src, cfg);
  const auto poster = load_poster(poster_path);
  const auto labels = load_labels(labels_path);
  if (poster.dims() != g.dims || poster.channels != g.meta.channels) {
    throw ConfigError("poster file does not match the configured geometry");
  }
  if (labels.shape != g.order.shape || labels.n != g.meta.n_classes) {
    throw ConfigError("labels file does not match the configured class grid");
  }

  EvalConfig ec = cfg.eval;
  if (opt.models > 0) ec.n_models = opt.models;
  if (opt.curve_every >= 0) ec.curve_every = opt.curve_every;
  const auto [train, test] = load_datasets(cfg);

  const auto report = evaluate_poster(poster, labels, g, cfg.distill.label_mode, test, ec);
  const fs::path dir = src.empty() ? open_run_dir(cfg, "") : src;
  auto doc = report_json(report);
  doc["config_hash"] = cfg.hash();
  write_json(dir / "eval.json", doc);
  if (ec.curve_every > 0) {
    std::ostringstream csv;
    csv << "model_seed,step,accuracy\n";
    for (const auto& m : report.models)
      for (const auto& [step, acc] : m.curve) csv << m.seed << ',' << step << ',' << acc << '\n';
    write_text_atomic(dir / "eval_curve.csv", csv.str());
  }

  struct Row {
    std::string name;
    EvalReport r;
  };
  std::vector<Row> rows{{"poster", report}};
  for (const auto& b : opt.baselines) {
    if (b == "noise") {
      const auto [np, nl] = baseline_noise_poster(g, cfg.distill.seed);
      auto data = expand(np, init_label_tensor(g.order, g.meta.n_classes), g, LabelMode::kFixed);
      rows.push_back({"noise", evaluate_training_set({std::move(data.patches), nl}, test, ec)});
    } else if (b == "coreset") {
      const auto core = baseline_random_coreset(train, make_budget(g.meta, cfg.distill.ipc).total_pixel_budget,
                                                cfg.distill.seed);
      rows.push_back({"coreset", evaluate_training_set(hard_label_set(core), test, ec)});
    } else if (b == "full") {
      rows.push_back({"full", evaluate_training_set(hard_label_set(train), test, ec)});
    }
  }
  if (rows.size() > 1) {
    std::ostringstream csv;
    csv << "method,mean,std,n_models\n";
    json table = json::array();
    for (const auto& row : rows) {
      csv << row.name << ',' << row.r.mean << ',' << row.r.std << ',' << row.r.models.size() << '\n';
      auto item = report_json(row.r);
      item["method"] = row.name;
      table.push_back(item);
    }
    write_text_atomic(dir / "baselines.csv", csv.str());
    write_json(dir / "baselines.json", {{"rows", table}, {"config_hash", cfg.hash()}});
  }
  std::cout << std::left << std::setw(10) << "method" << std::setw(10) << "mean" << "std\n";
  for (const auto& row : rows) {
    std::cout << std::setw(10) << row.name << std::fixed << std::setprecision(4) << std::setw(10) << row.r.mean
              << row.r.std << std::defaultfloat << '\n';
  }
  return 0;
}

int cmd_sweep_patches(const Options& opt) {
  const auto s = setup(opt);
  const auto& cfg = s.cfg;
  const auto [train, test] = load_datasets(cfg);
  const fs::path dir = open_run_dir(cfg, opt.run_dir);

  std::vector<std::string> names;
  std::stringstream parts(opt.grids);
  for (std::string item; std::getline(parts, item, ',');) {
    if (!item.empty()) names.push_back(item);
  }
  if (names.empty()) throw ConfigError("--grids is empty");

  std::ostringstream csv;
  csv << "grid,p,mean,std\n";
  std::vector<std::pair<double, double>> bars;
  for (const auto& name : names) {
    const auto grid = parse_grid(name);
    if (!grid) {
      std::cerr << "warning: skipping malformed grid '" << name << "'\n";
      continue;
    }
    DistillConfig dc = cfg.distill;
    dc.patch_grid = *grid;
    dc.bs_d = std::min(dc.bs_d, grid->rows * grid->cols);
    PosterGeometry geom;
    try {
      geom = make_geometry(cfg.meta(), dc, s.order);
    } catch (const ConfigError& e) {
      std::cerr << "warning: skipping grid " << name << ": " << e.what() << '\n';
      continue;
    }
    const auto state = distill(train, geom, dc);
    const auto sub = dir / ("grid_" + grid_name(*grid));
    fs::create_directories(sub);
    save_poster(sub / "poster.podd", state.poster);
    save_labels(sub / "labels.podl", state.labels);
    const auto r = evaluate_poster(state.poster, state.labels, geom, dc.label_mode, test, cfg.eval);
    csv << grid_name(*grid) << ',' << geom.spec.count() << ',' << r.mean << ',' << r.std << '\n';
    bars.emplace_back(r.mean, r.std);
    std::cerr << grid_name(*grid) << " p=" << geom.spec.count() << " acc " << r.mean << " +- " << r.std << '\n';
  }
  write_text_atomic(dir / "sweep.csv", csv.str());
  if (!bars.empty()) write_bar_plot(dir / "sweep.png", bars);
  std::cout << csv.str();
  return 0;
}

int cmd_export_png(const Options& opt) {
  const auto s = setup(opt);
  const auto& g = s.geom;
  const fs::path src = opt.run_dir;
  const fs::path poster_path = opt.poster_path.empty() ? src / "poster.podd" : fs::path(opt.poster_path);
  const fs::path labels_path = opt.labels_path.empty() ? src / "labels.podl" : fs::path(opt.labels_path);
  if (src.empty() && (opt.poster_path.empty() || opt.labels_path.empty())) {
    throw ConfigError("export-png needs --run-dir or both --poster and --labels");
  }
  const auto poster = load_poster(poster_path);
  const auto labels = load_labels(labels_path);
  if (poster.dims() != g.dims) throw ConfigError("poster file does not match the configured geometry");
  if (labels.shape != g.order.shape || labels.n != g.meta.n_classes) {
    throw ConfigError("labels file does not match the configured class grid");
  }
  const fs::path png = opt.out.empty() ? src / "poster.png" : fs::path(opt.out);
  export_poster_png(png, poster);

  const auto soft = resolve_labels(labels, g, s.cfg.distill.label_mode);
  const int n = g.meta.n_classes;
  json patches = json::array();
  for (int i = 0; i < g.spec.count(); ++i) {
    const auto pos = g.spec.positions[i];
    std::vector<double> label(soft.begin() + static_cast<std::ptrdiff_t>(i) * n,
                              soft.begin() + static_cast<std::ptrdiff_t>(i + 1) * n);
    patches.push_back({{"index", i}, {"row", pos.row}, {"col", pos.col}, {"label", label}});
  }
  auto labels_out = png;
  labels_out.replace_extension().concat("_labels.json");
  write_json(labels_out, {{"class_names", g.meta.class_names}, {"patches", patches}});
  std::cout << png.string() << '\n' << labels_out.string() << '\n';
  return 0;
}

}  // namespace podd::cli

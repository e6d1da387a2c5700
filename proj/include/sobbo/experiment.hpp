#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sobbo/hash.hpp"
#include "sobbo/inference.hpp"
#include "sobbo/problems.hpp"
#include "sobbo/train.hpp"

namespace sobbo {

inline constexpr const char* kCodeVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

/// Runs fn(0..n-1) on up to `workers` threads. Tasks must write only to their
/// own slots/directories; results are merged by the caller in index order, so
/// the outcome is independent of scheduling.
inline void parallel_for(std::size_t n, std::size_t workers,
                         const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string problem = "zakharov";
  std::string regime = "scarce";  // scarce | large
  std::size_t repeats = 0;        // 0: regime default (50 scarce / 20 large)
  std::uint64_t master_seed = 1;
  std::string output_dir = "sobbo_out";

  std::size_t dataset_n = 0;  // 0: regime/problem default
  double s3nr = 0;            // 0: regime default (0.5 / 0.2); inf = noiseless
  std::size_t noise_calibration_samples = 8192;

  std::vector<Method> methods = {Method::etd, Method::dgi_full};
  TrainConfig train;  // shared hyperparameters; method/seed filled per run

  std::size_t eval_n_thetas = 1000;
  std::size_t eval_x_subset = 32;

  std::size_t opt_attempts = 128;
  InferenceConfig infer;
  std::size_t reference_multistarts = 32;
  std::size_t reference_grad_x_samples = 64;

  void resolve() {
    if (regime != "scarce" && regime != "large")
      throw config_error("config: regime must be 'scarce' or 'large'");
    if (repeats == 0) repeats = regime == "scarce" ? 50 : 20;
    if (dataset_n == 0) {
      if (regime == "scarce") {
        dataset_n = 128;
      } else if (problem == "griewank") {
        dataset_n = 50000;
      } else if (problem == "mm1" || problem == "san") {
        dataset_n = 10000;
      } else {
        dataset_n = 20000;
      }
    }
    if (s3nr == 0) s3nr = regime == "scarce" ? 0.5 : 0.2;
    if (methods.empty()) throw config_error("config: at least one method required");
    const char* root = std::getenv("SOBBO_OUTPUT_ROOT");
    if (root && *root && !std::filesystem::path(output_dir).is_absolute())
      output_dir = (std::filesystem::path(root) / output_dir).string();
    train.validate();
  }
};

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["problem"] = c.problem;
  j["regime"] = c.regime;
  j["repeats"] = c.repeats;
  j["master_seed"] = c.master_seed;
  j["output_dir"] = c.output_dir;
  j["dataset"]["n"] = c.dataset_n;
  j["dataset"]["s3nr"] = std::isinf(c.s3nr) ? nlohmann::json("inf") : nlohmann::json(c.s3nr);
  j["dataset"]["noise_calibration_samples"] = c.noise_calibration_samples;
  nlohmann::json ms = nlohmann::json::array();
  for (Method m : c.methods) ms.push_back(method_name(m));
  j["train"]["methods"] = ms;
  j["train"]["learning_rate"] = c.train.learning_rate;
  j["train"]["batch_size"] = c.train.batch_size;
  j["train"]["steps"] = c.train.steps;
  j["train"]["eval_every"] = c.train.eval_every;
  j["train"]["hidden"] = c.train.hidden;
  j["train"]["activation"] = activation_name(c.train.activation);
  j["train"]["loss"]["balance_weight"] = c.train.loss.balance_weight;
  j["train"]["loss"]["num_paths"] = c.train.loss.num_paths;
  j["train"]["loss"]["path_degree"] = c.train.loss.path_degree;
  j["train"]["loss"]["quadrature_steps"] = c.train.loss.quad.steps;
  j["train"]["loss"]["quadrature_rule"] =
      c.train.loss.quad.rule == QuadRule::trapezoid ? "trapezoid" : "midpoint";
  j["train"]["loss"]["balance_pairs"] = c.train.loss.balance_pairs;
  j["eval"]["n_thetas"] = c.eval_n_thetas;
  j["eval"]["x_subset_size"] = c.eval_x_subset;
  j["optimize"]["attempts"] = c.opt_attempts;
  j["optimize"]["gd_steps"] = c.infer.gd_steps;
  j["optimize"]["gd_lr"] = c.infer.gd_lr;
  j["optimize"]["x_subset_size"] = c.infer.x_subset_size;
  j["optimize"]["true_value_samples"] = c.infer.true_value_samples;
  j["optimize"]["reference_multistarts"] = c.reference_multistarts;
  j["optimize"]["reference_grad_x_samples"] = c.reference_grad_x_samples;
  return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c.problem = j.value("problem", c.problem);
    c.regime = j.value("regime", c.regime);
    c.repeats = j.value("repeats", c.repeats);
    c.master_seed = j.value("master_seed", c.master_seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      c.dataset_n = d.value("n", c.dataset_n);
      if (d.contains("s3nr")) {
        if (d.at("s3nr").is_string()) {
          if (d.at("s3nr").get<std::string>() != "inf")
            throw config_error("config: s3nr must be a number or \"inf\"");
          c.s3nr = std::numeric_limits<double>::infinity();
        } else {
          c.s3nr = d.at("s3nr").get<double>();
        }
      }
      c.noise_calibration_samples = d.value("noise_calibration_samples", c.noise_calibration_samples);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      if (t.contains("methods")) {
        c.methods.clear();
        for (const auto& m : t.at("methods")) c.methods.push_back(parse_method(m.get<std::string>()));
      }
      c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.steps = t.value("steps", c.train.steps);
      c.train.eval_every = t.value("eval_every", c.train.eval_every);
      c.train.hidden = t.value("hidden", c.train.hidden);
      if (t.contains("activation"))
        c.train.activation = parse_activation(t.at("activation").get<std::string>());
      if (t.contains("loss")) {
        const auto& l = t.at("loss");
        c.train.loss.balance_weight = l.value("balance_weight", c.train.loss.balance_weight);
        c.train.loss.num_paths = l.value("num_paths", c.train.loss.num_paths);
        c.train.loss.path_degree = l.value("path_degree", c.train.loss.path_degree);
        c.train.loss.quad.steps = l.value("quadrature_steps", c.train.loss.quad.steps);
        if (l.contains("quadrature_rule")) {
          const std::string r = l.at("quadrature_rule").get<std::string>();
          if (r == "trapezoid")
            c.train.loss.quad.rule = QuadRule::trapezoid;
          else if (r == "midpoint")
            c.train.loss.quad.rule = QuadRule::midpoint;
          else
            throw config_error("config: unknown quadrature_rule " + r);
        }
        c.train.loss.balance_pairs = l.value("balance_pairs", c.train.loss.balance_pairs);
      }
    }
    if (j.contains("eval")) {
      c.eval_n_thetas = j.at("eval").value("n_thetas", c.eval_n_thetas);
      c.eval_x_subset = j.at("eval").value("x_subset_size", c.eval_x_subset);
    }
    if (j.contains("optimize")) {
      const auto& o = j.at("optimize");
      c.opt_attempts = o.value("attempts", c.opt_attempts);
      c.infer.gd_steps = o.value("gd_steps", c.infer.gd_steps);
      c.infer.gd_lr = o.value("gd_lr", c.infer.gd_lr);
      c.infer.x_subset_size = o.value("x_subset_size", c.infer.x_subset_size);
      c.infer.true_value_samples = o.value("true_value_samples", c.infer.true_value_samples);
      c.reference_multistarts = o.value("reference_multistarts", c.reference_multistarts);
      c.reference_grad_x_samples = o.value("reference_grad_x_samples", c.reference_grad_x_samples);
    }
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw config_error("config: cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("config: parse error in ") + path + ": " + e.what());
  }
  ExperimentConfig c = experiment_config_from_json(j);
  c.resolve();
  return c;
}

inline std::string config_hash(const ExperimentConfig& c) {
  return hash_hex(fnv1a64(experiment_config_to_json(c).dump()));
}

// ---------------------------------------------------------------------------
// Output directory and manifest
// ---------------------------------------------------------------------------

/// Tracks every emitted file (relative path -> checksum/size) and writes the
/// run manifest. All writes go through here so the inventory is complete.
class OutputDir {
 public:
  OutputDir(std::string root, const ExperimentConfig& cfg) : root_(std::move(root)), cfg_(&cfg) {
    std::filesystem::create_directories(root_);
    const auto mpath = std::filesystem::path(root_) / "manifest.json";
    if (std::filesystem::exists(mpath)) {
      std::ifstream f(mpath);
      try {
        manifest_ = nlohmann::json::parse(f);
      } catch (...) {
        manifest_ = nlohmann::json::object();
      }
    }
  }

  const std::string& root() const { return root_; }
  std::filesystem::path path(const std::string& rel) const {
    return std::filesystem::path(root_) / rel;
  }

  void write_text(const std::string& rel, const std::string& content) {
    const auto p = path(rel);
    std::filesystem::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw config_error("output: cannot write " + p.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    f.close();
    record(rel);
  }

  /// Registers an already-written file under the manifest.
  void record(const std::string& rel) {
    const auto p = path(rel);
    std::ifstream f(p, std::ios::binary);
    if (!f) throw config_error("output: cannot read back " + p.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::lock_guard<std::mutex> lock(mutex_);
    manifest_["files"][rel] = {{"checksum", hash_hex(fnv1a64(bytes))}, {"size", bytes.size()}};
  }

  void note_seed(const std::string& key, std::uint64_t seed) {
    std::lock_guard<std::mutex> lock(mutex_);
    manifest_["seeds"][key] = seed;
  }

  void finalize(const std::string& command) {
    std::lock_guard<std::mutex> lock(mutex_);
    manifest_["code_version"] = kCodeVersion;
    manifest_["config_hash"] = config_hash(*cfg_);
    if (!manifest_.contains("commands")) manifest_["commands"] = nlohmann::json::array();
    auto& cmds = manifest_["commands"];
    if (std::find(cmds.begin(), cmds.end(), nlohmann::json(command)) == cmds.end())
      cmds.push_back(command);
    std::ofstream f(path("manifest.json"), std::ios::binary | std::ios::trunc);
    f << manifest_.dump(2) << "\n";
  }

  const nlohmann::json& manifest() const { return manifest_; }

 private:
  std::string root_;
  const ExperimentConfig* cfg_;
  nlohmann::json manifest_ = nlohmann::json::object();
  std::mutex mutex_;
};

/// Every file under the output root must appear exactly once in the manifest
/// (orphans are an error), and every manifest entry must exist on disk.
inline void check_manifest(const std::string& root) {
  const auto mpath = std::filesystem::path(root) / "manifest.json";
  std::ifstream f(mpath);
  if (!f) throw config_error("manifest: missing in " + root);
  nlohmann::json manifest = nlohmann::json::parse(f);
  const auto& files = manifest.at("files");
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel =
        std::filesystem::relative(entry.path(), root).generic_string();
    if (rel == "manifest.json") continue;
    if (!files.contains(rel)) throw config_error("manifest: orphan file " + rel);
  }
  for (const auto& [rel, info] : files.items()) {
    (void)info;
    if (!std::filesystem::exists(std::filesystem::path(root) / rel))
      throw config_error("manifest: listed file missing: " + rel);
  }
}

// ---------------------------------------------------------------------------
// Minimal SVG line charts
// ---------------------------------------------------------------------------

struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

/// Static SVG renderer for the aggregate curves; output depends only on the
/// input series, so plots regenerate byte-identically.
inline std::string render_line_chart_svg(const std::string& title, const std::string& x_label,
                                         const std::string& y_label,
                                         const std::vector<PlotSeries>& series) {
  const int w = 640, h = 420, ml = 70, mr = 130, mt = 40, mb = 50;
  const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (xmin > xmax) {
    xmin = 0;
    xmax = 1;
  }
  if (ymin > ymax) {
    ymin = 0;
    ymax = 1;
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;

  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return std::string(buf);
  };
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  svg << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title
      << "</text>\n";
  svg << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << (w - ml - mr) << "\" height=\""
      << (h - mt - mb) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = xmin + (xmax - xmin) * k / 4.0;
    const double yv = ymin + (ymax - ymin) * k / 4.0;
    svg << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << (h - mb + 18)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(xv) << "</text>\n";
    svg << "<text x=\"" << (ml - 8) << "\" y=\"" << fmt(py(yv) + 4)
        << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(yv) << "</text>\n";
  }
  svg << "<text x=\"" << w / 2 << "\" y=\"" << (h - 12) << "\" text-anchor=\"middle\" font-size=\"12\">"
      << x_label << "</text>\n";
  svg << "<text x=\"18\" y=\"" << h / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 18 "
      << h / 2 << ")\">" << y_label << "</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    svg << "<polyline fill=\"none\" stroke=\"" << palette[s % 6] << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& [x, y] : series[s].points)
      if (std::isfinite(x) && std::isfinite(y)) svg << fmt(px(x)) << "," << fmt(py(y)) << " ";
    svg << "\"/>\n";
    svg << "<text x=\"" << (w - mr + 10) << "\" y=\"" << (mt + 16 + 18 * static_cast<int>(s))
        << "\" font-size=\"12\" fill=\"" << palette[s % 6] << "\">" << series[s].label << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

// ---------------------------------------------------------------------------
// Shared naming
// ---------------------------------------------------------------------------

namespace expnames {

inline std::string rep_tag(std::size_t r) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "rep_%03zu", r);
  return buf;
}
inline std::string dataset_csv(std::size_t r) { return "datasets/" + rep_tag(r) + ".csv"; }
inline std::string dataset_json(std::size_t r) { return "datasets/" + rep_tag(r) + ".json"; }
inline std::string run_dir(Method m, std::size_t r) {
  return "runs/" + method_name(m) + "/" + rep_tag(r);
}
inline std::string ckpt_file(Method m, std::size_t r, std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "/ckpt_%06zu.bin", step);
  return run_dir(m, r) + buf;
}
inline std::string value_tag(double v) {
  if (std::isinf(v)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  std::string s(buf);
  for (auto& ch : s) {
    if (ch == '.') ch = 'p';
    if (ch == '-') ch = 'm';
    if (ch == '+') ch = ' ';
  }
  s.erase(std::remove(s.begin(), s.end(), ' '), s.end());
  return s;
}

}  // namespace expnames

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline void cmd_generate(const ExperimentConfig& cfg, bool force, std::size_t workers) {
  const auto ds_dir = std::filesystem::path(cfg.output_dir) / "datasets";
  if (std::filesystem::exists(ds_dir) && !std::filesystem::is_empty(ds_dir) && !force)
    throw config_error("generate: output datasets already exist (use --force): " + ds_dir.string());

  OutputDir out(cfg.output_dir, cfg);
  out.write_text("config_resolved.json", experiment_config_to_json(cfg).dump(2) + "\n");

  ProblemSpec spec = make_problem(cfg.problem);
  Rng noise_rng(cfg.master_seed, 0xDA7A);
  const NoiseModel noise =
      calibrate_noise(spec, cfg.s3nr, cfg.noise_calibration_samples, noise_rng);

  parallel_for(cfg.repeats, workers, [&](std::size_t r) {
    const std::uint64_t seed = cfg.master_seed + r;
    OfflineDataset ds = generate_dataset(spec, cfg.dataset_n, noise, seed);
    const auto csv_rel = expnames::dataset_csv(r);
    const auto json_rel = expnames::dataset_json(r);
    std::filesystem::create_directories(out.path(csv_rel).parent_path());
    save_dataset_csv(out.path(csv_rel).string(), ds);
    save_dataset_sidecar(out.path(json_rel).string(), ds);
    out.record(csv_rel);
    out.record(json_rel);
    out.note_seed("dataset/" + expnames::rep_tag(r), seed);
  });

  if (cfg.problem == "san") {
    save_san_topology(out.path("datasets/san_topology.csv").string(), default_san_topology());
    out.record("datasets/san_topology.csv");
  }
  out.finalize("generate");
}

inline OfflineDataset load_repeat_dataset(const ExperimentConfig& cfg, std::size_t r) {
  const auto p = std::filesystem::path(cfg.output_dir) / expnames::dataset_csv(r);
  if (!std::filesystem::exists(p))
    throw config_error("missing dataset (run generate first): " + p.string());
  return load_dataset_csv(p.string());
}

inline std::uint64_t run_seed(const ExperimentConfig& cfg, Method m, std::size_t r) {
  return derive_seed(cfg.master_seed + r, fnv1a64(method_name(m)));
}

inline void cmd_train(const ExperimentConfig& cfg, std::size_t workers) {
  OutputDir out(cfg.output_dir, cfg);
  out.write_text("config_resolved.json", experiment_config_to_json(cfg).dump(2) + "\n");

  for (Method m : cfg.methods)
    if (m == Method::etd && (cfg.train.loss.num_paths > 0 || cfg.train.loss.balance_weight > 0))
      std::fprintf(stderr, "warning: ETD ignores path/balance loss settings in the config\n");

  struct Task {
    Method method;
    std::size_t repeat;
  };
  std::vector<Task> tasks;
  for (Method m : cfg.methods)
    for (std::size_t r = 0; r < cfg.repeats; ++r) tasks.push_back({m, r});

  parallel_for(tasks.size(), workers, [&](std::size_t t) {
    const auto [m, r] = tasks[t];
    OfflineDataset ds = load_repeat_dataset(cfg, r);
    TrainConfig tcfg = cfg.train;
    tcfg.method = m;
    tcfg.seed = run_seed(cfg, m, r);
    apply_variant(tcfg);

    const std::string run_dir = expnames::run_dir(m, r);
    std::filesystem::create_directories(out.path(run_dir));
    std::vector<std::string> written;

    TrainHooks hooks;
    hooks.on_checkpoint = [&](const MlpModel& model, const AdamState& opt, std::size_t step) {
      const std::string rel = expnames::ckpt_file(m, r, step);
      save_train_state(out.path(rel).string(), model, opt, step, m);
      written.push_back(rel);
    };
    TrainResult res = train(ds, tcfg, hooks);

    const std::string final_rel = run_dir + "/final.bin";
    save_train_state(out.path(final_rel).string(), res.model, res.opt, tcfg.steps, m);
    written.push_back(final_rel);
    const std::string trace_rel = run_dir + "/trace.csv";
    save_trace_csv(out.path(trace_rel).string(), res.trace);
    written.push_back(trace_rel);

    for (const auto& rel : written) out.record(rel);
    out.note_seed("train/" + method_name(m) + "/" + expnames::rep_tag(r), tcfg.seed);
  });

  out.finalize("train");
}

struct EvalCell {
  std::string method;
  std::size_t repeat = 0;
  std::size_t step = 0;
  double cos_sim = std::numeric_limits<double>::quiet_NaN();
  double norm_dist = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<std::pair<std::size_t, std::string>> list_checkpoints(
    const ExperimentConfig& cfg, Method m, std::size_t r) {
  const auto dir = std::filesystem::path(cfg.output_dir) / expnames::run_dir(m, r);
  if (!std::filesystem::exists(dir))
    throw config_error("missing run directory (run train first): " + dir.string());
  std::vector<std::pair<std::size_t, std::string>> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    std::size_t step = 0;
    if (std::sscanf(name.c_str(), "ckpt_%zu.bin", &step) == 1) out.push_back({step, e.path().string()});
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw config_error("no checkpoints under " + dir.string());
  return out;
}

inline void cmd_evaluate(const ExperimentConfig& cfg, std::size_t workers) {
  OutputDir out(cfg.output_dir, cfg);
  ProblemSpec spec = make_problem(cfg.problem);

  struct Task {
    Method method;
    std::size_t repeat;
  };
  std::vector<Task> tasks;
  for (Method m : cfg.methods)
    for (std::size_t r = 0; r < cfg.repeats; ++r) tasks.push_back({m, r});

  std::vector<std::vector<EvalCell>> results(tasks.size());
  parallel_for(tasks.size(), workers, [&](std::size_t t) {
    const auto [m, r] = tasks[t];
    OfflineDataset ds = load_repeat_dataset(cfg, r);
    const auto ckpts = list_checkpoints(cfg, m, r);
    for (const auto& [step, path] : ckpts) {
      TrainState st = load_train_state(path);
      GradientEstimator est = make_estimator(
          m == Method::etd ? EstimatorKind::etd : EstimatorKind::dgi, std::move(st.model), ds);
      Rng rng(derive_seed(cfg.master_seed, fnv1a64("eval/" + method_name(m))),
              r * 1000003ULL + step);
      GradientEvalRow row = evaluate_gradients(est, spec, cfg.eval_n_thetas, cfg.eval_x_subset, rng);
      EvalCell cell;
      cell.method = method_name(m);
      cell.repeat = r;
      cell.step = step;
      cell.cos_sim = row.mean_cos_sim;
      cell.norm_dist = row.mean_norm_dist;
      results[t].push_back(cell);
    }
  });

  // Long-format CSV: one row per (method, step, metric, repeat).
  std::ostringstream long_csv;
  long_csv << "method,step,metric,value,repeat\n";
  for (const auto& cells : results)
    for (const auto& c : cells) {
      long_csv << c.method << "," << c.step << ",cos_sim," << format_double(c.cos_sim) << ","
               << c.repeat << "\n";
      long_csv << c.method << "," << c.step << ",norm_dist," << format_double(c.norm_dist) << ","
               << c.repeat << "\n";
    }
  out.write_text("eval/long.csv", long_csv.str());

  // Aggregate mean and sample sd per (method, step, metric).
  std::map<std::string, std::map<std::size_t, std::vector<std::pair<double, double>>>> agg;
  for (const auto& cells : results)
    for (const auto& c : cells) agg[c.method][c.step].push_back({c.cos_sim, c.norm_dist});

  auto mean_sd = [](const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s2 = 0;
    for (double x : v) s2 += (x - m) * (x - m);
    const double sd = v.size() > 1 ? std::sqrt(s2 / static_cast<double>(v.size() - 1)) : 0.0;
    return std::pair<double, double>{m, sd};
  };

  std::ostringstream agg_csv;
  agg_csv << "method,step,metric,mean,sd,count\n";
  std::vector<PlotSeries> cos_series, norm_series;
  for (const auto& [method, steps] : agg) {
    PlotSeries cs{method, {}}, ns{method, {}};
    for (const auto& [step, cells] : steps) {
      std::vector<double> cvals, nvals;
      for (const auto& [cv, nv] : cells) {
        cvals.push_back(cv);
        nvals.push_back(nv);
      }
      const auto [cm, csd] = mean_sd(cvals);
      const auto [nm, nsd] = mean_sd(nvals);
      agg_csv << method << "," << step << ",cos_sim," << format_double(cm) << ","
              << format_double(csd) << "," << cvals.size() << "\n";
      agg_csv << method << "," << step << ",norm_dist," << format_double(nm) << ","
              << format_double(nsd) << "," << nvals.size() << "\n";
      cs.points.push_back({static_cast<double>(step), cm});
      ns.points.push_back({static_cast<double>(step), nm});
    }
    cos_series.push_back(std::move(cs));
    norm_series.push_back(std::move(ns));
  }
  out.write_text("eval/aggregate.csv", agg_csv.str());
  out.write_text("eval/plot_cos_sim.svg",
                 render_line_chart_svg(cfg.problem + ": cosine similarity (higher is better)",
                                       "training step", "cos_sim", cos_series));
  out.write_text("eval/plot_norm_dist.svg",
                 render_line_chart_svg(cfg.problem + ": gradient norm distance (lower is better)",
                                       "training step", "norm_dist", norm_series));
  out.finalize("evaluate");
}

struct OptimizeReport {
  double reference = 0.0;
  bool reference_absolute_mode = false;
  // row -> (raw mean, normalized, per-repeat raw means)
  std::vector<std::tuple<std::string, double, double, std::vector<double>>> rows;
};

inline OptimizeReport cmd_optimize(const ExperimentConfig& cfg, std::size_t workers) {
  OutputDir out(cfg.output_dir, cfg);
  ProblemSpec spec = make_problem(cfg.problem);

  Method etd_m = Method::etd;
  Method dgi_m = Method::dgi_full;
  bool has_etd = false, has_dgi = false;
  for (Method m : cfg.methods) {
    if (m == Method::etd) has_etd = true;
    if (is_dgi(m) && !has_dgi) {
      dgi_m = m;
      has_dgi = true;
    }
  }
  if (!has_etd || !has_dgi)
    throw config_error("optimize: config methods must include etd and a DGI variant");

  Rng ref_rng(cfg.master_seed, 0x0EF);
  const double reference =
      reference_optimum(spec, cfg.reference_multistarts, cfg.infer.gd_steps, cfg.infer.gd_lr,
                        cfg.reference_grad_x_samples, cfg.infer.true_value_samples, ref_rng);

  const std::vector<std::string> row_order{"rs", "oc", "etd(R)", "etd(G)", "dgi(R)", "dgi(G)"};
  std::vector<std::map<std::string, double>> per_repeat(cfg.repeats);

  parallel_for(cfg.repeats, workers, [&](std::size_t r) {
    OfflineDataset ds = load_repeat_dataset(cfg, r);
    auto seed_for = [&](const char* tag) {
      return Rng(derive_seed(cfg.master_seed, fnv1a64(std::string("optimize/") + tag)), r);
    };
    std::map<std::string, double>& rows = per_repeat[r];

    {
      Rng rng = seed_for("rs");
      rows["rs"] =
          baseline_random_search(spec, cfg.opt_attempts, cfg.infer.true_value_samples, rng)
              .mean_true_value;
    }
    {
      Rng rng = seed_for("oc");
      rows["oc"] =
          baseline_dataset_oracle(ds, spec, cfg.infer.true_value_samples, rng).mean_true_value;
    }
    for (const auto& [m, label] :
         std::vector<std::pair<Method, std::string>>{{etd_m, "etd"}, {dgi_m, "dgi"}}) {
      const auto final_path =
          std::filesystem::path(cfg.output_dir) / (expnames::run_dir(m, r) + "/final.bin");
      if (!std::filesystem::exists(final_path))
        throw config_error("optimize: missing final checkpoint " + final_path.string());
      TrainState st = load_train_state(final_path.string());
      GradientEstimator est = make_estimator(
          m == Method::etd ? EstimatorKind::etd : EstimatorKind::dgi, std::move(st.model), ds);
      for (const auto init : {InferenceConfig::Init::random, InferenceConfig::Init::greedy}) {
        InferenceConfig icfg = cfg.infer;
        icfg.init = init;
        const std::string row =
            label + (init == InferenceConfig::Init::random ? "(R)" : "(G)");
        Rng rng = seed_for(row.c_str());
        rows[row] = optimize_design(est, ds, spec, icfg, cfg.opt_attempts, rng).mean_true_value;
      }
    }
  });

  OptimizeReport report;
  report.reference = reference;
  std::ostringstream csv;
  csv << "method,raw_mean,normalized,reference,normalization\n";
  nlohmann::json rj;
  rj["reference"] = reference;
  rj["problem"] = cfg.problem;
  rj["dgi_variant"] = method_name(dgi_m);
  rj["attempts"] = cfg.opt_attempts;
  for (const auto& row : row_order) {
    std::vector<double> vals;
    double mean = 0;
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
      vals.push_back(per_repeat[r].at(row));
      mean += vals.back();
    }
    mean /= static_cast<double>(cfg.repeats);
    NormalizedScore ns = normalize_score(mean, reference);
    report.reference_absolute_mode = ns.absolute_mode;
    report.rows.push_back({row, mean, ns.value, vals});
    csv << row << "," << format_double(mean) << "," << format_double(ns.value) << ","
        << format_double(reference) << "," << (ns.absolute_mode ? "absolute" : "relative") << "\n";
    rj["rows"][row] = {{"raw_mean", mean}, {"normalized", ns.value}, {"per_repeat", vals},
                       {"absolute_mode", ns.absolute_mode}};
  }
  out.write_text("optimize/report.csv", csv.str());
  out.write_text("optimize/report.json", rj.dump(2) + "\n");
  out.finalize("optimize");
  return report;
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

inline std::vector<double> default_ablation_grid(const std::string& axis) {
  if (axis == "balance_weight") return {0, 1, 10, 100, 1000};
  if (axis == "num_paths") return {0, 1, 4, 16, 64, 128};
  if (axis == "integration_steps") return {8, 32, 128, 512};
  if (axis == "noise")
    return {std::numeric_limits<double>::infinity(), 2, 1, 0.2, 0.1, 0.05};
  throw config_error("ablate: unknown axis " + axis);
}

inline void ablate_train_explicit(const ExperimentConfig& cfg, std::size_t workers);

/// One training + evaluation pipeline per grid point, merged into a sweep CSV.
inline void cmd_ablate(const ExperimentConfig& cfg, const std::string& axis,
                       std::vector<double> grid, bool force, std::size_t workers) {
  if (grid.empty()) grid = default_ablation_grid(axis);
  if (axis != "balance_weight" && axis != "num_paths" && axis != "integration_steps" &&
      axis != "noise")
    throw config_error("ablate: unknown axis " + axis);

  OutputDir out(cfg.output_dir, cfg);
  std::ostringstream sweep;
  sweep << "axis,value,method,step,metric,mean,sd,count\n";

  for (double value : grid) {
    ExperimentConfig sub = cfg;
    sub.output_dir =
        (std::filesystem::path(cfg.output_dir) / "ablate" / axis / expnames::value_tag(value))
            .string();
    if (axis == "balance_weight") {
      // isolate the balance term: one sampled path, weight from the grid
      sub.methods = {value > 0 ? Method::dgi_path1_bal : Method::dgi_path1};
      sub.train.loss.balance_weight = value;
      sub.train.loss.num_paths = 1;
    } else if (axis == "num_paths") {
      // isolate path sampling: no balance term, path count from the grid
      sub.methods = {value > 0 ? Method::dgi_path64 : Method::dgi_naive};
      sub.train.loss.balance_weight = 0.0;
      sub.train.loss.num_paths = static_cast<std::size_t>(value);
    } else if (axis == "integration_steps") {
      sub.train.loss.quad.steps = static_cast<std::size_t>(value);
    } else {
      sub.s3nr = value;
    }

    cmd_generate(sub, force, workers);
    if (axis == "balance_weight" || axis == "num_paths") {
      // explicit loss settings: train without the variant pin
      ablate_train_explicit(sub, workers);
    } else {
      cmd_train(sub, workers);
    }
    cmd_evaluate(sub, workers);

    // merge this grid point's aggregate rows
    std::ifstream agg(std::filesystem::path(sub.output_dir) / "eval/aggregate.csv");
    std::string line;
    std::getline(agg, line);  // header
    while (std::getline(agg, line))
      if (!line.empty())
        sweep << axis << "," << expnames::value_tag(value) << "," << line << "\n";
  }
  out.write_text("ablate/" + axis + "/sweep.csv", sweep.str());
  out.finalize("ablate:" + axis);
}

/// Trains each configured method with the config's loss fields taken as-is
/// (no variant defaults); used by the ablation sweeps.
inline void ablate_train_explicit(const ExperimentConfig& cfg, std::size_t workers) {
  OutputDir out(cfg.output_dir, cfg);
  struct Task {
    Method method;
    std::size_t repeat;
  };
  std::vector<Task> tasks;
  for (Method m : cfg.methods)
    for (std::size_t r = 0; r < cfg.repeats; ++r) tasks.push_back({m, r});

  parallel_for(tasks.size(), workers, [&](std::size_t t) {
    const auto [m, r] = tasks[t];
    OfflineDataset ds = load_repeat_dataset(cfg, r);
    TrainConfig tcfg = cfg.train;
    tcfg.method = m;
    tcfg.seed = run_seed(cfg, m, r);

    MlpSpec spec;
    spec.input_dim = ds.zeta_dim();
    spec.hidden = tcfg.hidden;
    spec.output_dim = ds.zeta_dim();
    spec.activation = tcfg.activation;
    spec.seed = tcfg.seed;
    MlpModel model = init_model(spec);
    AdamState opt = AdamState::zeros_like(model_params(model));

    const std::string run_dir = expnames::run_dir(m, r);
    std::filesystem::create_directories(out.path(run_dir));
    std::vector<std::string> written;
    TrainHooks hooks;
    hooks.on_checkpoint = [&](const MlpModel& mm, const AdamState& oo, std::size_t step) {
      const std::string rel = expnames::ckpt_file(m, r, step);
      save_train_state(out.path(rel).string(), mm, oo, step, m);
      written.push_back(rel);
    };
    TrainResult res = train_dgi_from(ds, tcfg, std::move(model), std::move(opt), 0, hooks);
    const std::string final_rel = run_dir + "/final.bin";
    save_train_state(out.path(final_rel).string(), res.model, res.opt, tcfg.steps, m);
    written.push_back(final_rel);
    const std::string trace_rel = run_dir + "/trace.csv";
    save_trace_csv(out.path(trace_rel).string(), res.trace);
    written.push_back(trace_rel);
    for (const auto& rel : written) out.record(rel);
  });
  out.finalize("train");
}

}  // namespace sobbo

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "conformal.hpp"
#include "coverage.hpp"
#include "darcy.hpp"
#include "dataset_io.hpp"
#include "errors.hpp"
#include "grid.hpp"
#include "quantile_model.hpp"
#include "random.hpp"
#include "spectral_model.hpp"
#include "text_format.hpp"

namespace uqno::cli {

namespace fs = std::filesystem;

/// Invalid or inconsistent run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitMissingArtifact = 3,
  kExitInfeasible = 4,
  kExitDiverged = 5,
};

struct SweepGrid {
  std::vector<double> alphas{0.02, 0.1};
  std::vector<double> deltas{0.02, 0.1};
};

struct PacSettings {
  std::size_t n_trials = 200;
  std::size_t refinement = 4;
};

/// Everything one run needs. Each split draws from its own seed lane of the
/// master seed, so splits never share a coefficient sample.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "uqno_run";
  GrfSpec grf;
  double forcing = 1.0;
  std::size_t m = 128;
  std::size_t n_train_base = 200;
  std::size_t n_train_quantile = 200;
  std::size_t n_cal = 200;
  std::size_t n_test = 200;
  ModelShape model;
  TrainConfig train_base{0.0005, 400, 5, 1};
  TrainConfig train_quantile{0.1, 200, 10, 2};
  CalibrationConfig calibration;
  SweepGrid sweep;
  PacSettings pac;

  void validate() const {
    try {
      grf.validate();
      model.validate();
      train_base.validate();
      train_quantile.validate();
      calibration.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    if (m < 3) throw ConfigError("m must be >= 3");
    if (n_train_base < 1) throw ConfigError("n_train_base must be >= 1");
    if (n_train_quantile < 1) throw ConfigError("n_train_quantile must be >= 1");
    if (n_cal < 1) throw ConfigError("n_cal must be >= 1");
    if (n_test < 1) throw ConfigError("n_test must be >= 1");
    if (sweep.alphas.empty() || sweep.deltas.empty()) throw ConfigError("sweep lists must be nonempty");
    for (double a : sweep.alphas)
      if (!(a > 0.0 && a < 1.0)) throw ConfigError("sweep alphas must lie in (0, 1)");
    for (double d : sweep.deltas)
      if (!(d > 0.0 && d < 1.0)) throw ConfigError("sweep deltas must lie in (0, 1)");
    if (pac.n_trials < 50) throw ConfigError("pac.n_trials must be >= 50");
    if (pac.refinement < 1) throw ConfigError("pac.refinement must be >= 1");
    if (out_dir.empty()) throw ConfigError("out_dir must be nonempty");
  }
};

enum SeedLane : std::uint64_t {
  kLaneTrainBase = 1,
  kLaneTrainQuantile = 2,
  kLaneCalibration = 3,
  kLaneTest = 4,
  kLaneFitBase = 10,
  kLaneFitQuantile = 11,
  kLanePac = 20,
};

inline std::uint64_t lane_seed(const RunConfig& cfg, SeedLane lane) {
  return derive_seed(cfg.seed, lane);
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace detail {

using nlohmann::json;

inline void check_keys(const json& obj, const std::string& where,
                       std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : obj.items())
    if (!ok.count(key)) throw ConfigError("unknown config key \"" + where + "." + key + "\"");
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field \"" + where + "." + key + "\" has the wrong type");
  }
}

inline void read_size(const json& obj, const char* key, std::size_t& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ConfigError("config field \"" + where + "." + key + "\" must be a non-negative integer");
  out = v.get<std::size_t>();
}

inline void read_train(const json& obj, TrainConfig& t, const std::string& where) {
  check_keys(obj, where, {"learning_rate", "epochs", "batch_size", "seed"});
  read(obj, "learning_rate", t.learning_rate, where);
  read(obj, "epochs", t.epochs, where);
  read(obj, "batch_size", t.batch_size, where);
  read(obj, "seed", t.seed, where);
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& doc) {
  using detail::read;
  using detail::read_size;
  RunConfig c;
  detail::check_keys(doc, "config",
                     {"seed", "out_dir", "grf", "forcing", "m", "n_train_base", "n_train_quantile",
                      "n_cal", "n_test", "model", "train_base", "train_quantile", "calibration",
                      "sweep", "pac"});
  read(doc, "seed", c.seed, "config");
  read(doc, "out_dir", c.out_dir, "config");
  read(doc, "forcing", c.forcing, "config");
  read_size(doc, "m", c.m, "config");
  read_size(doc, "n_train_base", c.n_train_base, "config");
  read_size(doc, "n_train_quantile", c.n_train_quantile, "config");
  read_size(doc, "n_cal", c.n_cal, "config");
  read_size(doc, "n_test", c.n_test, "config");
  if (doc.contains("grf")) {
    const auto& g = doc["grf"];
    detail::check_keys(g, "grf", {"n_modes", "decay", "amplitude"});
    read(g, "n_modes", c.grf.n_modes, "grf");
    read(g, "decay", c.grf.decay, "grf");
    read(g, "amplitude", c.grf.amplitude, "grf");
  }
  if (doc.contains("model")) {
    const auto& g = doc["model"];
    detail::check_keys(g, "model", {"n_modes", "width"});
    read(g, "n_modes", c.model.n_modes, "model");
    read(g, "width", c.model.width, "model");
  }
  if (doc.contains("train_base")) detail::read_train(doc["train_base"], c.train_base, "train_base");
  if (doc.contains("train_quantile"))
    detail::read_train(doc["train_quantile"], c.train_quantile, "train_quantile");
  if (doc.contains("calibration")) {
    const auto& g = doc["calibration"];
    detail::check_keys(g, "calibration", {"alpha", "delta", "t"});
    read(g, "alpha", c.calibration.alpha, "calibration");
    read(g, "delta", c.calibration.delta, "calibration");
    if (g.contains("t")) {
      const auto& t = g["t"];
      if (t.is_string() && t.get<std::string>() == "auto")
        c.calibration.t.reset();
      else if (t.is_number())
        c.calibration.t = t.get<double>();
      else
        throw ConfigError("calibration.t must be \"auto\" or a number");
    }
  }
  if (doc.contains("sweep")) {
    const auto& g = doc["sweep"];
    detail::check_keys(g, "sweep", {"alphas", "deltas"});
    read(g, "alphas", c.sweep.alphas, "sweep");
    read(g, "deltas", c.sweep.deltas, "sweep");
  }
  if (doc.contains("pac")) {
    const auto& g = doc["pac"];
    detail::check_keys(g, "pac", {"n_trials", "refinement"});
    read_size(g, "n_trials", c.pac.n_trials, "pac");
    read_size(g, "refinement", c.pac.refinement, "pac");
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(doc);
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

struct Paths {
  fs::path root;
  fs::path dataset(SplitTag s) const { return root / (std::string(to_string(s)) + ".jsonl"); }
  fs::path base_model() const { return root / "base_model.json"; }
  fs::path quantile_model() const { return root / "quantile_model.json"; }
  fs::path calibration() const { return root / "calibration.json"; }
  fs::path coverage_csv() const { return root / "coverage.csv"; }
  fs::path coverage_svg() const { return root / "first_test_function.svg"; }
  fs::path pac() const { return root / "pac.json"; }
  fs::path sweep() const { return root / "sweep.csv"; }
};

inline Paths paths_for(const RunConfig& cfg) { return {fs::path(cfg.out_dir)}; }

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

inline nlohmann::json read_json_artifact(const fs::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(what + " not found: expected " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline Dataset load_split(const Paths& p, SplitTag s) {
  const fs::path path = p.dataset(s);
  if (!fs::exists(path))
    throw MissingArtifact(std::string(to_string(s)) + " dataset not found: expected " +
                          path.string() + " (run gen-data first)");
  return read_dataset(path);
}

inline SpectralModel load_base(const Paths& p) {
  return model_from_json(read_json_artifact(p.base_model(), "base model checkpoint (run train-base)"),
                         "base");
}

inline QuantileModel load_quantile(const Paths& p) {
  return quantile_model_from_json(
      read_json_artifact(p.quantile_model(), "quantile model checkpoint (run train-quantile)"));
}

inline CalibrationResult load_calibration(const Paths& p) {
  return calibration_from_json(read_json_artifact(p.calibration(), "calibration (run calibrate)"));
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline Dataset make_split(const RunConfig& cfg, SplitTag split) {
  std::size_t n = 0;
  SeedLane lane{};
  switch (split) {
    case SplitTag::kTrainBase: n = cfg.n_train_base; lane = kLaneTrainBase; break;
    case SplitTag::kTrainQuantile: n = cfg.n_train_quantile; lane = kLaneTrainQuantile; break;
    case SplitTag::kCalibration: n = cfg.n_cal; lane = kLaneCalibration; break;
    case SplitTag::kTest: n = cfg.n_test; lane = kLaneTest; break;
  }
  return generate_dataset(cfg.grf, cfg.forcing, n, cfg.m, lane_seed(cfg, lane), split);
}

/// Writes the four dataset splits.
inline void cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const Paths p = paths_for(cfg);
  fs::create_directories(p.root);
  for (SplitTag s : {SplitTag::kTrainBase, SplitTag::kTrainQuantile, SplitTag::kCalibration,
                     SplitTag::kTest}) {
    const Dataset d = make_split(cfg, s);
    write_dataset(d, p.dataset(s));
    log << "wrote " << p.dataset(s).string() << " (" << d.size() << " pairs)\n";
  }
}

enum class Which { kBase, kQuantile };

inline TrainConfig effective_train_config(const RunConfig& cfg, Which which) {
  TrainConfig t = which == Which::kBase ? cfg.train_base : cfg.train_quantile;
  t.seed = derive_seed(lane_seed(cfg, which == Which::kBase ? kLaneFitBase : kLaneFitQuantile),
                       t.seed);
  return t;
}

/// Trains one model and writes its checkpoint. Returns the final training loss.
inline double cmd_train(const RunConfig& cfg, Which which, std::ostream& log) {
  cfg.validate();
  const Paths p = paths_for(cfg);
  double final_loss = 0.0;
  if (which == Which::kBase) {
    const Dataset train = load_split(p, SplitTag::kTrainBase);
    const auto res = train_base(train, effective_train_config(cfg, which), cfg.model);
    write_text(p.base_model(), base_model_to_json(res.model));
    final_loss = res.final_loss;
  } else {
    const SpectralModel base = load_base(p);
    const Dataset train = load_split(p, SplitTag::kTrainQuantile);
    const auto res = train_quantile(train, base, cfg.calibration.alpha,
                                    effective_train_config(cfg, which), cfg.model);
    write_text(p.quantile_model(), quantile_model_to_json(res.model));
    final_loss = res.final_loss;
  }
  log << "final_loss=" << format_real(final_loss) << "\n";
  return final_loss;
}

inline CalibrationResult cmd_calibrate(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const Paths p = paths_for(cfg);
  const SpectralModel base = load_base(p);
  const QuantileModel qm = load_quantile(p);
  const Dataset cal = load_split(p, SplitTag::kCalibration);
  const CalibrationResult res = calibrate(cal, base, qm, cfg.calibration);
  write_text(p.calibration(), calibration_to_json(res));
  log << "lambda_hat=" << format_real(res.lambda_hat) << " t=" << format_real(res.t)
      << " m_bar=" << res.m_bar << "\n";
  return res;
}

namespace detail {

inline std::string svg_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// Three stacked panels over a shared x axis: residual, radius, coverage mask.
inline std::string coverage_svg(const Grid& grid, const BandResidual& f, double lambda) {
  constexpr double width = 720, panel = 160, margin = 40, gap = 30;
  const double plot_w = width - 2 * margin;
  const double height = 2 * margin + 3 * panel + 2 * gap;
  double top = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i)
    top = std::max({top, f.residual[i], lambda * f.band[i]});
  if (!(top > 0.0)) top = 1.0;
  auto px = [&](double x) { return margin + plot_w * x; };
  auto py = [&](int row, double v) {
    const double y0 = margin + row * (panel + gap);
    return y0 + panel * (1.0 - v / top);
  };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << svg_num(width) << "\" height=\""
    << svg_num(height) << "\" viewBox=\"0 0 " << svg_num(width) << ' ' << svg_num(height)
    << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const char* titles[3] = {"true residual |u - G(a)|", "predicted radius lambda*E(a)",
                           "covered (green) / uncovered (red)"};
  for (int row = 0; row < 3; ++row) {
    const double y0 = margin + row * (panel + gap);
    s << "<rect x=\"" << svg_num(margin) << "\" y=\"" << svg_num(y0) << "\" width=\""
      << svg_num(plot_w) << "\" height=\"" << svg_num(panel)
      << "\" fill=\"none\" stroke=\"#888\"/>\n";
    s << "<text x=\"" << svg_num(margin) << "\" y=\"" << svg_num(y0 - 6)
      << "\" font-size=\"12\" font-family=\"sans-serif\">" << titles[row] << "</text>\n";
  }
  auto polyline = [&](int row, auto value, const char* colour, const char* id) {
    s << "<polyline id=\"" << id << "\" fill=\"none\" stroke=\"" << colour
      << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < f.size(); ++i)
      s << (i ? " " : "") << svg_num(px(grid[i])) << ',' << svg_num(py(row, value(i)));
    s << "\"/>\n";
  };
  polyline(0, [&](std::size_t i) { return f.residual[i]; }, "#1f77b4", "residual");
  polyline(1, [&](std::size_t i) { return lambda * f.band[i]; }, "#2ca02c", "radius");
  const double mask_y = margin + 2 * (panel + gap) + panel / 2;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const bool covered = f.residual[i] / f.band[i] <= lambda;
    s << "<circle class=\"" << (covered ? "covered" : "uncovered") << "\" cx=\""
      << svg_num(px(grid[i])) << "\" cy=\"" << svg_num(mask_y) << "\" r=\"2.5\" fill=\""
      << (covered ? "#2ca02c" : "#d62728") << "\"/>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace detail

/// Per-function coverage CSV plus an SVG of the first test function.
inline CoverageReport cmd_eval(const RunConfig& cfg, std::ostream& log,
                               std::optional<double> debug_lambda = std::nullopt) {
  cfg.validate();
  const Paths p = paths_for(cfg);
  const SpectralModel base = load_base(p);
  const QuantileModel qm = load_quantile(p);
  CalibrationResult res = load_calibration(p);
  if (debug_lambda) {
    if (!std::isfinite(*debug_lambda)) throw ConfigError("eval: --debug-lambda must be finite");
    res.lambda_hat = *debug_lambda;
  }
  const Dataset test = load_split(p, SplitTag::kTest);
  const auto fields = band_residuals(test, base, qm);
  const CoverageReport rep = evaluate_bands(fields, res);

  std::string csv = "function,m,coverage,mean_radius,meets_target\n";
  for (std::size_t i = 0; i < fields.size(); ++i) {
    double radius = 0.0;
    for (double e : fields[i].band) radius += res.lambda_hat * e;
    radius /= static_cast<double>(fields[i].size());
    csv += std::to_string(i) + ',' + std::to_string(fields[i].size()) + ',' +
           format_real(rep.per_function_coverage[i]) + ',' + format_real(radius) + ',' +
           (meets_threshold(rep.per_function_coverage[i], rep.alpha) ? "1" : "0") + '\n';
  }
  write_text(p.coverage_csv(), csv);
  write_text(p.coverage_svg(), detail::coverage_svg(test[0].grid(), fields[0], res.lambda_hat));
  log << "calibration_percentage=" << format_real(rep.calibration_percentage)
      << " mean_bandwidth=" << format_real(rep.mean_bandwidth)
      << " lambda_hat=" << format_real(rep.lambda_hat) << "\n";
  return rep;
}

/// Monte-Carlo check of the risk guarantee; writes pac.json.
inline PacTrialReport cmd_verify_pac(const RunConfig& cfg, std::ostream& log,
                                     std::optional<double> debug_lambda = std::nullopt) {
  cfg.validate();
  const Paths p = paths_for(cfg);
  const SpectralModel base = load_base(p);
  const QuantileModel qm = load_quantile(p);
  fs::create_directories(p.root);
  const GeneratorConfig gen{cfg.grf, cfg.forcing, cfg.m, cfg.n_cal, cfg.pac.refinement};
  const PipelineConfig pipe{&base, &qm, cfg.calibration, debug_lambda};
  try {
    const PacTrialReport rep = pac_monte_carlo(gen, pipe, cfg.pac.n_trials, lane_seed(cfg, kLanePac));
    write_text(p.pac(), pac_report_to_json(rep));
    log << "violation_rate=" << format_real(rep.violation_rate)
        << " binomial_ci_upper=" << format_real(rep.binomial_ci_upper)
        << " target_delta=" << format_real(rep.target_delta) << "\n";
    return rep;
  } catch (const InfeasibleCalibration& e) {
    write_text(p.pac(), JsonObjectWriter()
                            .field("format", "uqno-pac")
                            .field("version", 1)
                            .field("status", "infeasible")
                            .field("required_n", static_cast<long long>(e.required_n()))
                            .str());
    throw;
  }
}

inline std::vector<SweepRow> cmd_sweep(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const Paths p = paths_for(cfg);
  const SpectralModel base = load_base(p);
  const QuantileModel qm = load_quantile(p);
  const Dataset cal = load_split(p, SplitTag::kCalibration);
  const Dataset test = load_split(p, SplitTag::kTest);
  const auto rows = tradeoff_sweep(cfg.sweep.alphas, cfg.sweep.deltas, cal, test, base, qm);
  write_text(p.sweep(), sweep_to_csv(rows));
  std::size_t infeasible = 0;
  for (const auto& r : rows) infeasible += r.feasible ? 0 : 1;
  log << "rows=" << rows.size() << " infeasible=" << infeasible << "\n";
  return rows;
}

}  // namespace uqno::cli

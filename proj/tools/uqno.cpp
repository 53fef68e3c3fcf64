// Command-line front end for the data → train → calibrate → evaluate pipeline.

#include <cmath>
#include <iostream>
#include <limits>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include <uqno/pipeline.hpp>

namespace {

using namespace uqno;
using namespace uqno::cli;

std::optional<double> parse_debug_lambda(const std::string& text) {
  if (text.empty()) return std::nullopt;
  if (text == "inf" || text == "+inf") return std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !(v >= 0.0)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("--debug-lambda expects a non-negative number or \"inf\", got \"" + text +
                      "\"");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal uncertainty bands for a learned 1D Darcy solution operator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string debug_lambda;

  app.add_option("--config", config_path, "JSON run configuration (defaults if omitted)");
  app.add_option("--out", out_dir, "Output directory (overrides config out_dir)");
  app.add_option("--seed", seed, "Master seed (overrides config seed)");
  app.add_option("--debug-lambda", debug_lambda, "Force lambda_hat (value or inf) in eval/verify-pac");

  auto* gen = app.add_subcommand("gen-data", "Write the four dataset splits");
  auto* train_base = app.add_subcommand("train-base", "Train the base operator");
  auto* train_quantile = app.add_subcommand("train-quantile", "Train the band operator");
  auto* calibrate = app.add_subcommand("calibrate", "Select lambda_hat on the calibration split");
  auto* eval = app.add_subcommand("eval", "Coverage report and SVG for the test split");
  auto* pac = app.add_subcommand("verify-pac", "Monte-Carlo check of the risk guarantee");
  auto* sweep = app.add_subcommand("sweep", "alpha/delta trade-off table");
  for (auto* sub : {gen, train_base, train_quantile, calibrate, eval, pac, sweep})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed) cfg.seed = *seed;
    cfg.validate();
    const auto forced = parse_debug_lambda(debug_lambda);

    if (gen->parsed()) cmd_gen_data(cfg, std::cout);
    else if (train_base->parsed()) cmd_train(cfg, Which::kBase, std::cout);
    else if (train_quantile->parsed()) cmd_train(cfg, Which::kQuantile, std::cout);
    else if (calibrate->parsed()) cmd_calibrate(cfg, std::cout);
    else if (eval->parsed()) cmd_eval(cfg, std::cout, forced);
    else if (pac->parsed()) cmd_verify_pac(cfg, std::cout, forced);
    else if (sweep->parsed()) cmd_sweep(cfg, std::cout);
    return kExitOk;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing dependency: " << e.what() << "\n";
    return kExitMissingArtifact;
  } catch (const InfeasibleCalibration& e) {
    std::cerr << e.what() << "\n";
    return kExitInfeasible;
  } catch (const TrainingDiverged& e) {
    std::cerr << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

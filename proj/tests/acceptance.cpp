// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fail.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <uqno/pipeline.hpp>
#include <uqno/synthetic.hpp>
#include <uqno/uqno.hpp>

using namespace uqno;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(const char* id, const char* name, const std::function<Outcome()>& check) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::printf("%s %s %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

CalibrationConfig cal_cfg(double alpha, double delta) { return {alpha, delta, std::nullopt}; }

// Models trained once with the default run configuration.
struct TrainedPipeline {
  cli::RunConfig cfg;
  SpectralModel base;
  QuantileModel quantile;
  double base_loss = 0.0;
};

const TrainedPipeline& trained() {
  static const TrainedPipeline tp = [] {
    TrainedPipeline t;
    const Dataset tb = cli::make_split(t.cfg, SplitTag::kTrainBase);
    auto br = train_base(tb, cli::effective_train_config(t.cfg, cli::Which::kBase), t.cfg.model);
    t.base = std::move(br.model);
    t.base_loss = br.final_loss;
    const Dataset tq = cli::make_split(t.cfg, SplitTag::kTrainQuantile);
    t.quantile = train_quantile(tq, t.base, t.cfg.calibration.alpha,
                                cli::effective_train_config(t.cfg, cli::Which::kQuantile), t.cfg.model)
                     .model;
    return t;
  }();
  return tp;
}

const std::vector<SweepRow>& sweep_rows() {
  static const std::vector<SweepRow> rows = [] {
    const auto& tp = trained();
    const Dataset cal = cli::make_split(tp.cfg, SplitTag::kCalibration);
    const Dataset test = cli::make_split(tp.cfg, SplitTag::kTest);
    const std::vector<double> alphas{0.02, 0.05, 0.1};
    const std::vector<double> deltas{0.02, 0.05, 0.1, 0.2, 0.3};
    return tradeoff_sweep(alphas, deltas, cal, test, tp.base, tp.quantile);
  }();
  return rows;
}

// ---------------------------------------------------------------------------

Outcome pac_guarantee() {
  const auto& tp = trained();
  const GeneratorConfig gen{tp.cfg.grf, tp.cfg.forcing, 128, 200, 4};
  std::ostringstream d;
  bool ok = true;
  std::uint64_t cell = 0;
  for (double alpha : {0.05, 0.1})
    for (double delta : {0.1, 0.2}) {
      const PipelineConfig pipe{&tp.base, &tp.quantile, cal_cfg(alpha, delta), std::nullopt};
      const auto rep = pac_monte_carlo(gen, pipe, 200, derive_seed(0xacce, cell++));
      ok = ok && rep.binomial_ci_upper <= delta;
      d << "a=" << alpha << ",d=" << delta << ": " << rep.violations << "/200 ub=" << fmt(rep.binomial_ci_upper)
        << "; ";
    }
  return {ok, d.str()};
}

Outcome calibration_percentage_floor() {
  bool ok = true;
  std::ostringstream d;
  for (const auto& r : sweep_rows()) {
    const double floor = 1.0 - r.delta - 1.5 * std::sqrt(r.delta * (1.0 - r.delta) / 200.0);
    const bool cell_ok = r.feasible && r.calibration_percentage >= floor;
    ok = ok && cell_ok;
    if (!cell_ok || r.delta == 0.1)
      d << "a=" << r.alpha << ",d=" << r.delta << ": " << fmt(r.calibration_percentage) << ">=" << fmt(floor)
        << "; ";
  }
  return {ok, std::to_string(sweep_rows().size()) + " cells; " + d.str()};
}

Outcome tradeoff_monotone() {
  const auto& rows = sweep_rows();
  std::map<double, std::vector<const SweepRow*>> by_alpha;
  for (const auto& r : rows) by_alpha[r.alpha].push_back(&r);
  bool ok = true;
  std::ostringstream d;
  for (auto& [alpha, cells] : by_alpha) {
    std::sort(cells.begin(), cells.end(), [](auto* a, auto* b) { return a->delta < b->delta; });
    for (std::size_t i = 1; i < cells.size(); ++i)
      ok = ok && cells[i]->lambda_hat <= cells[i - 1]->lambda_hat &&
           cells[i]->mean_bandwidth <= cells[i - 1]->mean_bandwidth;
    d << "a=" << alpha << " bw " << fmt(cells.front()->mean_bandwidth) << "->"
      << fmt(cells.back()->mean_bandwidth) << "; ";
  }
  return {ok, d.str()};
}

Outcome pinball_consistency() {
  bool ok = true;
  std::ostringstream d;
  for (std::uint64_t seed : {1, 2, 3}) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::vector<TrainingSample> samples;
    for (int i = 0; i < 100; ++i) {
      TrainingSample s;
      const std::size_t m = 50, F = feature_dim(1);
      s.features = FeatureMatrix{m, F, std::vector<double>(m * F, 0.0)};
      for (std::size_t r = 0; r < m; ++r) s.features.data[r * F] = 1.0;
      for (std::size_t r = 0; r < m; ++r) s.targets.push_back(std::abs(normal(rng)));
      s.weights.assign(m, 1.0 / m);
      samples.push_back(std::move(s));
    }
    const auto res = train_quantile_on_samples(samples, 0.1, TrainConfig{0.1, 200, 10, seed}, ModelShape{1, 4});
    const double e = res.model.band(head_outputs(res.model.core, samples[0].features)[0]);
    ok = ok && std::abs(e - 1.6449) <= 0.15;
    d << "seed " << seed << ": E=" << fmt(e) << "; ";
  }
  return {ok, d.str()};
}

double batch_loss(const SpectralModel& m, std::span<const FunctionPair> batch) {
  double total = 0.0;
  for (const auto& p : batch) total += relative_l2_loss(forward(m, p.input(), p.grid()), p.output());
  return total / static_cast<double>(batch.size());
}

Outcome gradient_checks() {
  std::size_t base_cmp = 0, base_bad = 0;
  for (int draw = 0; draw < 20; ++draw) {
    const auto model = SpectralModel::initialize(ModelShape{1 + draw % 4, 3 + draw % 6}, 900 + draw);
    const Dataset d = generate_dataset(GrfSpec{}, 1.0, 1 + draw % 3, 10 + draw, 1900 + draw);
    const auto g = grad(model, d.pairs());
    SpectralModel probe = model;
    for (std::size_t k = 0; k < g.values.size(); ++k) {
      const double orig = probe.params()[k];
      probe.mutable_params()[k] = orig + 1e-5;
      const double lp = batch_loss(probe, d.pairs());
      probe.mutable_params()[k] = orig - 1e-5;
      const double lm = batch_loss(probe, d.pairs());
      probe.mutable_params()[k] = orig;
      ++base_cmp;
      if (!gradient_coordinate_agrees(g.values[k], (lp - lm) / 2e-5)) ++base_bad;
    }
  }
  std::size_t q_cmp = 0, q_excl = 0, q_bad = 0;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> spread(0.2, 3.0);
  for (int draw = 0; draw < 20; ++draw) {
    const QuantileModel qm{SpectralModel::initialize(ModelShape{1 + draw % 4, 3 + draw % 6}, 300 + draw), 0.1,
                           0.5};
    const Grid g = make_uniform_grid(10 + draw);
    const auto a = sample_grf_coefficient(GrfSpec{}, g, 600 + draw);
    const auto e = quantile_forward(qm, a, g);
    TrainingSample s{feature_matrix(a, g, qm.core.n_modes()), {}, g.trapezoid_weights()};
    for (double v : e.values()) s.targets.push_back(v * spread(rng));
    const auto rep = pinball_grad_check(qm, std::span<const TrainingSample>(&s, 1));
    q_cmp += rep.compared;
    q_excl += rep.excluded;
    q_bad += rep.mismatched;
  }
  return {base_bad == 0 && q_bad == 0 && base_cmp > 0 && q_cmp > 0,
          "base " + std::to_string(base_cmp - base_bad) + "/" + std::to_string(base_cmp) + " agree; pinball " +
              std::to_string(q_cmp - q_bad) + "/" + std::to_string(q_cmp) + " agree, " + std::to_string(q_excl) +
              " kink-adjacent excluded"};
}

// Enumeration oracle on explicit ratio fields.
struct Toy {
  std::vector<BandResidual> cal, test;
  double alpha, delta, t;
};

double oracle_lambda(const Toy& toy, double& t_used) {
  std::size_t m_bar = toy.cal.front().size();
  for (const auto& f : toy.cal) m_bar = std::min(m_bar, f.size());
  t_used = toy.t;
  const double delta_eff = toy.delta - std::exp(-2.0 * static_cast<double>(m_bar) * t_used * t_used);
  std::vector<double> candidates;
  for (const auto& f : toy.cal)
    for (std::size_t i = 0; i < f.size(); ++i) candidates.push_back(f.residual[i] / f.band[i]);
  std::sort(candidates.begin(), candidates.end());
  const double n = static_cast<double>(toy.cal.size());
  for (double lam : candidates) {
    double good = 0;
    for (const auto& f : toy.cal) {
      double hit = 0;
      for (std::size_t i = 0; i < f.size(); ++i) hit += f.residual[i] / f.band[i] <= lam;
      const double need = std::min(1.0, 1.0 - toy.alpha + t_used) * static_cast<double>(f.size());
      if (hit >= std::ceil(need - 1e-9)) ++good;
    }
    if (good >= (n + 1.0) * (1.0 - delta_eff) - 1e-9) return lam;
  }
  return std::numeric_limits<double>::infinity();
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(2718);
  std::uniform_real_distribution<double> unif(0.05, 3.0);
  int agree = 0, infeasible = 0;
  for (int i = 0; i < 100; ++i) {
    Toy toy;
    const std::size_t n = 1 + rng() % 10;
    auto make = [&](std::size_t count) {
      std::vector<BandResidual> v(count);
      for (auto& f : v) {
        const std::size_t m = 1 + rng() % 10;
        for (std::size_t k = 0; k < m; ++k) {
          f.residual.push_back(unif(rng));
          f.band.push_back(unif(rng));
        }
      }
      return v;
    };
    toy.cal = make(n);
    toy.test = make(1 + rng() % 10);
    toy.alpha = 0.05 + 0.05 * static_cast<double>(rng() % 10);
    toy.delta = 0.2 + 0.1 * static_cast<double>(rng() % 7);
    std::size_t m_bar = toy.cal.front().size();
    for (const auto& f : toy.cal) m_bar = std::min(m_bar, f.size());
    toy.t = hoeffding_lower_bound(m_bar, toy.delta) * (1.05 + 0.5 * unif(rng));
    double t_used;
    const double expected = oracle_lambda(toy, t_used);
    try {
      const auto res = calibrate_bands(toy.cal, CalibrationConfig{toy.alpha, toy.delta, toy.t});
      const auto rep = evaluate_bands(toy.test, res);
      bool same = res.lambda_hat == expected;
      double pct = 0, radius = 0, pts = 0;
      for (std::size_t k = 0; k < toy.test.size(); ++k) {
        const auto& f = toy.test[k];
        double hit = 0;
        for (std::size_t p = 0; p < f.size(); ++p) {
          hit += f.residual[p] / f.band[p] <= expected;
          radius += expected * f.band[p];
          ++pts;
        }
        const double cov = hit / static_cast<double>(f.size());
        same = same && cov == rep.per_function_coverage[k];
        pct += cov >= 1.0 - toy.alpha;
      }
      same = same && pct / static_cast<double>(toy.test.size()) == rep.calibration_percentage &&
             std::abs(radius / pts - rep.mean_bandwidth) <= 1e-12 * (radius / pts);
      agree += same;
    } catch (const InfeasibleCalibration&) {
      ++infeasible;
      agree += std::isinf(expected);
    }
  }
  return {agree == 100, std::to_string(agree) + "/100 toys agree (" + std::to_string(infeasible) + " infeasible)"};
}

Outcome solver_correctness() {
  const Grid g = make_uniform_grid(257);
  const auto u = solve_darcy_1d(GridFunction(g, 1.0), GridFunction(g, 1.0));
  double err = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) err = std::max(err, std::abs(u[i] - 0.5 * g[i] * (1 - g[i])));

  using std::numbers::pi;
  auto mms_error = [](std::size_t m) {
    const Grid grid = make_uniform_grid(m);
    std::vector<double> a, f;
    for (double x : grid.points()) {
      const double ax = std::exp(0.5 * std::sin(2 * pi * x));
      a.push_back(ax);
      f.push_back(ax * pi * pi * (std::sin(pi * x) - std::cos(2 * pi * x) * std::cos(pi * x)));
    }
    const auto uh = solve_darcy_1d(GridFunction(grid, a), GridFunction(grid, f));
    double e = 0.0;
    for (std::size_t i = 0; i < m; ++i) e = std::max(e, std::abs(uh[i] - std::sin(pi * grid[i])));
    return e;
  };
  const double ratio = mms_error(65) / mms_error(129);
  return {err <= 1e-4 && ratio >= 3.5,
          "-u''=1 max error " + fmt(err, 3) + "; convergence ratio 65->129 " + fmt(ratio)};
}

Outcome heteroscedastic_payoff() {
  bool ok = true;
  std::ostringstream d;
  const double alpha = 0.1, delta = 0.2;
  const double floor = 1.0 - delta - 1.5 * std::sqrt(delta * (1.0 - delta) / 200.0);
  for (std::uint64_t seed : {1, 2, 3}) {
    const SpectralModel zero(ModelShape{4, 8});
    const auto noise = bump_noise(0.01, 5.0);
    const GrfSpec grf{};
    const Dataset train = make_noise_dataset(grf, noise, 100, 64, derive_seed(seed, 1), SplitTag::kTrainQuantile);
    const Dataset cal = make_noise_dataset(grf, noise, 200, 64, derive_seed(seed, 2), SplitTag::kCalibration);
    const Dataset test = make_noise_dataset(grf, noise, 200, 64, derive_seed(seed, 3), SplitTag::kTest);
    const auto qm = train_quantile(train, zero, alpha, TrainConfig{0.1, 100, 10, seed}, ModelShape{4, 8}).model;
    const auto u = evaluate(test, calibrate(cal, zero, qm, cal_cfg(alpha, delta)), zero, qm);
    const auto c =
        constant_baseline_evaluate(test, constant_baseline_calibrate(cal, zero, cal_cfg(alpha, delta)), zero);
    ok = ok && u.mean_bandwidth < c.mean_bandwidth && u.calibration_percentage >= floor &&
         c.calibration_percentage >= floor;
    d << "seed " << seed << ": " << fmt(u.mean_bandwidth) << " vs " << fmt(c.mean_bandwidth) << " (pct "
      << fmt(u.calibration_percentage, 3) << "/" << fmt(c.calibration_percentage, 3) << "); ";
  }
  return {ok, d.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> run_all_commands(const fs::path& work, const fs::path& config) {
  std::map<std::string, std::string> outputs;
  for (const char* verb :
       {"gen-data", "train-base", "train-quantile", "calibrate", "eval", "verify-pac", "sweep"}) {
    const fs::path log = work / "stdout.txt";
    const std::string cmd =
        std::string(UQNO_CLI_PATH) + " " + verb + " --config " + config.string() + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (WEXITSTATUS(status) != 0) throw std::runtime_error(std::string(verb) + " failed: " + slurp(log));
    outputs[std::string("stdout:") + verb] = slurp(log);
  }
  for (const auto& entry : fs::directory_iterator(work / "run"))
    outputs[entry.path().filename().string()] = slurp(entry.path());
  return outputs;
}

Outcome cli_determinism() {
  const fs::path work = fs::temp_directory_path() / "uqno_acceptance_cli";
  fs::remove_all(work);
  fs::create_directories(work);
  const nlohmann::json cfg = {
      {"seed", 11},
      {"out_dir", (work / "run").string()},
      {"m", 32},
      {"n_train_base", 40},
      {"n_train_quantile", 40},
      {"n_cal", 60},
      {"n_test", 30},
      {"model", {{"n_modes", 4}, {"width", 8}}},
      {"train_base", {{"learning_rate", 0.002}, {"epochs", 20}, {"batch_size", 10}}},
      {"train_quantile", {{"learning_rate", 0.1}, {"epochs", 20}, {"batch_size", 10}}},
      {"calibration", {{"alpha", 0.1}, {"delta", 0.2}, {"t", "auto"}}},
      {"pac", {{"n_trials", 50}, {"refinement", 2}}}};
  const fs::path config = work / "config.json";
  std::ofstream(config) << cfg.dump(2);
  const auto first = run_all_commands(work, config);
  fs::remove_all(work / "run");
  const auto second = run_all_commands(work, config);
  fs::remove_all(work);
  std::size_t same = 0;
  std::string diff;
  for (const auto& [name, content] : first) {
    const auto it = second.find(name);
    if (it != second.end() && it->second == content) ++same;
    else diff += " " + name;
  }
  const bool ok = same == first.size() && first.size() == second.size() && first.size() >= 18;
  return {ok, std::to_string(same) + "/" + std::to_string(first.size()) + " outputs identical" +
                  (diff.empty() ? "" : "; differ:" + diff)};
}

}  // namespace

int main() {
  std::printf("base model pilot loss (default config): %s\n", fmt(trained().base_loss).c_str());
  report("C1", "pac-guarantee", pac_guarantee);
  report("C2", "calibration-percentage-floor", calibration_percentage_floor);
  report("C3", "tradeoff-monotone-in-delta", tradeoff_monotone);
  report("C4", "pinball-quantile-consistency", pinball_consistency);
  report("C5", "gradient-checks", gradient_checks);
  report("C6", "oracle-equivalence", oracle_equivalence);
  report("C7", "solver-correctness", solver_correctness);
  report("C8", "heteroscedastic-payoff", heteroscedastic_payoff);
  report("C9", "cli-determinism", cli_determinism);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}

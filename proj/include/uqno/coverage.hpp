#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "conformal.hpp"
#include "darcy.hpp"
#include "errors.hpp"
#include "grid.hpp"
#include "quantile_model.hpp"
#include "random.hpp"
#include "spectral_model.hpp"
#include "text_format.hpp"

namespace uqno {

struct CoverageReport {
  std::vector<double> per_function_coverage;
  double calibration_percentage = 0.0;
  double mean_bandwidth = 0.0;
  double alpha = 0.0;
  double delta = 0.0;
  double lambda_hat = 0.0;
  double t = 0.0;
  std::size_t m_bar = 0;
};

/// Fraction of points with r ≤ λ·E, tested as r/E ≤ λ so that it agrees
/// exactly with the ratio scores. λ may be +∞.
inline double band_coverage(const BandResidual& f, double lambda) {
  if (f.size() == 0) throw InvalidArgument("coverage of an empty function");
  const auto ratios = band_ratios(f);
  std::size_t hit = 0;
  for (double q : ratios)
    if (q <= lambda) ++hit;
  return static_cast<double>(hit) / static_cast<double>(f.size());
}

inline bool meets_threshold(double coverage, double alpha) { return coverage >= 1.0 - alpha; }

/// Share of coverages at or above 1 − α.
inline double calibration_percentage(std::span<const double> coverages, double alpha) {
  if (coverages.empty()) return 0.0;
  std::size_t ok = 0;
  for (double c : coverages)
    if (meets_threshold(c, alpha)) ++ok;
  return static_cast<double>(ok) / static_cast<double>(coverages.size());
}

inline double function_coverage(const FunctionPair& pair, const CalibrationResult& result,
                                const SpectralModel& base, const QuantileModel& qm) {
  return band_coverage(band_residual(pair, base, qm), result.lambda_hat);
}

inline CoverageReport evaluate_bands(std::span<const BandResidual> test,
                                     const CalibrationResult& result) {
  CoverageReport rep;
  rep.alpha = result.alpha;
  rep.delta = result.delta;
  rep.lambda_hat = result.lambda_hat;
  rep.t = result.t;
  rep.m_bar = result.m_bar;
  double radius_sum = 0.0;
  std::size_t points = 0;
  for (const auto& f : test) {
    rep.per_function_coverage.push_back(band_coverage(f, result.lambda_hat));
    for (double e : f.band) radius_sum += result.lambda_hat * e;
    points += f.size();
  }
  rep.calibration_percentage = calibration_percentage(rep.per_function_coverage, result.alpha);
  rep.mean_bandwidth = points ? radius_sum / static_cast<double>(points) : 0.0;
  return rep;
}

/// Coverage of every test function, the share meeting 1 − α, and the mean
/// radius λ̂·E over all test points.
inline CoverageReport evaluate(const Dataset& test_set, const CalibrationResult& result,
                               const SpectralModel& base, const QuantileModel& qm) {
  require_split(test_set, SplitTag::kTest, "evaluate");
  return evaluate_bands(band_residuals(test_set, base, qm), result);
}

// ---------------------------------------------------------------------------
// Constant-band baseline
// ---------------------------------------------------------------------------

/// Residuals paired with the constant band E ≡ 1.
inline std::vector<BandResidual> constant_band_residuals(const Dataset& d,
                                                         const SpectralModel& base) {
  std::vector<BandResidual> out;
  for (const auto& p : d.pairs()) {
    const auto r = residual_magnitudes(base, p);
    out.push_back({{r.values().begin(), r.values().end()}, std::vector<double>(r.size(), 1.0)});
  }
  return out;
}

inline CalibrationResult constant_baseline_calibrate(const Dataset& cal_set,
                                                     const SpectralModel& base,
                                                     const CalibrationConfig& cfg) {
  require_split(cal_set, SplitTag::kCalibration, "constant_baseline_calibrate");
  return calibrate_bands(constant_band_residuals(cal_set, base), cfg);
}

inline CoverageReport constant_baseline_evaluate(const Dataset& test_set,
                                                 const CalibrationResult& result,
                                                 const SpectralModel& base) {
  require_split(test_set, SplitTag::kTest, "constant_baseline_evaluate");
  return evaluate_bands(constant_band_residuals(test_set, base), result);
}

// ---------------------------------------------------------------------------
// Monte-Carlo check of P[E_x coverage < 1 − α] ≤ δ
// ---------------------------------------------------------------------------

/// One-sided upper confidence bound on a binomial proportion (exact).
inline double clopper_pearson_upper(std::size_t successes, std::size_t trials,
                                    double confidence = 0.95) {
  if (trials == 0) throw InvalidArgument("clopper_pearson_upper: no trials");
  if (successes >= trials) return 1.0;
  return boost::math::ibeta_inv(static_cast<double>(successes + 1),
                                static_cast<double>(trials - successes), confidence);
}

struct GeneratorConfig {
  GrfSpec grf;
  double forcing = 1.0;
  std::size_t m = 128;
  std::size_t n_cal = 200;
  /// The test function is solved on a uniform grid of refinement·m points.
  std::size_t refinement = 4;
};

struct PipelineConfig {
  const SpectralModel* base = nullptr;
  const QuantileModel* quantile = nullptr;
  CalibrationConfig calibration;
  /// Replaces λ̂ in every trial; for exercising the harness only.
  std::optional<double> forced_lambda;
};

struct PacTrialReport {
  std::size_t n_trials = 0;
  std::size_t violations = 0;
  double violation_rate = 0.0;
  double alpha = 0.0;
  double target_delta = 0.0;
  double binomial_ci_upper = 0.0;
  double mean_lambda_hat = 0.0;
  std::vector<double> test_coverages;  // one per trial, trial order
};

/// Each trial draws a fresh calibration set and one fresh test function from
/// the generator (trial seed derive_seed(seed, trial)), calibrates, and
/// records whether the test function's coverage on the refined grid falls
/// below 1 − α.
inline PacTrialReport pac_monte_carlo(const GeneratorConfig& gen, const PipelineConfig& pipe,
                                      std::size_t n_trials, std::uint64_t seed) {
  if (n_trials < 50) throw InvalidArgument("pac_monte_carlo: n_trials must be >= 50");
  if (!pipe.base || !pipe.quantile) throw InvalidArgument("pac_monte_carlo: models missing");
  pipe.calibration.validate();
  PacTrialReport rep;
  rep.n_trials = n_trials;
  rep.alpha = pipe.calibration.alpha;
  rep.target_delta = pipe.calibration.delta;
  double lambda_sum = 0.0;
  for (std::size_t trial = 0; trial < n_trials; ++trial) {
    const std::uint64_t ts = derive_seed(seed, trial);
    double lambda;
    if (pipe.forced_lambda) {
      lambda = *pipe.forced_lambda;
    } else {
      const Dataset cal = generate_dataset(gen.grf, gen.forcing, gen.n_cal, gen.m,
                                           derive_seed(ts, 0), SplitTag::kCalibration);
      try {
        lambda = calibrate(cal, *pipe.base, *pipe.quantile, pipe.calibration).lambda_hat;
      } catch (const InfeasibleCalibration& e) {
        throw InfeasibleCalibration("trial " + std::to_string(trial) + ": " + e.what(),
                                    e.required_n());
      }
    }
    const Dataset test = generate_dataset(gen.grf, gen.forcing, 1, gen.refinement * gen.m,
                                          derive_seed(ts, 1), SplitTag::kTest);
    const double cov = band_coverage(band_residual(test[0], *pipe.base, *pipe.quantile), lambda);
    rep.test_coverages.push_back(cov);
    if (!meets_threshold(cov, rep.alpha)) ++rep.violations;
    lambda_sum += lambda;
  }
  rep.violation_rate = static_cast<double>(rep.violations) / static_cast<double>(n_trials);
  rep.binomial_ci_upper = clopper_pearson_upper(rep.violations, n_trials);
  rep.mean_lambda_hat = lambda_sum / static_cast<double>(n_trials);
  return rep;
}

inline std::string pac_report_to_json(const PacTrialReport& r) {
  JsonObjectWriter w;
  w.field("format", "uqno-pac").field("version", 1);
  w.field("n_trials", static_cast<long long>(r.n_trials))
      .field("violations", static_cast<long long>(r.violations))
      .field("violation_rate", r.violation_rate)
      .field("alpha", r.alpha)
      .field("target_delta", r.target_delta)
      .field("binomial_ci_upper", r.binomial_ci_upper);
  if (std::isfinite(r.mean_lambda_hat)) w.field("mean_lambda_hat", r.mean_lambda_hat);
  return w.str();
}

// ---------------------------------------------------------------------------
// α/δ trade-off sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  double alpha = 0.0;
  double delta = 0.0;
  double t = 0.0;
  std::size_t m_bar = 0;
  double lambda_hat = 0.0;
  double mean_bandwidth = 0.0;
  double calibration_percentage = 0.0;
  bool feasible = true;
};

/// Calibrates and evaluates every (α, δ) on fixed calibration and test fields.
/// Infeasible cells become rows with feasible = false.
inline std::vector<SweepRow> tradeoff_sweep(std::span<const double> alphas,
                                            std::span<const double> deltas,
                                            std::span<const BandResidual> cal,
                                            std::span<const BandResidual> test,
                                            std::optional<double> explicit_t = std::nullopt) {
  if (alphas.empty() || deltas.empty()) throw InvalidArgument("tradeoff_sweep: empty grid");
  std::vector<SweepRow> rows;
  for (double alpha : alphas)
    for (double delta : deltas) {
      const CalibrationConfig cfg{alpha, delta, explicit_t};
      SweepRow row;
      row.alpha = alpha;
      row.delta = delta;
      try {
        const auto res = calibrate_bands(cal, cfg);
        const auto rep = evaluate_bands(test, res);
        row.t = res.t;
        row.m_bar = res.m_bar;
        row.lambda_hat = res.lambda_hat;
        row.mean_bandwidth = rep.mean_bandwidth;
        row.calibration_percentage = rep.calibration_percentage;
      } catch (const InfeasibleCalibration&) {
        row.feasible = false;
      } catch (const InvalidArgument&) {
        row.feasible = false;
      }
      if (!row.feasible) {
        std::size_t m_bar = cal.front().size();
        for (const auto& f : cal) m_bar = std::min(m_bar, f.size());
        row.m_bar = m_bar;
        row.t = explicit_t ? *explicit_t : default_t(m_bar, delta);
      }
      rows.push_back(row);
    }
  return rows;
}

inline std::vector<SweepRow> tradeoff_sweep(std::span<const double> alphas,
                                            std::span<const double> deltas,
                                            const Dataset& cal_set, const Dataset& test_set,
                                            const SpectralModel& base, const QuantileModel& qm) {
  require_split(cal_set, SplitTag::kCalibration, "tradeoff_sweep");
  require_split(test_set, SplitTag::kTest, "tradeoff_sweep");
  return tradeoff_sweep(alphas, deltas, band_residuals(cal_set, base, qm),
                        band_residuals(test_set, base, qm));
}

inline constexpr const char* kSweepCsvHeader =
    "alpha,delta,t,m_bar,lambda_hat,mean_bandwidth,calibration_percentage,status";

inline std::string sweep_to_csv(std::span<const SweepRow> rows) {
  std::string out = kSweepCsvHeader;
  out += '\n';
  for (const auto& r : rows) {
    out += format_real(r.alpha) + ',' + format_real(r.delta) + ',' + format_real(r.t) + ',' +
           std::to_string(r.m_bar) + ',';
    if (r.feasible)
      out += format_real(r.lambda_hat) + ',' + format_real(r.mean_bandwidth) + ',' +
             format_real(r.calibration_percentage) + ",ok\n";
    else
      out += ",,,infeasible\n";
  }
  return out;
}

}  // namespace uqno

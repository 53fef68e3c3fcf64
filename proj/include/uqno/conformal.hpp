#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "grid.hpp"
#include "quantile_model.hpp"
#include "spectral_model.hpp"
#include "text_format.hpp"

namespace uqno {

/// How λ̂ is read off the sorted calibration scores.
enum class LambdaRule {
  /// k = ⌈(n+1)(1−δ′)⌉, the finite-sample split-conformal order statistic.
  kSplitConformal,
  /// k = n − ⌈(n+1)δ′⌉, one position lower; kept for comparison only.
  kAsPrinted,
};

struct CalibrationConfig {
  double alpha = 0.1;
  double delta = 0.1;
  /// Hoeffding slack; nullopt selects default_t(m̄, δ).
  std::optional<double> t;
  LambdaRule rule = LambdaRule::kSplitConformal;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
    if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("delta must lie in (0, 1)");
    if (t && !(*t > 0.0 && std::isfinite(*t))) throw InvalidArgument("t must be positive");
  }
};

struct CalibrationResult {
  double alpha = 0.0;
  double delta = 0.0;
  double t = 0.0;
  std::size_t m_bar = 0;
  double delta_eff = 0.0;  // δ′ = δ − exp(−2 m̄ t²)
  double lambda_hat = 0.0;
  std::size_t order_statistic = 0;  // λ̂ = sorted_scores[order_statistic − 1]
  std::vector<double> sorted_scores;

  std::size_t n() const { return sorted_scores.size(); }
  friend bool operator==(const CalibrationResult&, const CalibrationResult&) = default;
};

// ---------------------------------------------------------------------------
// Slack and index arithmetic
// ---------------------------------------------------------------------------

/// √(−ln δ / (2 m̄)); an explicit t must exceed this.
inline double hoeffding_lower_bound(std::size_t m_bar, double delta) {
  return std::sqrt(-std::log(delta) / (2.0 * static_cast<double>(m_bar)));
}

/// t = √(−ln(δ/2) / (2 m̄)), so that exp(−2 m̄ t²) = δ/2.
inline double default_t(std::size_t m_bar, double delta) {
  if (m_bar < 1) throw InvalidArgument("default_t: m_bar must be >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("default_t: delta must lie in (0, 1)");
  return std::sqrt(-std::log(delta / 2.0) / (2.0 * static_cast<double>(m_bar)));
}

inline double effective_delta(double delta, double t, std::size_t m_bar) {
  return delta - std::exp(-2.0 * static_cast<double>(m_bar) * t * t);
}

/// ⌈x⌉ for x ≥ 0, treating values within 1e−9 relative of an integer as that
/// integer so that products like 20·0.95 do not round up spuriously.
inline long ceil_index(double x) {
  const double r = std::round(x);
  if (std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x))) return static_cast<long>(r);
  return static_cast<long>(std::ceil(x));
}

/// j = ⌈m(1 − α + t)⌉ clamped to [1, m].
inline std::size_t score_index(std::size_t m, double alpha, double t) {
  const long j = ceil_index(static_cast<double>(m) * (1.0 - alpha + t));
  return static_cast<std::size_t>(std::clamp<long>(j, 1, static_cast<long>(m)));
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

/// Residual magnitudes r and heuristic band E of one function on its own grid.
/// For vector-valued outputs r would hold ‖u − û‖₂; here it is |u − û|.
struct BandResidual {
  std::vector<double> residual;
  std::vector<double> band;

  std::size_t size() const { return residual.size(); }
};

inline BandResidual band_residual(const FunctionPair& pair, const SpectralModel& base,
                                  const QuantileModel& qm) {
  const auto r = residual_magnitudes(base, pair);
  const auto e = quantile_forward(qm, pair.input(), pair.grid());
  return {{r.values().begin(), r.values().end()}, {e.values().begin(), e.values().end()}};
}

/// σ_j of the ratios, j = score_index(m, α, t).
inline double score_from_ratios(std::vector<double> ratios, double alpha, double t) {
  if (ratios.empty()) throw InvalidArgument("nonconformity score of an empty function");
  const std::size_t j = score_index(ratios.size(), alpha, t);
  std::nth_element(ratios.begin(), ratios.begin() + static_cast<long>(j - 1), ratios.end());
  return ratios[j - 1];
}

inline std::vector<double> band_ratios(const BandResidual& br) {
  if (br.residual.size() != br.band.size())
    throw InvalidArgument("residual and band lengths differ");
  std::vector<double> ratios(br.size());
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (!(br.band[i] > 0.0))
      throw InvalidState("heuristic band must be strictly positive (point " + std::to_string(i) +
                         ")");
    ratios[i] = br.residual[i] / br.band[i];
  }
  return ratios;
}

inline double nonconformity_score(const BandResidual& br, double alpha, double t) {
  return score_from_ratios(band_ratios(br), alpha, t);
}

/// Order statistic of ‖u(xᵢ) − Ĝ(a)(xᵢ)‖ / E(a)(xᵢ) over the pair's grid.
inline double nonconformity_score(const FunctionPair& pair, const SpectralModel& base,
                                  const QuantileModel& qm, double alpha, double t) {
  return nonconformity_score(band_residual(pair, base, qm), alpha, t);
}

// ---------------------------------------------------------------------------
// λ̂ selection
// ---------------------------------------------------------------------------

/// Smallest n for which k = ⌈(n+1)(1−δ′)⌉ ≤ n.
inline long minimal_calibration_size(double delta_eff) {
  return std::max<long>(1, ceil_index(1.0 / delta_eff - 1.0));
}

/// 1-based order statistic into n sorted scores; throws if there is none.
inline std::size_t lambda_order_statistic(std::size_t n, double delta_eff,
                                          LambdaRule rule = LambdaRule::kSplitConformal) {
  if (!(delta_eff > 0.0))
    throw InvalidArgument("invalid t: effective delta " + format_real(delta_eff) +
                          " must be positive");
  const double np1 = static_cast<double>(n + 1);
  const long k = rule == LambdaRule::kSplitConformal
                     ? ceil_index(np1 * (1.0 - delta_eff))
                     : static_cast<long>(n) - ceil_index(np1 * delta_eff);
  if (k > static_cast<long>(n) || k < 1) {
    const long need = minimal_calibration_size(delta_eff);
    throw InfeasibleCalibration("infeasible calibration: n=" + std::to_string(n) +
                                    " calibration functions is too small for effective delta " +
                                    format_real(delta_eff) + "; need n >= " + std::to_string(need),
                                need);
  }
  return static_cast<std::size_t>(k);
}

/// k-th smallest score with k = ⌈(n+1)(1−δ′)⌉, δ′ = δ − exp(−2 m̄ t²).
inline double select_lambda(std::vector<double> scores, double delta, double t, std::size_t m_bar,
                            LambdaRule rule = LambdaRule::kSplitConformal) {
  if (scores.empty()) throw InvalidArgument("select_lambda: no scores");
  const std::size_t k = lambda_order_statistic(scores.size(), effective_delta(delta, t, m_bar), rule);
  std::stable_sort(scores.begin(), scores.end());
  return scores[k - 1];
}

/// Calibration on precomputed (r, E) fields; functions may have different
/// point counts, in which case m̄ = min mᵢ drives t and δ′.
inline CalibrationResult calibrate_bands(std::span<const BandResidual> functions,
                                         const CalibrationConfig& cfg) {
  cfg.validate();
  if (functions.empty()) throw InvalidArgument("calibrate: empty calibration set");
  std::size_t m_bar = functions.front().size();
  for (const auto& f : functions) m_bar = std::min(m_bar, f.size());
  if (m_bar < 1) throw InvalidArgument("calibrate: function with no points");

  CalibrationResult res;
  res.alpha = cfg.alpha;
  res.delta = cfg.delta;
  res.m_bar = m_bar;
  if (cfg.t) {
    const double lb = hoeffding_lower_bound(m_bar, cfg.delta);
    if (!(*cfg.t > lb))
      throw InvalidArgument("explicit t=" + format_real(*cfg.t) + " must exceed " +
                            format_real(lb) + " for m_bar=" + std::to_string(m_bar));
    res.t = *cfg.t;
  } else {
    res.t = default_t(m_bar, cfg.delta);
  }
  res.delta_eff = effective_delta(cfg.delta, res.t, m_bar);

  res.sorted_scores.reserve(functions.size());
  for (const auto& f : functions) res.sorted_scores.push_back(nonconformity_score(f, cfg.alpha, res.t));
  std::stable_sort(res.sorted_scores.begin(), res.sorted_scores.end());
  res.order_statistic = lambda_order_statistic(res.n(), res.delta_eff, cfg.rule);
  res.lambda_hat = res.sorted_scores[res.order_statistic - 1];
  return res;
}

inline std::vector<BandResidual> band_residuals(const Dataset& d, const SpectralModel& base,
                                                const QuantileModel& qm) {
  std::vector<BandResidual> out;
  out.reserve(d.size());
  for (const auto& p : d.pairs()) out.push_back(band_residual(p, base, qm));
  return out;
}

/// Calibrate phase: score every calibration pair and select λ̂. The caller is
/// responsible for the calibration and test pairs being exchangeable.
inline CalibrationResult calibrate(const Dataset& cal_set, const SpectralModel& base,
                                   const QuantileModel& qm, const CalibrationConfig& cfg) {
  require_split(cal_set, SplitTag::kCalibration, "calibrate");
  const auto fields = band_residuals(cal_set, base, qm);
  return calibrate_bands(fields, cfg);
}

struct Ball {
  GridFunction centers;
  GridFunction radii;
};

/// Predict phase: ball centred at Ĝ(a)(x) with radius λ̂·E(a)(x).
inline Ball predict_ball(const CalibrationResult& result, const SpectralModel& base,
                         const QuantileModel& qm, const GridFunction& a, const Grid& query_grid) {
  GridFunction centers = forward(base, a, query_grid);
  const GridFunction e = quantile_forward(qm, a, query_grid);
  std::vector<double> radii(e.size());
  for (std::size_t i = 0; i < radii.size(); ++i) radii[i] = result.lambda_hat * e[i];
  return {std::move(centers), GridFunction(query_grid, std::move(radii))};
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline constexpr const char* kCalibrationFormat = "uqno-calibration";

inline std::string calibration_to_json(const CalibrationResult& r) {
  return JsonObjectWriter()
      .field("format", kCalibrationFormat)
      .field("version", 1)
      .field("alpha", r.alpha)
      .field("delta", r.delta)
      .field("t", r.t)
      .field("m_bar", static_cast<long long>(r.m_bar))
      .field("delta_eff", r.delta_eff)
      .field("lambda_hat", r.lambda_hat)
      .field("n", static_cast<long long>(r.n()))
      .field("order_statistic", static_cast<long long>(r.order_statistic))
      .field("sorted_scores", r.sorted_scores)
      .str();
}

inline CalibrationResult calibration_from_json(const nlohmann::json& doc) {
  auto fail = [](const std::string& why) { throw ParseError("calibration file: " + why); };
  if (!doc.is_object() || doc.value("format", std::string()) != kCalibrationFormat)
    fail("format must be \"uqno-calibration\"");
  if (!doc.contains("version") || doc["version"] != 1) fail("unsupported version");
  for (const char* key : {"alpha", "delta", "t", "m_bar", "delta_eff", "lambda_hat", "n"})
    if (!doc.contains(key) || !doc[key].is_number()) fail(std::string("missing number \"") + key + "\"");
  if (!doc.contains("sorted_scores") || !doc["sorted_scores"].is_array()) fail("missing sorted_scores");
  CalibrationResult r;
  r.alpha = doc["alpha"].get<double>();
  r.delta = doc["delta"].get<double>();
  r.t = doc["t"].get<double>();
  r.m_bar = doc["m_bar"].get<std::size_t>();
  r.delta_eff = doc["delta_eff"].get<double>();
  r.lambda_hat = doc["lambda_hat"].get<double>();
  r.sorted_scores = doc["sorted_scores"].get<std::vector<double>>();
  if (doc["n"].get<std::size_t>() != r.sorted_scores.size()) fail("n differs from len(sorted_scores)");
  if (!std::is_sorted(r.sorted_scores.begin(), r.sorted_scores.end())) fail("scores not sorted");
  r.order_statistic = doc.contains("order_statistic")
                          ? doc["order_statistic"].get<std::size_t>()
                          : lambda_order_statistic(r.n(), r.delta_eff);
  if (r.order_statistic < 1 || r.order_statistic > r.n() ||
      r.sorted_scores[r.order_statistic - 1] != r.lambda_hat)
    fail("lambda_hat is not the recorded order statistic");
  return r;
}

}  // namespace uqno

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "grid.hpp"
#include "spectral_model.hpp"
#include "text_format.hpp"

namespace uqno {

inline constexpr double kQuantileFloor = 1e-8;

inline double softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// Which branch of the pinball loss carries the weight α.
enum class QuantileWeighting {
  /// Out-of-band excess weighted by 1−α, in-band slack by α. Minimised by the
  /// (1−α)-quantile of the residual magnitude. Default.
  kOutOfBandHeavy,
  /// Weights swapped (out-of-band α, in-band 1−α), as the loss is sometimes
  /// printed. Minimised by the α-quantile; kept for comparison only.
  kSwapped,
};

/// Heuristic band operator E(a)(x) = scale·(softplus(z(a, x)) + 1e−8) > 0.
///
/// `scale` is fixed at training time to the mean training residual so that the
/// network trains in a unit-scale regime; it is 1 for a freshly built model.
struct QuantileModel {
  SpectralModel core;
  double alpha = 0.1;
  double scale = 1.0;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("quantile alpha must lie in (0, 1)");
    if (!(scale > 0.0) || !std::isfinite(scale))
      throw InvalidArgument("quantile scale must be positive and finite");
  }

  double band(double z) const { return scale * (softplus(z) + kQuantileFloor); }

  friend bool operator==(const QuantileModel&, const QuantileModel&) = default;
};

/// E(a) at every query point; strictly positive.
inline GridFunction quantile_forward(const QuantileModel& qm, const GridFunction& a,
                                     const Grid& query_grid) {
  auto z = head_outputs(qm.core, feature_matrix(a, query_grid, qm.core.n_modes()));
  for (double& v : z) v = qm.band(v);
  return GridFunction(query_grid, std::move(z));
}

namespace detail {

inline void pinball_weights(double alpha, QuantileWeighting w, double& out_w, double& in_w) {
  out_w = w == QuantileWeighting::kOutOfBandHeavy ? 1.0 - alpha : alpha;
  in_w = w == QuantileWeighting::kOutOfBandHeavy ? alpha : 1.0 - alpha;
}

}  // namespace detail

/// Grid mean of the pointwise pinball loss between a band E and residual
/// magnitudes r: (1−α)(r−E) where r > E and α(E−r) where r ≤ E.
inline double generalized_quantile_loss(std::span<const double> band, std::span<const double> r,
                                        double alpha,
                                        QuantileWeighting weighting = QuantileWeighting::kOutOfBandHeavy) {
  if (band.size() != r.size())
    throw InvalidArgument("generalized_quantile_loss: band and residual lengths differ");
  if (band.empty()) throw InvalidArgument("generalized_quantile_loss: empty input");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw InvalidArgument("generalized_quantile_loss: alpha must lie in (0, 1)");
  double out_w, in_w;
  detail::pinball_weights(alpha, weighting, out_w, in_w);
  double total = 0.0;
  for (std::size_t i = 0; i < band.size(); ++i) {
    if (!(band[i] > 0.0)) throw InvalidArgument("generalized_quantile_loss: band must be positive");
    if (!(r[i] >= 0.0)) throw InvalidArgument("generalized_quantile_loss: residuals must be >= 0");
    total += r[i] > band[i] ? out_w * (r[i] - band[i]) : in_w * (band[i] - r[i]);
  }
  return total / static_cast<double>(band.size());
}

/// Pinball objective on head outputs, in units where the band is
/// softplus(z) + 1e−8 and the targets are residuals divided by the model scale.
struct PinballObjective {
  double alpha = 0.1;
  QuantileWeighting weighting = QuantileWeighting::kOutOfBandHeavy;

  double operator()(const TrainingSample& s, std::span<const double> z,
                    std::span<double> dz) const {
    double out_w, in_w;
    detail::pinball_weights(alpha, weighting, out_w, in_w);
    const double inv_m = 1.0 / static_cast<double>(z.size());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double e = softplus(z[i]) + kQuantileFloor;
      const double r = s.targets[i];
      double de;
      if (r > e) {
        total += out_w * (r - e);
        de = -out_w;
      } else {
        total += in_w * (e - r);
        de = in_w;
      }
      dz[i] = de * sigmoid(z[i]) * inv_m;
    }
    return total * inv_m;
  }
};

/// Training samples whose targets are residual magnitudes against a frozen base
/// model. Quadrature weights are unused by the pinball objective.
inline std::vector<TrainingSample> residual_samples(const SpectralModel& base,
                                                    std::span<const FunctionPair> pairs,
                                                    int n_modes) {
  std::vector<TrainingSample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto r = residual_magnitudes(base, p);
    out.push_back({feature_matrix(p.input(), p.grid(), n_modes),
                   std::vector<double>(r.values().begin(), r.values().end()),
                   p.grid().trapezoid_weights()});
  }
  return out;
}

struct QuantileTrainResult {
  QuantileModel model;
  /// Mean generalized quantile loss in residual units: initial, then per epoch.
  std::vector<double> loss_trace;
  double final_loss = 0.0;
};

/// Fits E on prepared samples whose targets are raw residual magnitudes.
inline QuantileTrainResult train_quantile_on_samples(std::vector<TrainingSample> samples,
                                                     double alpha, const TrainConfig& cfg,
                                                     ModelShape shape = {},
                                                     QuantileWeighting weighting = QuantileWeighting::kOutOfBandHeavy) {
  cfg.validate();
  if (samples.empty()) throw InvalidArgument("train_quantile: no samples");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples)
    for (double r : s.targets) {
      sum += r;
      ++count;
    }
  const double scale = sum > 0.0 ? sum / static_cast<double>(count) : 1.0;
  for (auto& s : samples)
    for (double& r : s.targets) r /= scale;

  QuantileModel qm{SpectralModel::initialize(shape, cfg.seed), alpha, scale};
  qm.validate();
  const PinballObjective objective{alpha, weighting};
  auto trace = gradient_descent(qm.core, samples, objective, cfg);
  for (double& l : trace) l *= scale;  // pinball loss is positively homogeneous
  const double final_loss = scale * mean_loss(qm.core, samples, objective);
  return {std::move(qm), std::move(trace), final_loss};
}

/// Fits E on a train_quantile split against residuals of the frozen base model.
inline QuantileTrainResult train_quantile(const Dataset& dataset, const SpectralModel& base,
                                          double alpha, const TrainConfig& cfg,
                                          ModelShape shape = {},
                                          QuantileWeighting weighting = QuantileWeighting::kOutOfBandHeavy) {
  require_split(dataset, SplitTag::kTrainQuantile, "train_quantile");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("train_quantile: alpha must lie in (0, 1)");
  return train_quantile_on_samples(residual_samples(base, dataset.pairs(), shape.n_modes), alpha,
                                   cfg, shape, weighting);
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

/// Relative agreement with an absolute floor for tiny coordinates.
inline bool gradient_coordinate_agrees(double analytic, double numeric, double rel_tol = 1e-4,
                                       double abs_floor = 1e-8) {
  const double mag = std::max(std::abs(analytic), std::abs(numeric));
  if (mag < abs_floor) return std::abs(analytic - numeric) <= abs_floor;
  return std::abs(analytic - numeric) <= rel_tol * mag;
}

struct GradCheckReport {
  std::size_t compared = 0;
  std::size_t excluded = 0;  // perturbation moved a point across r = E
  std::size_t mismatched = 0;
  double max_relative_error = 0.0;
  bool ok() const { return mismatched == 0 && compared > 0; }
};

/// Analytic gradient of the mean pinball loss against central differences
/// with step h. Coordinates whose ±h perturbation flips any point between
/// in-band and out-of-band are skipped.
inline GradCheckReport pinball_grad_check(const QuantileModel& qm,
                                          std::span<const TrainingSample> batch_in,
                                          double h = 1e-5, double rel_tol = 1e-4,
                                          QuantileWeighting weighting = QuantileWeighting::kOutOfBandHeavy) {
  if (batch_in.empty()) throw InvalidArgument("pinball_grad_check: empty batch");
  std::vector<TrainingSample> batch(batch_in.begin(), batch_in.end());
  for (auto& s : batch)
    for (double& r : s.targets) r /= qm.scale;
  const PinballObjective obj{qm.alpha, weighting};
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});

  auto regimes = [&](const SpectralModel& m) {
    std::vector<char> in_band;
    for (const auto& s : batch) {
      const auto z = head_outputs(m, s.features);
      for (std::size_t i = 0; i < z.size(); ++i)
        in_band.push_back(s.targets[i] <= softplus(z[i]) + kQuantileFloor);
    }
    return in_band;
  };

  std::vector<double> analytic(qm.core.params().size());
  loss_and_grad(qm.core, batch, idx, obj, analytic);
  const auto base_regime = regimes(qm.core);

  GradCheckReport rep;
  SpectralModel probe = qm.core;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    const double orig = probe.params()[k];
    probe.mutable_params()[k] = orig + h;
    const double lp = mean_loss(probe, batch, obj);
    const bool flip_p = regimes(probe) != base_regime;
    probe.mutable_params()[k] = orig - h;
    const double lm = mean_loss(probe, batch, obj);
    const bool flip_m = regimes(probe) != base_regime;
    probe.mutable_params()[k] = orig;
    if (flip_p || flip_m) {
      ++rep.excluded;
      continue;
    }
    const double numeric = (lp - lm) / (2.0 * h);
    ++rep.compared;
    const double mag = std::max(std::abs(analytic[k]), std::abs(numeric));
    if (mag >= 1e-8) rep.max_relative_error = std::max(rep.max_relative_error, std::abs(analytic[k] - numeric) / mag);
    if (!gradient_coordinate_agrees(analytic[k], numeric, rel_tol)) ++rep.mismatched;
  }
  return rep;
}

/// Checkpoint helpers -------------------------------------------------------

inline std::string quantile_model_to_json(const QuantileModel& qm) {
  return JsonObjectWriter()
      .field("format", kModelFormat)
      .field("version", kModelVersion)
      .field("kind", "quantile")
      .field("n_modes", qm.core.n_modes())
      .field("width", qm.core.width())
      .field("alpha", qm.alpha)
      .field("scale", qm.scale)
      .raw("layers", layers_to_json(qm.core))
      .str();
}

inline QuantileModel quantile_model_from_json(const nlohmann::json& doc) {
  SpectralModel core = model_from_json(doc, "quantile");
  if (!doc.contains("alpha") || !doc["alpha"].is_number())
    throw ParseError("model checkpoint: quantile model needs \"alpha\"");
  QuantileModel qm{std::move(core), doc["alpha"].get<double>(),
                   doc.contains("scale") ? doc["scale"].get<double>() : 1.0};
  try {
    qm.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("model checkpoint: ") + e.what());
  }
  return qm;
}

}  // namespace uqno

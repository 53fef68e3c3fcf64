#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "errors.hpp"
#include "grid.hpp"
#include "random.hpp"
#include "text_format.hpp"

namespace uqno {

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

/// Number of entries in a feature vector for K retained modes.
constexpr std::size_t feature_dim(int n_modes) { return 3 * static_cast<std::size_t>(n_modes) + 1; }

/// Global part of the encoding: [c₀, c₁ˢ, c₁ᶜ, …, c_Kˢ, c_Kᶜ], where c₀ is the
/// trapezoid mean of a and c_kˢ, c_kᶜ are trapezoid projections 2∫a·sin(2πkx),
/// 2∫a·cos(2πkx). Works on any grid, so inputs at different resolutions of the
/// same function encode to (nearly) the same vector.
inline std::vector<double> spectral_coefficients(const GridFunction& a, int n_modes) {
  const Grid& g = a.grid();
  const auto w = g.trapezoid_weights();
  const double length = g[g.size() - 1] - g[0];
  std::vector<double> c(2 * static_cast<std::size_t>(n_modes) + 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) c[0] += w[i] * a[i];
  c[0] /= length;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (int k = 1; k <= n_modes; ++k) {
    double s = 0.0, co = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double phase = two_pi * k * g[i];
      s += w[i] * a[i] * std::sin(phase);
      co += w[i] * a[i] * std::cos(phase);
    }
    c[2 * k - 1] = 2.0 * s;
    c[2 * k] = 2.0 * co;
  }
  return c;
}

inline void append_positional(std::vector<double>& out, double x, int n_modes) {
  for (int k = 1; k <= n_modes; ++k) out.push_back(std::sin(k * std::numbers::pi * x));
}

/// Full encoding of (a, x): spectral coefficients of a followed by sin(kπx), k = 1..K.
inline std::vector<double> featurize(const GridFunction& a, double x, int n_modes) {
  auto f = spectral_coefficients(a, n_modes);
  append_positional(f, x, n_modes);
  return f;
}

/// Row-major (points × feature_dim) matrix of encodings for every query point.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

inline FeatureMatrix feature_matrix(const GridFunction& a, const Grid& query, int n_modes) {
  const auto coeffs = spectral_coefficients(a, n_modes);
  FeatureMatrix fm{query.size(), feature_dim(n_modes), {}};
  fm.data.reserve(fm.rows * fm.cols);
  std::vector<double> row;
  for (std::size_t i = 0; i < query.size(); ++i) {
    row = coeffs;
    append_positional(row, query[i], n_modes);
    fm.data.insert(fm.data.end(), row.begin(), row.end());
  }
  return fm;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct ModelShape {
  int n_modes = 8;
  int width = 32;

  std::size_t inputs() const { return feature_dim(n_modes); }
  std::size_t hidden() const { return static_cast<std::size_t>(width); }
  std::size_t parameter_count() const {
    return hidden() * inputs() + hidden() + hidden() * hidden() + hidden() + hidden() + 1;
  }
  void validate() const {
    if (n_modes < 1) throw InvalidArgument("model n_modes must be >= 1");
    if (width < 1) throw InvalidArgument("model width must be >= 1");
  }
  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Pointwise Fourier-feature MLP. For every query point x,
///   z(x) = w₃·tanh(W₂ tanh(W₁ φ(x, a) + b₁) + b₂) + b₃.
///
/// Parameters live in one flat vector laid out as W₁ (row-major, W×F), b₁,
/// W₂ (W×W), b₂, w₃ (W), b₃, so that gradients share the layout and updates
/// are plain vector arithmetic.
class SpectralModel {
 public:
  /// All-zero parameters.
  explicit SpectralModel(ModelShape shape = {})
      : shape_(shape), params_((shape.validate(), shape.parameter_count()), 0.0) {}

  SpectralModel(ModelShape shape, std::vector<double> params)
      : shape_(shape), params_(std::move(params)) {
    shape_.validate();
    if (params_.size() != shape_.parameter_count())
      throw InvalidArgument("parameter vector does not match model shape");
    for (double p : params_)
      if (!std::isfinite(p)) throw InvalidArgument("model parameters must be finite");
  }

  /// Every weight and bias drawn from uniform(−1/√fan_in, 1/√fan_in).
  static SpectralModel initialize(ModelShape shape, std::uint64_t seed) {
    SpectralModel m(shape);
    Rng rng = make_rng(seed);
    auto fill = [&](std::size_t offset, std::size_t count, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (std::size_t i = 0; i < count; ++i) m.params_[offset + i] = u(rng);
    };
    const std::size_t F = shape.inputs(), W = shape.hidden();
    fill(m.w1_offset(), W * F, F);
    fill(m.b1_offset(), W, F);
    fill(m.w2_offset(), W * W, W);
    fill(m.b2_offset(), W, W);
    fill(m.w3_offset(), W, W);
    fill(m.b3_offset(), 1, W);
    return m;
  }

  const ModelShape& shape() const noexcept { return shape_; }
  int n_modes() const noexcept { return shape_.n_modes; }
  int width() const noexcept { return shape_.width; }
  std::span<const double> params() const noexcept { return params_; }
  std::span<double> mutable_params() noexcept { return params_; }

  std::size_t w1_offset() const { return 0; }
  std::size_t b1_offset() const { return shape_.hidden() * shape_.inputs(); }
  std::size_t w2_offset() const { return b1_offset() + shape_.hidden(); }
  std::size_t b2_offset() const { return w2_offset() + shape_.hidden() * shape_.hidden(); }
  std::size_t w3_offset() const { return b2_offset() + shape_.hidden(); }
  std::size_t b3_offset() const { return w3_offset() + shape_.hidden(); }

  double head_bias() const { return params_[b3_offset()]; }

  friend bool operator==(const SpectralModel&, const SpectralModel&) = default;

 private:
  ModelShape shape_;
  std::vector<double> params_;
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

}  // namespace detail

/// Hidden activations of every point of one function, kept for the backward pass.
struct Activations {
  detail::RowMatrix h1;  // points × W
  detail::RowMatrix h2;  // points × W
  Eigen::VectorXd z;     // points
};

/// Evaluates all rows of a feature matrix at once.
inline void forward_batch(const SpectralModel& model, const FeatureMatrix& fm, Activations& act) {
  using namespace detail;
  const auto F = static_cast<Eigen::Index>(model.shape().inputs());
  const auto W = static_cast<Eigen::Index>(model.shape().hidden());
  const auto m = static_cast<Eigen::Index>(fm.rows);
  const double* p = model.params().data();
  ConstRowMap phi(fm.data.data(), m, F);
  ConstRowMap w1(p + model.w1_offset(), W, F);
  ConstVecMap b1(p + model.b1_offset(), W);
  ConstRowMap w2(p + model.w2_offset(), W, W);
  ConstVecMap b2(p + model.b2_offset(), W);
  ConstVecMap w3(p + model.w3_offset(), W);
  const double b3 = p[model.b3_offset()];

  act.h1.noalias() = phi * w1.transpose();
  act.h1.rowwise() += b1.transpose();
  act.h1 = act.h1.array().tanh().matrix();
  act.h2.noalias() = act.h1 * w2.transpose();
  act.h2.rowwise() += b2.transpose();
  act.h2 = act.h2.array().tanh().matrix();
  act.z.noalias() = act.h2 * w3;
  act.z.array() += b3;
}

/// Accumulates Σᵢ dzᵢ·∂zᵢ/∂θ into grad.
inline void backward_batch(const SpectralModel& model, const FeatureMatrix& fm,
                           const Activations& act, std::span<const double> dz,
                           std::span<double> grad) {
  using namespace detail;
  const auto F = static_cast<Eigen::Index>(model.shape().inputs());
  const auto W = static_cast<Eigen::Index>(model.shape().hidden());
  const auto m = static_cast<Eigen::Index>(fm.rows);
  const double* p = model.params().data();
  ConstRowMap phi(fm.data.data(), m, F);
  ConstRowMap w2(p + model.w2_offset(), W, W);
  ConstVecMap w3(p + model.w3_offset(), W);
  ConstVecMap g(dz.data(), m);

  double* out = grad.data();
  RowMap g_w1(out + model.w1_offset(), W, F);
  VecMap g_b1(out + model.b1_offset(), W);
  RowMap g_w2(out + model.w2_offset(), W, W);
  VecMap g_b2(out + model.b2_offset(), W);
  VecMap g_w3(out + model.w3_offset(), W);

  out[model.b3_offset()] += g.sum();
  g_w3.noalias() += act.h2.transpose() * g;
  const RowMatrix d2 =
      ((g * w3.transpose()).array() * (1.0 - act.h2.array().square())).matrix();
  g_w2.noalias() += d2.transpose() * act.h1;
  g_b2.noalias() += d2.colwise().sum().transpose();
  const RowMatrix d1 = ((d2 * w2).array() * (1.0 - act.h1.array().square())).matrix();
  g_w1.noalias() += d1.transpose() * phi;
  g_b1.noalias() += d1.colwise().sum().transpose();
}

/// Raw head outputs z at every row of a feature matrix.
inline std::vector<double> head_outputs(const SpectralModel& model, const FeatureMatrix& fm) {
  Activations act;
  forward_batch(model, fm, act);
  return {act.z.data(), act.z.data() + act.z.size()};
}

/// û = Ĝ(a) evaluated at every query point.
inline GridFunction forward(const SpectralModel& model, const GridFunction& a,
                            const Grid& query_grid) {
  return GridFunction(query_grid,
                      head_outputs(model, feature_matrix(a, query_grid, model.n_modes())));
}

// ---------------------------------------------------------------------------
// Objectives and training
// ---------------------------------------------------------------------------

/// One function's worth of training data: encodings, per-point targets and
/// quadrature weights.
struct TrainingSample {
  FeatureMatrix features;
  std::vector<double> targets;
  std::vector<double> weights;
};

inline constexpr double kRelativeLossEpsilon = 1e-12;

/// ‖û − u‖₂ / (‖u‖₂ + ε) with trapezoid norms on the shared grid.
inline double relative_l2_loss(const GridFunction& u_hat, const GridFunction& u) {
  if (!(u_hat.grid() == u.grid())) throw InvalidArgument("relative_l2_loss: grid mismatch");
  const auto w = u.grid().trapezoid_weights();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u_hat[i] - u[i];
    num += w[i] * d * d;
    den += w[i] * u[i] * u[i];
  }
  return std::sqrt(num) / (std::sqrt(den) + kRelativeLossEpsilon);
}

/// Relative L2 objective on head outputs. Writes ∂L/∂zᵢ into dz. At û = u the
/// norm is not differentiable; the zero subgradient is returned there.
struct RelativeL2Objective {
  double operator()(const TrainingSample& s, std::span<const double> z,
                    std::span<double> dz) const {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double d = z[i] - s.targets[i];
      num += s.weights[i] * d * d;
      den += s.weights[i] * s.targets[i] * s.targets[i];
    }
    const double nrm = std::sqrt(num);
    const double scale = std::sqrt(den) + kRelativeLossEpsilon;
    for (std::size_t i = 0; i < z.size(); ++i)
      dz[i] = nrm > 0.0 ? s.weights[i] * (z[i] - s.targets[i]) / (nrm * scale) : 0.0;
    return nrm / scale;
  }
};

/// Mean objective over the selected samples and, if grad is nonempty, its exact
/// gradient with respect to every parameter. Samples are accumulated in the
/// given order.
template <class Objective>
double loss_and_grad(const SpectralModel& model, std::span<const TrainingSample> samples,
                     std::span<const std::size_t> batch, const Objective& objective,
                     std::span<double> grad) {
  if (batch.empty()) throw InvalidArgument("loss_and_grad: empty batch");
  const bool want_grad = !grad.empty();
  if (want_grad) std::fill(grad.begin(), grad.end(), 0.0);
  Activations act;
  std::vector<double> dz;
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t idx : batch) {
    const TrainingSample& s = samples[idx];
    forward_batch(model, s.features, act);
    dz.resize(s.features.rows);
    total += objective(s, std::span<const double>(act.z.data(), dz.size()), dz);
    if (want_grad) {
      for (double& d : dz) d *= inv_n;
      backward_batch(model, s.features, act, dz, grad);
    }
  }
  return total * inv_n;
}

template <class Objective>
double mean_loss(const SpectralModel& model, std::span<const TrainingSample> samples,
                 const Objective& objective) {
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return loss_and_grad(model, samples, all, objective, {});
}

struct TrainConfig {
  double learning_rate = 0.05;
  int epochs = 300;
  int batch_size = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw InvalidArgument("learning_rate must be a positive finite number");
    if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  }
};

/// Fixed-step mini-batch gradient descent. Each epoch visits the samples in a
/// seeded shuffled order. The returned trace holds the full-data loss before
/// training followed by, for every epoch, the sample-weighted mean of the
/// mini-batch losses seen during that epoch.
template <class Objective>
std::vector<double> gradient_descent(SpectralModel& model, std::span<const TrainingSample> samples,
                                     const Objective& objective, const TrainConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw InvalidArgument("gradient_descent: no training samples");
  std::vector<double> trace{mean_loss(model, samples, objective)};
  if (!std::isfinite(trace.back())) throw TrainingDiverged("training diverged at epoch 0", 0);
  Rng rng = make_rng(derive_seed(cfg.seed, 0x7261696e));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(model.params().size());
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t len = std::min(bs, order.size() - start);
      const double batch_loss =
          loss_and_grad(model, samples, std::span<const std::size_t>(order).subspan(start, len),
                        objective, grad);
      epoch_loss += batch_loss * static_cast<double>(len);
      auto p = model.mutable_params();
      for (std::size_t k = 0; k < p.size(); ++k) p[k] -= cfg.learning_rate * grad[k];
    }
    epoch_loss /= static_cast<double>(order.size());
    const auto p = model.params();
    if (!std::isfinite(epoch_loss) ||
        !std::all_of(p.begin(), p.end(), [](double v) { return std::isfinite(v); }))
      throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch), epoch);
    trace.push_back(epoch_loss);
  }
  return trace;
}

inline TrainingSample base_sample(const FunctionPair& pair, int n_modes) {
  return {feature_matrix(pair.input(), pair.grid(), n_modes),
          std::vector<double>(pair.output().values().begin(), pair.output().values().end()),
          pair.grid().trapezoid_weights()};
}

inline std::vector<TrainingSample> base_samples(std::span<const FunctionPair> pairs, int n_modes) {
  std::vector<TrainingSample> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(base_sample(p, n_modes));
  return out;
}

struct Gradient {
  double loss = 0.0;
  std::vector<double> values;
};

/// Exact gradient of the mean relative L2 loss over a batch of pairs.
inline Gradient grad(const SpectralModel& model, std::span<const FunctionPair> batch) {
  const auto samples = base_samples(batch, model.n_modes());
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Gradient g{0.0, std::vector<double>(model.params().size())};
  g.loss = loss_and_grad(model, samples, idx, RelativeL2Objective{}, g.values);
  return g;
}

struct BaseTrainResult {
  SpectralModel model;
  std::vector<double> loss_trace;
  /// Mean relative L2 loss of the returned model over the whole training set.
  double final_loss = 0.0;
};

/// Fits Ĝ on a train_base split with the relative L2 objective.
inline BaseTrainResult train_base(const Dataset& dataset, const TrainConfig& cfg,
                                  ModelShape shape = {}) {
  require_split(dataset, SplitTag::kTrainBase, "train_base");
  cfg.validate();
  SpectralModel model = SpectralModel::initialize(shape, cfg.seed);
  const auto samples = base_samples(dataset.pairs(), shape.n_modes);
  auto trace = gradient_descent(model, samples, RelativeL2Objective{}, cfg);
  const double final_loss = mean_loss(model, samples, RelativeL2Objective{});
  return {std::move(model), std::move(trace), final_loss};
}

/// r(xᵢ) = |u(xᵢ) − Ĝ(a)(xᵢ)| on the pair's grid.
inline GridFunction residual_magnitudes(const SpectralModel& model, const FunctionPair& pair) {
  const GridFunction u_hat = forward(model, pair.input(), pair.grid());
  std::vector<double> r(pair.grid().size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::abs(pair.output()[i] - u_hat[i]);
  return GridFunction(pair.grid(), std::move(r));
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr const char* kModelFormat = "uqno-model";
inline constexpr int kModelVersion = 1;

/// The "layers" array: three {"w": rows, "b": vector} objects.
inline std::string layers_to_json(const SpectralModel& model) {
  const std::size_t F = model.shape().inputs(), W = model.shape().hidden();
  const auto p = model.params();
  auto layer = [&](std::size_t w_off, std::size_t rows, std::size_t cols, std::size_t b_off) {
    std::string s = "{\"w\":[";
    for (std::size_t r = 0; r < rows; ++r) {
      if (r) s += ',';
      append_real_array(s, p.subspan(w_off + r * cols, cols));
    }
    s += "],\"b\":";
    append_real_array(s, p.subspan(b_off, rows));
    s += '}';
    return s;
  };
  return "[" + layer(model.w1_offset(), W, F, model.b1_offset()) + "," +
         layer(model.w2_offset(), W, W, model.b2_offset()) + "," +
         layer(model.w3_offset(), 1, W, model.b3_offset()) + "]";
}

inline std::string base_model_to_json(const SpectralModel& model) {
  return JsonObjectWriter()
      .field("format", kModelFormat)
      .field("version", kModelVersion)
      .field("kind", "base")
      .field("n_modes", model.n_modes())
      .field("width", model.width())
      .raw("layers", layers_to_json(model))
      .str();
}

/// Rebuilds the core model from a checkpoint document of the expected kind.
inline SpectralModel model_from_json(const nlohmann::json& doc, const std::string& kind) {
  auto fail = [](const std::string& why) -> void { throw ParseError("model checkpoint: " + why); };
  if (!doc.is_object() || doc.value("format", std::string()) != kModelFormat)
    fail("format must be \"uqno-model\"");
  if (!doc.contains("version") || doc["version"] != kModelVersion) fail("unsupported version");
  if (doc.value("kind", std::string()) != kind)
    fail("expected kind \"" + kind + "\", got \"" + doc.value("kind", std::string()) + "\"");
  if (!doc.contains("n_modes") || !doc["n_modes"].is_number_integer()) fail("missing n_modes");
  if (!doc.contains("width") || !doc["width"].is_number_integer()) fail("missing width");
  const ModelShape shape{doc["n_modes"].get<int>(), doc["width"].get<int>()};
  try {
    shape.validate();
  } catch (const InvalidArgument& e) {
    fail(e.what());
  }
  if (!doc.contains("layers") || !doc["layers"].is_array() || doc["layers"].size() != 3)
    fail("expected three layers");
  const std::size_t F = shape.inputs(), W = shape.hidden();
  const std::size_t rows[3] = {W, W, 1}, cols[3] = {F, W, W};
  std::vector<double> params;
  params.reserve(shape.parameter_count());
  for (int l = 0; l < 3; ++l) {
    const auto& layer = doc["layers"][l];
    const std::string tag = "layer " + std::to_string(l);
    if (!layer.contains("w") || !layer["w"].is_array() || layer["w"].size() != rows[l])
      fail(tag + ": weight matrix has wrong number of rows");
    for (const auto& row : layer["w"]) {
      if (!row.is_array() || row.size() != cols[l]) fail(tag + ": weight row has wrong length");
      for (const auto& v : row) {
        if (!v.is_number()) fail(tag + ": non-numeric weight");
        params.push_back(v.get<double>());
      }
    }
    if (!layer.contains("b") || !layer["b"].is_array() || layer["b"].size() != rows[l])
      fail(tag + ": bias has wrong length");
    for (const auto& v : layer["b"]) {
      if (!v.is_number()) fail(tag + ": non-numeric bias");
      params.push_back(v.get<double>());
    }
  }
  // Flat layout interleaves as W₁,b₁,W₂,b₂,w₃,b₃, which is exactly the read order.
  return SpectralModel(shape, std::move(params));
}

}  // namespace uqno
